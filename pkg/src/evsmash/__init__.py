"""Event-camera analysis of badminton smashes: swing detection, impact
timing and location, outbound shuttle speed, and method-agreement
statistics, plus a deterministic scene synthesizer for validation."""

from .agreement import (
    AgreementResult,
    ConfidenceInterval,
    PairedMeasurements,
    bland_altman,
    correlation_pvalue,
    proportional_bias,
)
from .config import PipelineConfig, load_config
from .events import (
    PACKET_US,
    Calibration,
    Event,
    EventPacket,
    EventStream,
    PolarityImage,
    View,
    accumulate,
    packet_counts,
    packetize,
    rear_calibration_from_ellipse,
)
from .impact_time import (
    ImpactConfig,
    ImpactTime,
    NoInflectionError,
    UntrackableError,
    detect_inflection,
    estimate_impact_time,
    track_shuttle,
)
from .io import ParseError, parse_events, read_stream, serialize_events, \
    write_stream
from .location import (
    EllipseParams,
    FaceCoordinates,
    LocateConfig,
    LocationResult,
    LocationStatus,
    fit_ellipse,
    fit_shaft,
    locate_impact,
)
from .pipeline import (
    BatchReport,
    Manifest,
    TrialReport,
    analyze_trial,
    load_manifest,
    run_batch,
)
from .speed import SpeedConfig, SpeedResult, TipNotFoundError, estimate_speed
from .swing import (
    DetectorConfig,
    RateSeries,
    SwingInterval,
    calibrate_thresholds,
    detect_swing,
    sliding_stats,
)
from .synth import (
    BatchSpec,
    GroundTruth,
    SceneSpec,
    generate_failure_trial,
    generate_trial,
    write_batch,
)

__version__ = "0.1.0"
