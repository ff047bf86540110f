"""Per-trial analysis chain and batch orchestration.

A trial is a pair of recordings (lateral + rear).  The chain is: swing
detection on lateral packet rates (with auto-calibrated thresholds unless
the config pins them), impact timing from the tracked shuttle's broken
x-t trajectory, impact location on the rear view at that instant, and
outbound speed from two 1 ms lateral frames.  Later stages run even when
the location stage reports a classified failure; a stage error only stops
the stages that depend on its output.

Batch runs read a manifest, write one JSON report per trial plus a summary
with per-participant bookkeeping and, where reference values exist,
Bland-Altman agreement statistics and plot-ready scatter data.  Report
files separate a deterministic ``result`` payload from a ``timing``
section, so re-running a batch yields byte-identical results.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io as evio
from .agreement import PairedMeasurements, bland_altman, proportional_bias
from .config import PipelineConfig
from .events import Calibration, EventStream, View
from .impact_time import ImpactTime, NoInflectionError, UntrackableError, \
    estimate_impact_time
from .location import LocationResult, LocationStatus, locate_impact
from .speed import TipNotFoundError, estimate_speed
from .swing import DetectorConfig, RateSeries, SwingInterval, \
    calibrate_thresholds, detect_swing


@dataclass
class TrialReport:
    trial_id: str
    participant: str = ""
    swing_onset_us: int | None = None
    swing_end_us: int | None = None
    swing_mean_threshold: float | None = None
    swing_var_threshold: float | None = None
    t_impact_us: float | None = None
    impact_trigger_rel_ms: float | None = None
    breakpoint_residual_px: float | None = None
    pre_slope_px_ms: float | None = None
    post_slope_px_ms: float | None = None
    location_status: str | None = None
    impact_u_mm: float | None = None
    impact_v_mm: float | None = None
    tilt_corrected: bool | None = None
    rear_mm_per_px: float | None = None
    speed_m_s: float | None = None
    failure_stage: str | None = None
    failure_reason: str | None = None

    @property
    def analyzed(self) -> bool:
        """Impact time found and the rear view classified."""
        return self.t_impact_us is not None and self.location_status is not None

    def to_result_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}


def resolve_thresholds(rates: RateSeries, cfg: DetectorConfig) -> DetectorConfig:
    """Fill missing detector thresholds from the recording's leading
    quiescent segment."""
    if cfg.mean_threshold is not None and cfg.var_threshold is not None:
        return cfg
    n = min(int(round(cfg.quiescent_ms * 1000 / 500)), len(rates.counts))
    quiescent = RateSeries(t0=rates.t0, counts=rates.counts[:n])
    return calibrate_thresholds(quiescent, cfg)


def select_interval(
    intervals: list[SwingInterval], trigger_t: int | None
) -> SwingInterval | None:
    """The swing to analyze: nearest the trigger when one is recorded,
    otherwise the first."""
    if not intervals:
        return None
    if trigger_t is None:
        return intervals[0]

    def dist(iv: SwingInterval) -> float:
        if iv.onset_t <= trigger_t <= iv.end_t:
            return 0.0
        return min(abs(iv.onset_t - trigger_t), abs(iv.end_t - trigger_t))

    return min(intervals, key=dist)


def analyze_trial(
    lateral: EventStream,
    rear: EventStream,
    cal: Calibration,
    cfg: PipelineConfig | None = None,
    trial_id: str = "trial",
    participant: str = "",
    ransac_seed: int | None = None,
) -> TrialReport:
    cfg = cfg or PipelineConfig()
    report = TrialReport(trial_id=trial_id, participant=participant)
    if lateral.view is not View.LATERAL:
        raise ValueError("first stream must be the lateral view")

    # Swing detection.
    try:
        rates = RateSeries.from_stream(lateral)
        swing_cfg = resolve_thresholds(rates, cfg.swing)
        report.swing_mean_threshold = swing_cfg.mean_threshold
        report.swing_var_threshold = swing_cfg.var_threshold
        interval = select_interval(detect_swing(rates, swing_cfg),
                                   lateral.trigger_t)
    except ValueError as exc:
        report.failure_stage = "swing"
        report.failure_reason = str(exc)
        return report
    if interval is None:
        report.failure_stage = "swing"
        report.failure_reason = "no swing interval detected"
        return report
    report.swing_onset_us = interval.onset_t
    report.swing_end_us = interval.end_t

    # Impact time.
    try:
        imp = estimate_impact_time(lateral, interval, cfg.impact)
    except (UntrackableError, NoInflectionError) as exc:
        report.failure_stage = "impact_time"
        report.failure_reason = str(exc)
        return report
    report.t_impact_us = imp.t_impact
    report.impact_trigger_rel_ms = imp.trigger_rel_ms
    report.breakpoint_residual_px = imp.breakpoint_residual
    report.pre_slope_px_ms = imp.pre_slope
    report.post_slope_px_ms = imp.post_slope

    # Impact location on the rear view.  A non-Success status is a
    # classified outcome, not a pipeline error.
    locate_cfg = cfg.locate
    if ransac_seed is not None:
        locate_cfg = dataclasses.replace(locate_cfg, ransac_seed=ransac_seed)
    try:
        loc = locate_impact(rear, imp.t_impact, cal, locate_cfg)
    except ValueError as exc:
        report.failure_stage = "locate"
        report.failure_reason = str(exc)
        loc = None
    if loc is not None:
        report.location_status = loc.status.value
        report.tilt_corrected = loc.tilt_corrected
        report.rear_mm_per_px = loc.rear_mm_per_px
        if loc.status is LocationStatus.SUCCESS and loc.coords is not None:
            report.impact_u_mm = loc.coords.u_mm
            report.impact_v_mm = loc.coords.v_mm

    # Outbound speed.
    try:
        sp = estimate_speed(
            lateral,
            imp.t_impact,
            cal,
            cfg.speed,
            impact_xy=imp.impact_xy,
            velocity_px_ms=imp.post_velocity,
        )
        report.speed_m_s = sp.speed_m_s
    except (TipNotFoundError, UntrackableError, ValueError) as exc:
        if report.failure_stage is None:
            report.failure_stage = "speed"
            report.failure_reason = str(exc)
    return report


@dataclass(frozen=True)
class TrialEntry:
    trial_id: str
    participant: str
    lateral: Path
    rear: Path
    ransac_seed: int | None = None
    reference: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Manifest:
    calibration: Calibration
    trials: tuple[TrialEntry, ...]
    root: Path


_TRIAL_KEYS = {"trial_id", "participant", "lateral", "rear", "ransac_seed",
               "reference"}


def load_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    with open(path) as fh:
        raw = json.load(fh)
    unknown = set(raw) - {"calibration", "trials"}
    if unknown:
        raise ValueError(f"unknown manifest key(s): {sorted(unknown)}")
    cal_raw = raw.get("calibration", {})
    if "lateral_mm_per_px" not in cal_raw:
        raise ValueError("manifest calibration needs lateral_mm_per_px")
    cal = Calibration(
        lateral_mm_per_px=float(cal_raw["lateral_mm_per_px"]),
        rear_mm_per_px=(
            None
            if cal_raw.get("rear_mm_per_px") is None
            else float(cal_raw["rear_mm_per_px"])
        ),
    )
    trials = []
    for i, entry in enumerate(raw.get("trials", [])):
        unknown = set(entry) - _TRIAL_KEYS
        if unknown:
            raise ValueError(
                f"unknown key(s) in manifest trial {i}: {sorted(unknown)}"
            )
        for key in ("trial_id", "lateral", "rear"):
            if key not in entry:
                raise ValueError(f"manifest trial {i} lacks {key!r}")
        trials.append(
            TrialEntry(
                trial_id=str(entry["trial_id"]),
                participant=str(entry.get("participant", "")),
                lateral=path.parent / entry["lateral"],
                rear=path.parent / entry["rear"],
                ransac_seed=(
                    None
                    if entry.get("ransac_seed") is None
                    else int(entry["ransac_seed"])
                ),
                reference=dict(entry.get("reference", {})),
            )
        )
    if len({t.trial_id for t in trials}) != len(trials):
        raise ValueError("duplicate trial_id in manifest")
    return Manifest(calibration=cal, trials=tuple(trials), root=path.parent)


# measure name -> (report attribute, reference key)
AGREEMENT_MEASURES = {
    "impact_time_ms": ("impact_trigger_rel_ms", "impact_time_ms"),
    "impact_u_mm": ("impact_u_mm", "u_mm"),
    "impact_v_mm": ("impact_v_mm", "v_mm"),
    "speed_m_s": ("speed_m_s", "speed_m_s"),
}


@dataclass
class BatchReport:
    reports: list[TrialReport]
    participants: dict
    agreement: dict
    n_analyzed: int

    def to_result_dict(self) -> dict:
        return {
            "n_trials": len(self.reports),
            "n_analyzed": self.n_analyzed,
            "participants": self.participants,
            "agreement": self.agreement,
            "trials": [r.to_result_dict() for r in self.reports],
        }


def _participant_bookkeeping(reports: list[TrialReport]) -> dict:
    out: dict[str, dict] = {}
    for rep in reports:
        entry = out.setdefault(
            rep.participant or "?",
            {"n_trials": 0, "n_analyzed": 0, "n_success": 0, "statuses": {}},
        )
        entry["n_trials"] += 1
        if rep.analyzed:
            entry["n_analyzed"] += 1
        status = rep.location_status or f"error:{rep.failure_stage}"
        entry["statuses"][status] = entry["statuses"].get(status, 0) + 1
        if rep.location_status == LocationStatus.SUCCESS.value:
            entry["n_success"] += 1
    return out


def compute_agreement(
    reports: list[TrialReport], entries: list[TrialEntry]
) -> tuple[dict, dict]:
    """Agreement stats per measure plus plot-ready (mean, diff) pairs."""
    refs = {e.trial_id: e.reference for e in entries}
    agreement: dict[str, dict] = {}
    plot_data: dict[str, list] = {}
    for measure, (attr, ref_key) in AGREEMENT_MEASURES.items():
        ev, ref, who = [], [], []
        for rep in reports:
            val = getattr(rep, attr)
            ref_val = refs.get(rep.trial_id, {}).get(ref_key)
            if val is None or ref_val is None:
                continue
            ev.append(float(val))
            ref.append(float(ref_val))
            who.append(rep.participant or "?")
        if len(ev) < 3:
            continue
        pairs = PairedMeasurements(
            ev=np.array(ev), ref=np.array(ref), participant=np.array(who)
        )
        result = bland_altman(pairs)
        trend = proportional_bias(pairs)
        agreement[measure] = {
            "bland_altman": result.to_json_dict(),
            "proportional_bias": {
                "slope": trend.slope,
                "r": trend.r,
                "p_value": trend.p_value,
            },
        }
        plot_data[measure] = list(zip(pairs.means.tolist(),
                                      pairs.diffs.tolist()))
    return agreement, plot_data


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def run_batch(
    manifest: Manifest,
    cfg: PipelineConfig | None = None,
    out_dir: str | Path | None = None,
    progress: bool = False,
) -> BatchReport:
    cfg = cfg or PipelineConfig()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "trials").mkdir(parents=True, exist_ok=True)

    reports: list[TrialReport] = []
    for entry in manifest.trials:
        tic = time.perf_counter()
        lateral = evio.read_stream(entry.lateral)
        rear = evio.read_stream(entry.rear)
        read_s = time.perf_counter() - tic
        tic = time.perf_counter()
        report = analyze_trial(
            lateral,
            rear,
            manifest.calibration,
            cfg,
            trial_id=entry.trial_id,
            participant=entry.participant,
            ransac_seed=entry.ransac_seed,
        )
        analyze_s = time.perf_counter() - tic
        reports.append(report)
        if progress:
            status = report.location_status or f"error:{report.failure_stage}"
            print(f"{entry.trial_id}: {status} ({analyze_s:.2f}s)")
        if out is not None:
            _write_json(
                out / "trials" / f"{entry.trial_id}.json",
                {
                    "result": report.to_result_dict(),
                    "timing": {"read_s": read_s, "analyze_s": analyze_s},
                },
            )

    agreement, plot_data = compute_agreement(reports, list(manifest.trials))
    batch = BatchReport(
        reports=reports,
        participants=_participant_bookkeeping(reports),
        agreement=agreement,
        n_analyzed=sum(r.analyzed for r in reports),
    )
    if out is not None:
        for measure, rows in plot_data.items():
            lines = ["mean,diff"]
            lines += [f"{m!r},{d!r}" for m, d in rows]
            (out / f"agreement_{measure}.csv").write_text("\n".join(lines) + "\n")
            ba = agreement[measure]["bland_altman"]
            _write_json(
                out / f"agreement_{measure}_lines.json",
                {
                    "bias": ba["bias"],
                    "loa_lower": ba["loa_lower"],
                    "loa_upper": ba["loa_upper"],
                },
            )
        _write_json(
            out / "summary.json",
            {"result": batch.to_result_dict(), "timing": {}},
        )
    return batch
