"""Initial shuttle speed from two post-impact frames of the lateral view.

Events are accumulated into 1 ms frames starting 30 ms and 32 ms after
impact: late enough for the shuttle to have flipped cork-first and to be
clear of the racket, early enough that drag has not eaten much speed.  In
each frame the tip position is measured as the centroid of the gated
positive pixels: the shuttle silhouette is the same in both frames (same
attitude, same speed), so the centroid moves exactly with the tip while
averaging the per-pixel noise down by sqrt(N).  That averaging is the
point: one pixel of displacement error at 3.47 mm/px over the 2 ms
baseline is about 1.74 m/s.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .events import US_PER_MS, Calibration, EventStream, PolarityImage, accumulate
from .impact_time import ImpactConfig, track_shuttle
from .events import packetize

logger = logging.getLogger(__name__)


class TipNotFoundError(RuntimeError):
    """No positive pixels near the predicted shuttle position."""


# The gate is sized for prediction slack, not for the silhouette: at 80 px
# it admits background noise whose lever arm on the centroid can reach a
# third of a pixel per event.  Points this far from the robust centre of
# the gated set cannot belong to the band (its long half-axis stays under
# ~30 px at any plausible smash speed) and are discarded.
_TRIM_RADIUS_PX = 40.0


@dataclass
class SpeedConfig:
    offset1_ms: float = 30.0  # first frame start, after impact
    offset2_ms: float = 32.0  # second frame start
    accum_ms: float = 1.0  # frame accumulation window
    gate_px: float = 80.0  # search radius around the predicted position

    def __post_init__(self) -> None:
        if self.offset2_ms <= self.offset1_ms:
            raise ValueError("second frame must start after the first")
        if self.accum_ms <= 0 or self.gate_px <= 0:
            raise ValueError("accumulation window and gate must be positive")


@dataclass(frozen=True)
class SpeedResult:
    speed_m_s: float
    tip_30: tuple[float, float]  # px, first frame
    tip_32: tuple[float, float]  # px, second frame
    displacement_px: float


def tip_in_frame(
    image: PolarityImage,
    predicted: tuple[float, float],
    gate_px: float,
) -> tuple[float, float]:
    """Shuttle tip position in one accumulation frame.

    Event-count-weighted centroid of the positive pixels within ``gate_px``
    of the prediction.  Between two frames of an unchanged silhouette the
    centroid displaces exactly as the tip does, which is all the speed
    estimate consumes.  The weighting matters: each pixel the silhouette
    newly covers fires once, so the weighted centroid averages over events
    and sensor scatter beats down by sqrt(N); an unweighted pixel mask adds
    a membership coin-flip along the whole outline instead.
    """
    ys, xs = np.nonzero(image.counts > 0)
    if not len(xs):
        raise TipNotFoundError("frame holds no positive pixels")
    d2 = (xs - predicted[0]) ** 2 + (ys - predicted[1]) ** 2
    keep = d2 <= gate_px * gate_px
    if not keep.any():
        raise TipNotFoundError(
            f"no positive pixels within {gate_px:.0f} px of the prediction"
        )
    kx = xs[keep].astype(np.float64)
    ky = ys[keep].astype(np.float64)
    kw = image.counts[ys[keep], xs[keep]].astype(np.float64)
    mx, my = np.median(kx), np.median(ky)
    near = (kx - mx) ** 2 + (ky - my) ** 2 <= _TRIM_RADIUS_PX**2
    if near.any():
        kx, ky, kw = kx[near], ky[near], kw[near]
    return (
        float(np.average(kx, weights=kw)),
        float(np.average(ky, weights=kw)),
    )


def _outbound_state(
    stream: EventStream, t_impact: float, cfg: SpeedConfig
) -> tuple[tuple[float, float], tuple[float, float]]:
    """Impact position and outbound velocity (px/ms) recovered from a short
    track bracketing the impact; used when the caller has no trajectory fit
    to seed from."""
    lo, hi = np.searchsorted(
        stream.t,
        [int(t_impact - 6 * US_PER_MS), int(t_impact + 14 * US_PER_MS)],
    )
    if hi - lo == 0:
        raise TipNotFoundError("no events around the impact time")
    sub = EventStream(
        view=stream.view,
        width=stream.width,
        height=stream.height,
        t=stream.t[lo:hi],
        x=stream.x[lo:hi],
        y=stream.y[lo:hi],
        p=stream.p[lo:hi],
    )
    track = track_shuttle(packetize(sub), ImpactConfig())
    post = [p for p in track if p.t > t_impact + 2 * US_PER_MS]
    if len(post) < 3:
        raise TipNotFoundError("outbound track too short to estimate direction")
    t_ms = np.array([(p.t - t_impact) / US_PER_MS for p in post])
    vx = np.polyfit(t_ms, [p.x for p in post], 1)
    vy = np.polyfit(t_ms, [p.y for p in post], 1)
    return (float(vx[1]), float(vy[1])), (float(vx[0]), float(vy[0]))


def estimate_speed(
    stream: EventStream,
    t_impact: float,
    cal: Calibration,
    cfg: SpeedConfig | None = None,
    impact_xy: tuple[float, float] | None = None,
    velocity_px_ms: tuple[float, float] | None = None,
) -> SpeedResult:
    """Initial speed in m/s from the lateral stream.

    ``impact_xy`` and ``velocity_px_ms`` seed the tip prediction; the
    pipeline passes them from the impact-time fit, standalone use recovers
    them from a short track around the impact.
    """
    cfg = cfg or SpeedConfig()
    if impact_xy is None or velocity_px_ms is None:
        impact_xy, velocity_px_ms = _outbound_state(stream, t_impact, cfg)
    if math.hypot(*velocity_px_ms) == 0:
        raise ValueError("outbound velocity must be non-zero")

    baseline_ms = cfg.offset2_ms - cfg.offset1_ms
    accum_us = round(cfg.accum_ms * US_PER_MS)
    tips = []
    for offset in (cfg.offset1_ms, cfg.offset2_ms):
        t0 = int(round(t_impact + offset * US_PER_MS))
        frame = accumulate(stream, t0, accum_us, polarity=1)
        if not tips:
            mid = offset + cfg.accum_ms / 2
            pred = (
                impact_xy[0] + velocity_px_ms[0] * mid,
                impact_xy[1] + velocity_px_ms[1] * mid,
            )
        else:
            pred = (
                tips[0][0] + velocity_px_ms[0] * baseline_ms,
                tips[0][1] + velocity_px_ms[1] * baseline_ms,
            )
        tips.append(tip_in_frame(frame, pred, cfg.gate_px))
    dx = tips[1][0] - tips[0][0]
    dy = tips[1][1] - tips[0][1]
    disp = math.hypot(dx, dy)
    speed = disp * cal.lateral_mm_per_px / baseline_ms  # mm/ms == m/s
    logger.debug("tip displacement %.2f px over %.1f ms -> %.2f m/s",
                 disp, baseline_ms, speed)
    return SpeedResult(
        speed_m_s=speed,
        tip_30=tips[0],
        tip_32=tips[1],
        displacement_px=disp,
    )
