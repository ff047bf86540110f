"""Impact-time estimation from the lateral-view shuttle trajectory.

The shuttle is tracked per 0.5 ms packet with a gated nearest-centroid
tracker: constant-velocity prediction from the last two accepted points, and
the centroid of the events inside the gate as the new position.  The track
is seeded from the topmost compact event cluster early in the swing interval
(the inbound shuttle is the only compact mover in the upper image there).

Impact shows as a sharp inflection of x(t): the slow inbound drift turns
into the fast outbound flight.  A continuous two-segment piecewise-linear
model is fitted by exhaustive search over candidate breakpoints (every
midpoint between consecutive track times), minimizing total squared
residual, followed by a continuous refinement between the bracketing
candidates.  Packets where the gate count spikes far above the running
support level (racket sweeping through the gate around contact) produce no
track point; the tracker coasts through them with a widening gate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .events import US_PER_MS, EventPacket, EventStream, packetize
from .swing import SwingInterval

logger = logging.getLogger(__name__)


class UntrackableError(RuntimeError):
    """Shuttle track too short for a trajectory fit."""


class NoInflectionError(RuntimeError):
    """Track has no slope change above the detection threshold."""


@dataclass
class ImpactConfig:
    gate_px: float = 30.0  # events within this radius of prediction are the shuttle
    min_track_points: int = 10
    min_slope_change_px_per_ms: float = 0.5
    # tracker internals
    seed_radius_px: float = 20.0  # cluster radius for seeding
    min_seed_support: int = 4  # events needed to accept a seed cluster
    max_missed_packets: int = 5  # empty-gate packets before the track is lost
    spike_factor: float = 6.0  # gate count > factor*baseline -> contaminated
    spike_abs: float = 60.0  # ...and exceeding baseline by this many events
    coast_max_packets: int = 24  # contaminated packets to coast through
    coast_expand_px: float = 8.0  # gate widening per coasted/missed packet

    def __post_init__(self) -> None:
        if self.gate_px <= 0:
            raise ValueError("gate radius must be positive")
        if self.min_track_points < 6:
            raise ValueError("need at least 6 track points for the fit")


@dataclass(frozen=True)
class TrackPoint:
    t: float  # us, packet midpoint
    x: float
    y: float
    support: int  # events contributing to the centroid


@dataclass(frozen=True)
class ImpactTime:
    t_impact: float  # us, same base as the stream
    breakpoint_residual: float  # RMSE of the piecewise fit, px
    pre_slope: float  # px/ms
    post_slope: float  # px/ms
    impact_xy: tuple[float, float]  # fitted position at the breakpoint
    post_velocity: tuple[float, float]  # px/ms, outbound
    trigger_rel_ms: float | None = None  # t_impact - trigger, ms


def _seed_cluster(
    packets: Sequence[EventPacket], cfg: ImpactConfig
) -> tuple[int, float, float, int] | None:
    """Topmost compact cluster in the first packets; (index, x, y, support)."""
    for k, pk in enumerate(packets):
        if pk.count < cfg.min_seed_support:
            continue
        xs = pk.x.astype(np.float64)
        ys = pk.y.astype(np.float64)
        for j in np.argsort(ys):
            d2 = (xs - xs[j]) ** 2 + (ys - ys[j]) ** 2
            members = d2 <= cfg.seed_radius_px**2
            if members.sum() >= cfg.min_seed_support:
                return k, float(xs[members].mean()), float(ys[members].mean()), int(
                    members.sum()
                )
    return None


def track_shuttle(
    packets: Sequence[EventPacket],
    cfg: ImpactConfig | None = None,
    seed_xy: tuple[float, float] | None = None,
) -> list[TrackPoint]:
    """Per-packet gated centroid track of the shuttle.

    With ``seed_xy`` the track starts at the given position in the first
    packet; otherwise it is seeded automatically from the topmost compact
    cluster.  The track ends when the gate stays empty for more than
    ``max_missed_packets`` consecutive packets.
    """
    cfg = cfg or ImpactConfig()
    if seed_xy is None:
        seeded = _seed_cluster(packets, cfg)
        if seeded is None:
            return []
        start, px, py, support = seeded
        points = [TrackPoint(packets[start].t_mid, px, py, support)]
        pos = np.array([px, py])
    else:
        start = -1  # no packet consumed by the seed
        points = []
        pos = np.array(seed_xy, dtype=np.float64)
    vel = np.zeros(2)
    missed = 0
    coasting = 0
    for pk in packets[start + 1 :]:
        dt_ms = 0.0
        if points:
            dt_ms = (pk.t_mid - points[-1].t) / US_PER_MS
        pred = pos + vel * dt_ms
        widen = cfg.coast_expand_px * max(missed, coasting)
        gate = cfg.gate_px + widen
        xs = pk.x.astype(np.float64)
        ys = pk.y.astype(np.float64)
        d2 = (xs - pred[0]) ** 2 + (ys - pred[1]) ** 2
        inside = d2 <= gate * gate
        n_in = int(inside.sum())
        if n_in == 0:
            missed += 1
            if missed > cfg.max_missed_packets:
                break
            continue
        baseline = None
        if len(points) >= 3:
            baseline = float(np.median([q.support for q in points[-9:]]))
        if baseline is not None and n_in > max(
            cfg.spike_factor * baseline, baseline + cfg.spike_abs
        ):
            # Racket (or similar burst) sweeping through the gate: emit no
            # point, coast on the current velocity with a widening gate.
            coasting += 1
            if coasting > cfg.coast_max_packets:
                break
            pos = pred
            continue
        cx = float(xs[inside].mean())
        cy = float(ys[inside].mean())
        tp = TrackPoint(pk.t_mid, cx, cy, n_in)
        if points:
            span_ms = (tp.t - points[-1].t) / US_PER_MS
            vel = np.array([(cx - points[-1].x), (cy - points[-1].y)]) / span_ms
        points.append(tp)
        pos = np.array([cx, cy])
        missed = 0
        coasting = 0
    return points


def _piecewise_sse(
    t: np.ndarray, x: np.ndarray, tau: float
) -> tuple[float, np.ndarray]:
    """SSE and parameters (a, b, c) of x ~ a + b*t + c*max(t - tau, 0)."""
    design = np.column_stack((np.ones_like(t), t, np.maximum(t - tau, 0.0)))
    params, _, _, _ = np.linalg.lstsq(design, x, rcond=None)
    resid = x - design @ params
    return float(resid @ resid), params


def _candidates(t: np.ndarray, min_side: int = 2) -> np.ndarray:
    """Midpoints between consecutive distinct times with enough points on
    each side to determine both slopes."""
    ts = np.unique(t)
    mids = (ts[:-1] + ts[1:]) / 2.0
    keep = []
    for m in mids:
        if (t < m).sum() >= min_side and (t > m).sum() >= min_side:
            keep.append(m)
    return np.asarray(keep)


def _best_breakpoint(t: np.ndarray, x: np.ndarray) -> tuple[float, float, np.ndarray]:
    cands = _candidates(t)
    if not len(cands):
        raise NoInflectionError("too few distinct track times around any breakpoint")
    sses = np.empty(len(cands))
    for i, tau in enumerate(cands):
        sses[i], _ = _piecewise_sse(t, x, tau)
    k = int(np.argmin(sses))
    # Refine continuously between the bracketing candidates: with clean
    # segments on both sides the optimum is the intersection of the two
    # lines, which need not fall on a midpoint (e.g. across a gap).
    lo = cands[k - 1] if k > 0 else cands[k]
    hi = cands[k + 1] if k + 1 < len(cands) else cands[k]
    if hi > lo:
        res = minimize_scalar(
            lambda tau: _piecewise_sse(t, x, tau)[0],
            bounds=(float(lo), float(hi)),
            method="bounded",
            options={"xatol": 1e-7},
        )
        tau_best = float(res.x)
        if res.fun > sses[k]:  # numerical safety: never worse than the grid
            tau_best = float(cands[k])
    else:
        tau_best = float(cands[k])
    sse, params = _piecewise_sse(t, x, tau_best)
    return tau_best, sse, params


def detect_inflection(
    track: Sequence[TrackPoint], cfg: ImpactConfig | None = None
) -> ImpactTime:
    """Breakpoint of the two-segment x(t) model over the track.

    Raises NoInflectionError when the fitted slope change stays below the
    configured minimum.  A single trimming pass drops gross outliers
    (residual beyond max(3 robust sigma, 2 px)) and refits, which keeps the
    exhaustive fit honest when a few contaminated points slip through the
    tracker.
    """
    cfg = cfg or ImpactConfig()
    if len(track) < cfg.min_track_points:
        raise UntrackableError(
            f"track has {len(track)} points, need {cfg.min_track_points}"
        )
    t_us = np.array([p.t for p in track])
    x = np.array([p.x for p in track])
    y = np.array([p.y for p in track])
    t0 = t_us[0]
    t_ms = (t_us - t0) / US_PER_MS

    tau, sse, params = _best_breakpoint(t_ms, x)
    resid = x - (params[0] + params[1] * t_ms + params[2] * np.maximum(t_ms - tau, 0))
    sigma = 1.4826 * np.median(np.abs(resid - np.median(resid)))
    keep = np.abs(resid) <= max(3.0 * sigma, 2.0)
    if keep.sum() >= cfg.min_track_points and not keep.all():
        t_ms, x, y = t_ms[keep], x[keep], y[keep]
        tau, sse, params = _best_breakpoint(t_ms, x)

    a, b, c = params
    if abs(c) < cfg.min_slope_change_px_per_ms:
        raise NoInflectionError(
            f"slope change {abs(c):.3f} px/ms below "
            f"{cfg.min_slope_change_px_per_ms} px/ms"
        )
    # y(t) with the same breakpoint for the impact position and outbound
    # velocity vector.
    dy = np.column_stack((np.ones_like(t_ms), t_ms, np.maximum(t_ms - tau, 0.0)))
    ay, by, cy = np.linalg.lstsq(dy, y, rcond=None)[0]
    return ImpactTime(
        t_impact=float(t0 + tau * US_PER_MS),
        breakpoint_residual=float(np.sqrt(sse / len(x))),
        pre_slope=float(b),
        post_slope=float(b + c),
        impact_xy=(float(a + b * tau), float(ay + by * tau)),
        post_velocity=(float(b + c), float(by + cy)),
    )


def estimate_impact_time(
    stream: EventStream, interval: SwingInterval, cfg: ImpactConfig | None = None
) -> ImpactTime:
    """Impact time from the lateral stream within a detected swing interval.

    Raises UntrackableError (track shorter than the minimum) or
    NoInflectionError.  When the stream carries a trigger timestamp the
    result also holds the impact time relative to it.
    """
    cfg = cfg or ImpactConfig()
    lo, hi = np.searchsorted(stream.t, [interval.onset_t, interval.end_t])
    if hi - lo == 0:
        raise UntrackableError("no events inside the swing interval")
    sub = EventStream(
        view=stream.view,
        width=stream.width,
        height=stream.height,
        t=stream.t[lo:hi],
        x=stream.x[lo:hi],
        y=stream.y[lo:hi],
        p=stream.p[lo:hi],
        trigger_t=stream.trigger_t,
    )
    track = track_shuttle(packetize(sub), cfg)
    if len(track) < cfg.min_track_points:
        raise UntrackableError(
            f"track has {len(track)} points, need {cfg.min_track_points}"
        )
    impact = detect_inflection(track, cfg)
    if not (interval.onset_t <= impact.t_impact <= interval.end_t):
        raise NoInflectionError(
            f"breakpoint {impact.t_impact:.0f} us outside the swing interval"
        )
    trig = stream.trigger_t
    if trig is not None:
        impact = ImpactTime(
            t_impact=impact.t_impact,
            breakpoint_residual=impact.breakpoint_residual,
            pre_slope=impact.pre_slope,
            post_slope=impact.post_slope,
            impact_xy=impact.impact_xy,
            post_velocity=impact.post_velocity,
            trigger_rel_ms=(impact.t_impact - trig) / US_PER_MS,
        )
    logger.debug(
        "impact at %.1f us (slopes %.2f -> %.2f px/ms)",
        impact.t_impact,
        impact.pre_slope,
        impact.post_slope,
    )
    return impact
