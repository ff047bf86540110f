"""Swing onset detection from per-packet event rates.

A swing shows up as a sustained burst of events from the fast-moving racket.
Detection runs on the per-packet event counts of the lateral stream: over a
trailing (causal) 100 ms window both the mean and the population variance of
the rate must exceed their thresholds.  Requiring both suppresses false
onsets from steady scene activity (raised mean, low variance) and from lone
noise spikes (raised variance, low mean).  The swing interval handed to the
downstream stages is the 100 ms following onset.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .events import PACKET_US, US_PER_MS, EventStream, packet_counts

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RateSeries:
    """Per-packet event counts, one entry per 0.5 ms bin."""

    t0: int  # start of packet 0, us (multiple of 500)
    counts: np.ndarray = field(repr=False)  # int64

    def __post_init__(self) -> None:
        c = np.ascontiguousarray(self.counts, dtype=np.int64)
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)
        if self.t0 % PACKET_US:
            raise ValueError("rate series must start on a packet boundary")

    @classmethod
    def from_stream(cls, stream: EventStream) -> "RateSeries":
        """Rate series from the recording start.

        The recording clock starts at zero, so leading packets with no
        events are real observations of a silent scene, not missing data.
        Materializing them keeps threshold calibration on the leading
        segment meaningful for near-silent recordings whose first event
        arrives long after the start.
        """
        t0, counts = packet_counts(stream)
        lead = t0 // PACKET_US
        if lead > 0:
            counts = np.concatenate((np.zeros(lead, dtype=np.int64), counts))
            t0 = 0
        return cls(t0=t0, counts=counts)

    def __len__(self) -> int:
        return len(self.counts)

    def packet_time(self, i: int) -> int:
        return self.t0 + i * PACKET_US


@dataclass(frozen=True)
class SwingInterval:
    """Detected swing: [onset_t, end_t), end = onset + window length."""

    onset_t: int  # us
    end_t: int  # us

    def __post_init__(self) -> None:
        if self.end_t <= self.onset_t:
            raise ValueError("swing interval must have positive length")


@dataclass
class DetectorConfig:
    window_ms: float = 100.0  # trailing stats window; 200 packets
    mean_threshold: float | None = None  # events/packet; None = calibrate
    var_threshold: float | None = None  # events^2/packet
    refractory_ms: float = 300.0  # dead time after an onset
    k_mean: float = 6.0  # threshold = mu_q + k * sigma_q
    k_var: float = 6.0
    quiescent_ms: float = 450.0  # leading segment used for auto-calibration

    def __post_init__(self) -> None:
        if self.window_ms <= 0 or self.refractory_ms < 0:
            raise ValueError("window must be positive, refractory non-negative")
        w_us = round(self.window_ms * US_PER_MS)
        if w_us % PACKET_US:
            raise ValueError("window_ms must be a multiple of the 0.5 ms packet")

    @property
    def window_packets(self) -> int:
        return round(self.window_ms * US_PER_MS) // PACKET_US


def sliding_stats(
    rates: RateSeries | np.ndarray, window_packets: int
) -> tuple[np.ndarray, np.ndarray]:
    """Trailing mean and population variance of the rate series.

    Entry ``i`` covers packets ``i - window + 1 .. i``; indices with an
    incomplete window are NaN.  Integer cumulative sums keep the result
    exact (no drift between a long series and a recomputation).
    """
    counts = rates.counts if isinstance(rates, RateSeries) else np.asarray(rates)
    if window_packets < 1:
        raise ValueError("window must span at least one packet")
    n = len(counts)
    mean = np.full(n, np.nan)
    var = np.full(n, np.nan)
    if n < window_packets:
        return mean, var
    c = counts.astype(np.int64)
    s1 = np.concatenate(([0], np.cumsum(c)))
    s2 = np.concatenate(([0], np.cumsum(c * c)))
    w = window_packets
    win1 = (s1[w:] - s1[:-w]).astype(np.float64)
    win2 = (s2[w:] - s2[:-w]).astype(np.float64)
    mean[w - 1 :] = win1 / w
    var[w - 1 :] = np.maximum(win2 / w - (win1 / w) ** 2, 0.0)
    return mean, var


def detect_swing(rates: RateSeries, cfg: DetectorConfig) -> list[SwingInterval]:
    """Find swing onsets; returns intervals in time order.

    Onset is the start time of the first packet whose trailing-window mean
    and variance both exceed their thresholds, with a refractory dead time
    after each detection.
    """
    if cfg.mean_threshold is None or cfg.var_threshold is None:
        raise ValueError("thresholds unset; run calibrate_thresholds first")
    mean, var = sliding_stats(rates, cfg.window_packets)
    hot = (mean > cfg.mean_threshold) & (var > cfg.var_threshold)
    window_us = cfg.window_packets * PACKET_US
    refractory_us = round(cfg.refractory_ms * US_PER_MS)
    intervals: list[SwingInterval] = []
    last_onset: int | None = None
    for i in np.flatnonzero(hot):
        onset = rates.packet_time(int(i))
        if last_onset is not None and onset - last_onset < refractory_us:
            continue
        intervals.append(SwingInterval(onset_t=onset, end_t=onset + window_us))
        last_onset = onset
    logger.debug("detected %d swing interval(s)", len(intervals))
    return intervals


def calibrate_thresholds(
    quiescent: RateSeries, cfg: DetectorConfig | None = None
) -> DetectorConfig:
    """Data-driven thresholds from a swing-free segment.

    Over the quiescent windows, threshold = mu_q + k * sigma_q for each
    statistic.  The segment may contain non-swing activity (shuttle feed,
    background); it must only be free of swings and at least one window
    long.
    """
    cfg = cfg or DetectorConfig()
    mean, var = sliding_stats(quiescent, cfg.window_packets)
    ok = ~np.isnan(mean)
    if not ok.any():
        raise ValueError(
            f"quiescent segment shorter than one {cfg.window_ms} ms window"
        )
    m, v = mean[ok], var[ok]
    out = DetectorConfig(
        window_ms=cfg.window_ms,
        mean_threshold=float(m.mean() + cfg.k_mean * m.std()),
        var_threshold=float(v.mean() + cfg.k_var * v.std()),
        refractory_ms=cfg.refractory_ms,
        k_mean=cfg.k_mean,
        k_var=cfg.k_var,
        quiescent_ms=cfg.quiescent_ms,
    )
    logger.debug(
        "calibrated thresholds: mean > %.3f, var > %.3f",
        out.mean_threshold,
        out.var_threshold,
    )
    return out
