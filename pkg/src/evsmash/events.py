"""Core event-stream types and windowed aggregation.

Events are asynchronous per-pixel brightness-change records (t in integer
microseconds, pixel x/y, polarity +1/-1).  Streams are stored columnar as
numpy arrays so that packetization and accumulation stay cheap even for
multi-million-event recordings.  Packets are fixed 0.5 ms bins aligned to
absolute multiples of 500 us, which keeps packet indices comparable across
independently recorded views of the same scene.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

PACKET_US = 500  # fixed packet duration, 0.5 ms
US_PER_MS = 1_000


class View(Enum):
    """Which camera a stream was recorded from."""

    LATERAL = "lateral"
    REAR = "rear"


@dataclass(frozen=True)
class Event:
    """A single brightness-change event."""

    t: int  # microseconds
    x: int
    y: int
    p: int  # +1 or -1

    def __post_init__(self) -> None:
        if self.p not in (1, -1):
            raise ValueError(f"polarity must be +1 or -1, got {self.p}")
        if self.t < 0:
            raise ValueError(f"timestamp must be non-negative, got {self.t}")


def _frozen(a: np.ndarray, dtype) -> np.ndarray:
    out = np.ascontiguousarray(a, dtype=dtype)
    if out.ndim != 1:
        raise ValueError("event columns must be one-dimensional")
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class EventStream:
    """Time-sorted events from one camera, immutable after construction.

    ``trigger_t`` is the optional hardware trigger timestamp on the same
    time base as the events (used to express impact time relative to an
    external reference).
    """

    view: View
    width: int
    height: int
    t: np.ndarray = field(repr=False)  # int64 us, non-decreasing
    x: np.ndarray = field(repr=False)  # int32, 0 <= x < width
    y: np.ndarray = field(repr=False)  # int32, 0 <= y < height
    p: np.ndarray = field(repr=False)  # int8, +1 / -1
    trigger_t: int | None = None

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError("sensor dimensions must be positive")
        object.__setattr__(self, "t", _frozen(self.t, np.int64))
        object.__setattr__(self, "x", _frozen(self.x, np.int32))
        object.__setattr__(self, "y", _frozen(self.y, np.int32))
        object.__setattr__(self, "p", _frozen(self.p, np.int8))
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValueError("event columns must have equal length")
        if n:
            if self.t[0] < 0:
                raise ValueError("timestamps must be non-negative")
            if np.any(np.diff(self.t) < 0):
                raise ValueError("timestamps must be non-decreasing")
            if self.x.min() < 0 or self.x.max() >= self.width:
                raise ValueError("x coordinate out of sensor bounds")
            if self.y.min() < 0 or self.y.max() >= self.height:
                raise ValueError("y coordinate out of sensor bounds")
            if not np.all(np.abs(self.p) == 1):
                raise ValueError("polarity values must be +1 or -1")

    def __len__(self) -> int:
        return len(self.t)

    def event(self, i: int) -> Event:
        return Event(int(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))

    @property
    def t_first(self) -> int:
        if not len(self):
            raise ValueError("empty stream has no time range")
        return int(self.t[0])

    @property
    def t_last(self) -> int:
        if not len(self):
            raise ValueError("empty stream has no time range")
        return int(self.t[-1])

    def time_shift(self, delta_us: int) -> "EventStream":
        """Return a copy with all timestamps (and trigger) shifted."""
        trig = None if self.trigger_t is None else self.trigger_t + delta_us
        return replace(self, t=self.t + delta_us, trigger_t=trig)


@dataclass(frozen=True)
class EventPacket:
    """Events of one 0.5 ms bin [t_start, t_start + 500 us).

    Holds views into the parent stream's arrays, so a packet sequence
    reproduces the stream without copying.
    """

    t_start: int
    t: np.ndarray = field(repr=False)
    x: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    p: np.ndarray = field(repr=False)

    @property
    def duration(self) -> int:
        return PACKET_US

    @property
    def count(self) -> int:
        return len(self.t)

    @property
    def t_mid(self) -> float:
        return self.t_start + PACKET_US / 2.0


def packet_index(t_us: int) -> int:
    """Absolute packet index of a timestamp (bin [i*500, (i+1)*500))."""
    return int(t_us) // PACKET_US


def packet_counts(stream: EventStream) -> tuple[int, np.ndarray]:
    """Per-packet event counts over the stream's span.

    Returns ``(t0, counts)`` where ``t0`` is the start of the first packet
    (first timestamp floored to 500 us) and ``counts[i]`` is the number of
    events in [t0 + i*500, t0 + (i+1)*500).  Empty interior bins are
    materialized with count 0.
    """
    if not len(stream):
        raise ValueError("cannot packetize an empty stream")
    first = packet_index(stream.t_first)
    last = packet_index(stream.t_last)
    idx = stream.t // PACKET_US - first
    counts = np.bincount(idx, minlength=last - first + 1).astype(np.int64)
    return first * PACKET_US, counts


def packetize(stream: EventStream) -> list[EventPacket]:
    """Split a stream into consecutive 0.5 ms packets.

    Packets tile [floor(t_first/500)*500, (floor(t_last/500)+1)*500) with no
    gap or overlap; empty bins yield packets with count 0.
    """
    t0, counts = packet_counts(stream)
    offsets = np.concatenate(([0], np.cumsum(counts)))
    packets = []
    for i in range(len(counts)):
        lo, hi = offsets[i], offsets[i + 1]
        packets.append(
            EventPacket(
                t_start=t0 + i * PACKET_US,
                t=stream.t[lo:hi],
                x=stream.x[lo:hi],
                y=stream.y[lo:hi],
                p=stream.p[lo:hi],
            )
        )
    return packets


@dataclass(frozen=True)
class PolarityImage:
    """Per-pixel accumulation of events over a time window."""

    width: int
    height: int
    counts: np.ndarray = field(repr=False)  # int32 (height, width)
    t_start: int = 0
    duration: int = 0

    def __post_init__(self) -> None:
        c = np.ascontiguousarray(self.counts, dtype=np.int32)
        if c.shape != (self.height, self.width):
            raise ValueError("counts shape must be (height, width)")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)


def accumulate(
    stream: EventStream,
    t_start: int,
    duration_us: int,
    polarity: int | None = None,
) -> PolarityImage:
    """Accumulate events of [t_start, t_start + duration_us) into an image.

    Without a polarity filter each pixel holds the sum of polarities; with
    ``polarity=+1`` or ``-1`` it holds the count of matching events.
    """
    if duration_us <= 0:
        raise ValueError("accumulation window must have positive duration")
    if polarity not in (None, 1, -1):
        raise ValueError("polarity filter must be None, +1 or -1")
    lo, hi = np.searchsorted(stream.t, [t_start, t_start + duration_us])
    xs = stream.x[lo:hi]
    ys = stream.y[lo:hi]
    ps = stream.p[lo:hi]
    if polarity is not None:
        keep = ps == polarity
        xs, ys = xs[keep], ys[keep]
        weights = None  # plain count
    else:
        weights = ps
    flat = np.zeros(stream.height * stream.width, dtype=np.int64)
    if len(xs):
        np.add.at(
            flat,
            ys.astype(np.int64) * stream.width + xs,
            1 if weights is None else weights,
        )
    img = flat.reshape(stream.height, stream.width).astype(np.int32)
    return PolarityImage(
        width=stream.width,
        height=stream.height,
        counts=img,
        t_start=int(t_start),
        duration=int(duration_us),
    )


# Inner face dimensions of the racket head, millimetres.  The long axis runs
# head-to-shaft, the short axis medio-lateral.
FACE_INNER_LONG_MM = 240.0
FACE_INNER_ML_MM = 184.0


@dataclass(frozen=True)
class Calibration:
    """Image-to-metric scale factors for the two views.

    ``rear_mm_per_px`` may be None, in which case the rear scale is
    estimated per trial from the fitted racket-face outline.
    """

    lateral_mm_per_px: float
    rear_mm_per_px: float | None = None
    face_inner_long_mm: float = FACE_INNER_LONG_MM
    face_inner_ml_mm: float = FACE_INNER_ML_MM

    def __post_init__(self) -> None:
        if self.lateral_mm_per_px <= 0:
            raise ValueError("lateral scale must be strictly positive")
        if self.rear_mm_per_px is not None and self.rear_mm_per_px <= 0:
            raise ValueError("rear scale must be strictly positive")
        if self.face_inner_long_mm <= 0 or self.face_inner_ml_mm <= 0:
            raise ValueError("face dimensions must be strictly positive")


def rear_calibration_from_ellipse(
    major_axis_px: float,
    minor_axis_px: float,
    face_long_mm: float = FACE_INNER_LONG_MM,
    face_ml_mm: float = FACE_INNER_ML_MM,
) -> float:
    """Rear-view mm/px from the fitted face outline.

    Averages the scale implied by each axis: mean(long/major, ml/minor).
    ``major_axis_px`` and ``minor_axis_px`` are full axis lengths.
    """
    if major_axis_px <= 0 or minor_axis_px <= 0:
        raise ValueError("axis lengths must be strictly positive")
    if minor_axis_px > major_axis_px:
        raise ValueError("major axis must not be shorter than minor axis")
    return 0.5 * (face_long_mm / major_axis_px + face_ml_mm / minor_axis_px)
