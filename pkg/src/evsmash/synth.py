"""Deterministic synthetic trials with exact ground truth.

Renders a badminton smash as seen by two event cameras: a lateral view of
the sagittal plane (shuttle feed, racket swing, outbound flight) and a rear
view of the racket face at contact.  Silhouettes move on analytic paths; at
every 100 us micro-step pixels newly covered by a silhouette emit a +1
event and newly uncovered pixels a -1 event, so bin-boundary effects of the
0.5 ms packets are exercised (5 micro-steps per packet).  Poisson background
noise, a small per-step pose jitter and per-event position scatter are all
seeded, making identical specs byte-identical.

The scene is built so that physically coupled quantities stay consistent
across views: the shuttle's vertical velocity is shared (scaled by each
view's mm/px), impact happens at the same absolute time, the rear tip
position realizes the requested face coordinates under the requested tilt.
Out-of-plane velocity is invisible to both orthographic views, which is
exactly the known underestimation of an in-plane speed measurement; it only
enters the ground truth's total speed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .events import PACKET_US, EventStream, View

STEP_US = 100  # micro-step; 5 per packet
GRAVITY_MM_MS2 = 9.81e-3


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    duration_ms: float = 1000.0
    t_impact_ms: float = 600.25
    # impact point on the face, mm: +u right (after de-tilt), +v toward head
    impact_u_mm: float = -20.0
    impact_v_mm: float = 15.0
    # shuttle kinematics, m/s, sagittal plane: +x forward, +y down
    inbound_velocity: tuple[float, float] = (-1.5, 5.5)
    outbound_velocity: tuple[float, float] = (48.0, 6.0)
    inbound_ml_m_s: float = 1.0  # medio-lateral drift, rear view
    out_of_plane_speed: float = 0.0  # invisible to both views
    # racket
    tilt_deg: float = 6.0  # face tilt from vertical at contact
    # sensors
    width: int = 1280
    height: int = 720
    lateral_mm_per_px: float = 3.47
    rear_mm_per_px: float = 1.86
    impact_x_px: float = 430.0  # lateral-view impact point
    impact_y_px: float = 300.0
    face_cx_px: float = 640.0  # rear-view face centre at impact
    face_cy_px: float = 300.0
    # racket geometry, mm
    face_long_mm: float = 240.0
    face_ml_mm: float = 184.0
    rim_mm: float = 4.0
    shaft_len_mm: float = 180.0
    shaft_w_mm: float = 7.0
    # shuttle geometry, mm
    cork_r_mm: float = 13.0
    skirt_len_mm: float = 60.0
    skirt_r_mm: float = 30.0
    # noise model
    noise_rate_hz: float = 2000.0  # background events per second per view
    jitter_px: float = 0.1  # per-step pose jitter, std (whole silhouette)
    event_scatter_px: float = 0.4  # per-event position noise, std
    trigger_lag_ms: float = 29.4  # trigger fires this long after impact

    def __post_init__(self) -> None:
        if not 0 < self.t_impact_ms < self.duration_ms - 50:
            raise ValueError("impact must fall inside the trial with margin")
        if self.rim_mm <= 0 or self.face_long_mm <= self.face_ml_mm:
            raise ValueError("implausible racket geometry")

    @property
    def expected_location_status(self) -> str:
        if abs(self.tilt_deg) > 60.0:
            return "ShaftAngleInvalid"
        r = (self.impact_u_mm / (self.face_ml_mm / 2)) ** 2 + (
            self.impact_v_mm / (self.face_long_mm / 2)
        ) ** 2
        return "TipOutsideFace" if r > 1.0 else "Success"


@dataclass(frozen=True)
class GroundTruth:
    t_impact_us: float
    trigger_t_us: int
    impact_uv_mm: tuple[float, float]
    speed_in_plane_m_s: float
    speed_total_m_s: float
    tilt_deg: float
    expected_location_status: str
    impact_xy_lateral_px: tuple[float, float]
    tip_rear_px: tuple[float, float]
    face_centre_rear_px: tuple[float, float]
    rear_impact_packet_start_us: int
    racket_pixels_rear: np.ndarray = field(repr=False)  # (n, 2) int x,y
    shuttle_pixels_rear: np.ndarray = field(repr=False)  # (m, 2)
    shuttle_track_lateral: np.ndarray = field(repr=False)  # (k, 3) t_us, x, y

    def to_json_dict(self) -> dict:
        d = {
            "t_impact_us": self.t_impact_us,
            "trigger_t_us": self.trigger_t_us,
            "impact_u_mm": self.impact_uv_mm[0],
            "impact_v_mm": self.impact_uv_mm[1],
            "speed_in_plane_m_s": self.speed_in_plane_m_s,
            "speed_total_m_s": self.speed_total_m_s,
            "tilt_deg": self.tilt_deg,
            "expected_location_status": self.expected_location_status,
            "impact_xy_lateral_px": list(self.impact_xy_lateral_px),
            "tip_rear_px": list(self.tip_rear_px),
            "face_centre_rear_px": list(self.face_centre_rear_px),
            "rear_impact_packet_start_us": self.rear_impact_packet_start_us,
        }
        return d


def _unit(vx, vy):
    n = np.hypot(vx, vy)
    n = np.where(n == 0, 1.0, n)
    return vx / n, vy / n


class _Shuttle:
    """Cork disc leading, conical skirt trailing opposite the travel
    direction.  ``tip_fn(t_ms) -> (x, y)`` is the contact-point path,
    ``dir_fn(t_ms) -> (dx, dy)`` the unit travel direction.

    ``nose_frac > 0`` stretches the cork into a teardrop whose rounded
    point reaches the contact point; the near-contact silhouette rows are
    then only a pixel or two wide, as for a real cork tip.

    ``bloom_px`` over ``bloom_window=(t0, t1)`` widens the whole silhouette
    by that many pixels: the cork squashes and the skirt flares while the
    shuttle is pressed against the strings.  The widening is lateral, the
    nose apex stays pinned on the contact path, so the lowest covered pixel
    is still the tip.  This is what repaints the nose rows inside the
    impact packet even when contact falls at its very end: the silhouette
    is otherwise frozen there and a frozen body emits nothing."""

    def __init__(self, t_on, t_off, tip_fn, dir_fn, cork_r, skirt_len,
                 skirt_r, nose_frac=0.0, bloom_px=0.0, bloom_window=None):
        self.t_on, self.t_off = t_on, t_off
        self.tip_fn, self.dir_fn = tip_fn, dir_fn
        self.cork_r, self.skirt_len, self.skirt_r = cork_r, skirt_len, skirt_r
        self.nose_frac = nose_frac
        self.bloom_px = bloom_px
        self.bloom_window = bloom_window

    def extent_px(self) -> float:
        return (self.cork_r * 2.5 + self.skirt_len + self.skirt_r
                + self.bloom_px)

    def centers(self, t_ms):
        x, y = self.tip_fn(np.asarray(t_ms))
        return np.column_stack((x, y))

    def cover(self, X, Y, t_col, jx, jy):
        tx, ty = self.tip_fn(t_col)
        tx, ty = tx + jx, ty + jy
        dx, dy = self.dir_fn(t_col)
        dx, dy = _unit(dx, dy)
        w = 0.0
        if self.bloom_px > 0.0 and self.bloom_window is not None:
            b0, b1 = self.bloom_window
            w = self.bloom_px * ((t_col > b0) & (t_col <= b1))
        r = self.cork_r
        cx = tx - (1.0 + self.nose_frac) * r * dx
        cy = ty - (1.0 + self.nose_frac) * r * dy
        qx = X - cx
        qy = Y - cy
        disc = qx * qx + qy * qy <= (r + w) ** 2
        # skirt cone, apex at the cork centre, opening opposite the travel
        s = -(qx * dx + qy * dy)
        lat = np.abs(-qx * dy + qy * dx)
        shape = disc | (
            (s >= 0) & (s <= self.skirt_len)
            & (lat <= self.skirt_r * s / self.skirt_len + w)
        )
        if self.nose_frac > 0:
            # nose: narrows from half a cork radius down to the tip point
            nose_len = (self.nose_frac + 0.4) * r
            sn = (tx - X) * dx + (ty - Y) * dy  # distance back from the tip
            latn = np.abs(-(X - tx) * dy + (Y - ty) * dx)
            shape |= (sn >= 0) & (sn <= nose_len) & (
                latn <= 0.5 * r * sn / nose_len + w
            )
        active = (t_col >= self.t_on) & (t_col <= self.t_off)
        return shape & active


class _Ring:
    """Elliptical rim band (rear racket face).

    The band radius carries a small kHz-range oscillation (frame shock
    vibration): without it only the motion-leading contour would emit in a
    given packet, which would bias a rim fit by half the rim width.  The
    oscillation makes both rim edges emit in every packet, so the event
    band is centred on the rim."""

    def __init__(self, t_on, t_off, centre_fn, theta, a_in, b_in, rim_px,
                 pulse_amp=0.8, pulse_hz=2700.0):
        self.t_on, self.t_off = t_on, t_off
        self.centre_fn = centre_fn
        self.sin, self.cos = math.sin(theta), math.cos(theta)
        self.a_in, self.b_in = a_in, b_in
        self.a_out, self.b_out = a_in + rim_px, b_in + rim_px
        self.pulse_amp, self.pulse_hz = pulse_amp, pulse_hz

    def extent_px(self) -> float:
        return self.a_out + self.pulse_amp + 2

    def centers(self, t_ms):
        x, y = self.centre_fn(np.asarray(t_ms))
        return np.column_stack((x, y))

    def _inside(self, u, v, a, b):
        return (u / b) ** 2 + (v / a) ** 2 <= 1.0

    def cover(self, X, Y, t_col, jx, jy):
        cx, cy = self.centre_fn(t_col)
        pulse = self.pulse_amp * np.sin(2e-3 * math.pi * self.pulse_hz * t_col)
        dx = X - (cx + jx)
        dy = Y - (cy + jy)
        u = dx * self.cos + dy * self.sin  # minor-axis component
        v = dx * self.sin - dy * self.cos  # major-axis component
        band = self._inside(u, v, self.a_out + pulse, self.b_out + pulse) & ~(
            self._inside(u, v, self.a_in + pulse, self.b_in + pulse)
        )
        active = (t_col >= self.t_on) & (t_col <= self.t_off)
        return band & active


class _Bar:
    """Thick segment between two moving endpoints (shaft, lateral racket).
    An optional width oscillation models shaft vibration so the long edges
    emit even when the bar moves along its own axis."""

    def __init__(self, t_on, t_off, end_a_fn, end_b_fn, halfwidth,
                 pulse_amp=0.0, pulse_hz=2700.0):
        self.t_on, self.t_off = t_on, t_off
        self.end_a_fn, self.end_b_fn = end_a_fn, end_b_fn
        self.halfwidth = halfwidth
        self.pulse_amp, self.pulse_hz = pulse_amp, pulse_hz

    def extent_px(self) -> float:
        a0 = np.asarray(self.end_a_fn(np.array([self.t_on])))
        b0 = np.asarray(self.end_b_fn(np.array([self.t_on])))
        return float(np.hypot(*(b0 - a0))) + self.halfwidth + self.pulse_amp + 2

    def centers(self, t_ms):
        ax, ay = self.end_a_fn(np.asarray(t_ms))
        bx, by = self.end_b_fn(np.asarray(t_ms))
        return np.column_stack(((ax + bx) / 2, (ay + by) / 2))

    def cover(self, X, Y, t_col, jx, jy):
        ax, ay = self.end_a_fn(t_col)
        bx, by = self.end_b_fn(t_col)
        ax, ay = ax + jx, ay + jy
        bx, by = bx + jx, by + jy
        dx, dy = bx - ax, by - ay
        ll = dx * dx + dy * dy
        ll = np.where(ll == 0, 1.0, ll)
        s = np.clip(((X - ax) * dx + (Y - ay) * dy) / ll, 0.0, 1.0)
        px = ax + s * dx
        py = ay + s * dy
        d2 = (X - px) ** 2 + (Y - py) ** 2
        hw = self.halfwidth + self.pulse_amp * np.sin(
            2e-3 * math.pi * self.pulse_hz * t_col
        )
        active = (t_col >= self.t_on) & (t_col <= self.t_off)
        return (d2 <= hw * hw) & active


class _Blob:
    """Filled axis-aligned ellipse (lateral racket head, lateral shuttle).

    The optional size pulse (skirt flutter on the shuttle) keeps the whole
    circumference emitting when the blob moves slowly; it is radially
    symmetric, so the blob's event centroid stays on the centre path.
    Flutter builds up late in the drop (``pulse_from``) and the hit
    stretches the shuttle taut (``pulse_until``); fast translation provides
    the events from then on.  Keeping the early fall quiet matters: the
    swing detector calibrates its thresholds on the leading part of the
    recording, and a shuttle that buzzes through the whole feed would raise
    them past the racket's own signature."""

    def __init__(self, t_on, t_off, centre_fn, semi_x, semi_y,
                 pulse_amp=0.0, pulse_hz=2700.0, pulse_from=None,
                 pulse_until=None):
        self.t_on, self.t_off = t_on, t_off
        self.centre_fn = centre_fn
        self.semi_x, self.semi_y = semi_x, semi_y
        self.pulse_amp, self.pulse_hz = pulse_amp, pulse_hz
        self.pulse_from = pulse_from
        self.pulse_until = pulse_until

    def extent_px(self) -> float:
        return max(self.semi_x, self.semi_y) + self.pulse_amp + 2

    def centers(self, t_ms):
        x, y = self.centre_fn(np.asarray(t_ms))
        return np.column_stack((x, y))

    def field(self, X, Y, t_col, jx, jy):
        """Normalized ellipse form: <= 1 inside the silhouette.  Exposing
        the continuous value lets the renderer place each coverage
        transition at its true sub-step crossing time instead of the step
        boundary."""
        cx, cy = self.centre_fn(t_col)
        pulse = self.pulse_amp * np.sin(2e-3 * math.pi * self.pulse_hz * t_col)
        if self.pulse_from is not None:
            pulse = pulse * (t_col >= self.pulse_from)
        if self.pulse_until is not None:
            pulse = pulse * (t_col <= self.pulse_until)
        sx = self.semi_x + pulse
        sy = self.semi_y + pulse
        return ((X - cx - jx) / sx) ** 2 + ((Y - cy - jy) / sy) ** 2

    def cover(self, X, Y, t_col, jx, jy):
        val = self.field(X, Y, t_col, jx, jy)
        active = (t_col >= self.t_on) & (t_col <= self.t_off)
        return (val <= 1.0) & active


def _emit_events(
    sil, width, height, jitter_px, jitter_seed, scatter_px=0.0, chunk=125
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Render one silhouette to (t_us, x, y, p) via micro-step diffs.

    ``jitter_px`` shifts the whole silhouette pose per micro-step (shared by
    all its pixels), ``scatter_px`` displaces each emitted event on its own.
    The distinction matters downstream: pose noise survives any amount of
    spatial averaging, per-event noise is beaten down by sqrt(N) in every
    centroid, which is how real sensor noise behaves.
    """
    k_on = math.ceil(sil.t_on * 10)
    k_off = math.floor(sil.t_off * 10)
    n_steps = max(k_off - k_on + 2, 0)
    if n_steps <= 0:
        e = np.empty(0, dtype=np.int64)
        return e, e.copy(), e.copy(), e.astype(np.int8)
    rng = np.random.default_rng(jitter_seed)
    jit = (
        rng.normal(0.0, jitter_px, size=(n_steps + 1, 2))
        if jitter_px > 0
        else np.zeros((n_steps + 1, 2))
    )
    ts_out, xs_out, ys_out, ps_out = [], [], [], []
    for c0 in range(k_on, k_off + 1, chunk):
        c1 = min(c0 + chunk, k_off + 1)
        ks = np.arange(c0 - 1, c1)  # include previous step for the diff
        t_ms = ks / 10.0
        cen = sil.centers(t_ms)
        r = sil.extent_px() + 4 * jitter_px + 2
        x0 = max(int(np.floor(cen[:, 0].min() - r)), 0)
        x1 = min(int(np.ceil(cen[:, 0].max() + r)), width - 1)
        y0 = max(int(np.floor(cen[:, 1].min() - r)), 0)
        y1 = min(int(np.ceil(cen[:, 1].max() + r)), height - 1)
        if x0 > x1 or y0 > y1:
            continue
        X = np.arange(x0, x1 + 1, dtype=np.float64)[None, None, :]
        Y = np.arange(y0, y1 + 1, dtype=np.float64)[None, :, None]
        t_col = t_ms[:, None, None]
        j = jit[ks - (k_on - 1)]
        jx = j[:, 0][:, None, None]
        jy = j[:, 1][:, None, None]
        cov = sil.cover(X, Y, t_col, jx, jy)
        fld = (
            sil.field(X, Y, t_col, jx, jy) if hasattr(sil, "field") else None
        )
        for diff, pol in ((cov[1:] & ~cov[:-1], 1), (~cov[1:] & cov[:-1], -1)):
            k_idx, yy, xx = np.nonzero(diff)
            if not len(k_idx):
                continue
            # The transition happened somewhere inside the step, not at its
            # end.  Stamping everything on the step boundary phase-locks a
            # moving edge to a ~v*step grid, which any fixed accumulation
            # window then samples as a sawtooth in edge position.  Where the
            # silhouette exposes its continuous inside-outside field the
            # boundary crossing is interpolated exactly; otherwise a uniform
            # draw over the step, exact in aggregate for a constant-speed
            # edge, leaves only sqrt(N) noise.
            ts = (c0 + k_idx).astype(np.int64) * STEP_US
            if fld is not None:
                f_prev = fld[k_idx, yy, xx]
                f_now = fld[k_idx + 1, yy, xx]
                with np.errstate(divide="ignore", invalid="ignore"):
                    frac = (f_prev - 1.0) / (f_prev - f_now)
                frac = np.where(np.isfinite(frac), frac, 1.0)
                back = STEP_US * (1.0 - np.clip(frac, 0.0, 1.0))
                ts -= np.rint(back).astype(np.int64)
            else:
                ts -= rng.integers(0, STEP_US, len(k_idx), dtype=np.int64)
            ts_out.append(np.maximum(ts, math.ceil(sil.t_on * 1000)))
            xs_out.append(xx.astype(np.int64) + x0)
            ys_out.append(yy.astype(np.int64) + y0)
            ps_out.append(np.full(len(k_idx), pol, dtype=np.int8))
    if not ts_out:
        e = np.empty(0, dtype=np.int64)
        return e, e.copy(), e.copy(), e.astype(np.int8)
    ts = np.concatenate(ts_out)
    xs = np.concatenate(xs_out)
    ys = np.concatenate(ys_out)
    ps = np.concatenate(ps_out)
    if scatter_px > 0:
        dxy = rng.normal(0.0, scatter_px, size=(len(ts), 2))
        xs = np.clip(np.rint(xs + dxy[:, 0]).astype(np.int64), 0, width - 1)
        ys = np.clip(np.rint(ys + dxy[:, 1]).astype(np.int64), 0, height - 1)
    return ts, xs, ys, ps


def _face_axes(tilt_rad: float) -> tuple[tuple[float, float], tuple[float, float]]:
    """(u_hat, v_hat) in image px: +u right after de-tilt, +v toward head."""
    return (
        (math.cos(tilt_rad), math.sin(tilt_rad)),
        (math.sin(tilt_rad), -math.cos(tilt_rad)),
    )


def _build_scene(spec: SceneSpec) -> dict:
    """Silhouettes per view plus derived ground-truth quantities."""
    t_i = spec.t_impact_ms
    s_lat = spec.lateral_mm_per_px
    s_rear = spec.rear_mm_per_px
    g_lat = GRAVITY_MM_MS2 / s_lat

    vin = (spec.inbound_velocity[0] / s_lat, spec.inbound_velocity[1] / s_lat)
    vout = (spec.outbound_velocity[0] / s_lat, spec.outbound_velocity[1] / s_lat)
    ix, iy = spec.impact_x_px, spec.impact_y_px

    def lat_tip(t_ms):
        tau = np.asarray(t_ms, dtype=np.float64) - t_i
        pre_x = ix + vin[0] * tau
        pre_y = iy + vin[1] * tau + 0.5 * g_lat * tau * tau
        post_x = ix + vout[0] * tau
        post_y = iy + vout[1] * tau
        post = tau > 0
        return np.where(post, post_x, pre_x), np.where(post, post_y, pre_y)

    # At the lateral scale the shuttle subtends only a handful of pixels of
    # detail, so it is rendered as a round blob.  Central symmetry matters:
    # it keeps the event centroid on the ballistic point for any speed and
    # travel direction, whereas a trailing skirt would offset the centroid
    # differently before and after contact and so shift the apparent
    # trajectory inflection.
    shuttle_r_lat = 38.0 / s_lat
    shuttle_lat = _Blob(
        t_on=t_i - 440.0,
        t_off=min(t_i + 46.0, spec.duration_ms - 0.2),
        centre_fn=lat_tip,
        semi_x=shuttle_r_lat,
        semi_y=shuttle_r_lat,
        pulse_amp=0.5,
        pulse_from=t_i - 80.0,
        pulse_until=t_i,
    )

    # Lateral racket: vertical edge-on head rising steeply so that only a
    # thin sliver crosses the shuttle's tracking gate around contact.
    head_a = (spec.face_long_mm / 2) / s_lat
    head_b = 9.0
    v_rack = (3.0, -12.0)
    decay = 0.15
    hx0 = ix
    hy0 = iy + head_a + shuttle_r_lat + 1.0

    def head_centre(t_ms):
        tau = np.asarray(t_ms, dtype=np.float64) - t_i
        fac = np.where(tau > 0, decay, 1.0)
        return hx0 + v_rack[0] * tau * fac, hy0 + v_rack[1] * tau * fac

    head = _Blob(
        t_on=t_i - 48.0,
        t_off=min(t_i + 40.0, spec.duration_ms - 0.2),
        centre_fn=head_centre,
        semi_x=head_b,
        semi_y=head_a,
    )

    shaft_len_lat = spec.shaft_len_mm / s_lat

    def shaft_a(t_ms):
        x, y = head_centre(t_ms)
        return x, y + head_a

    def shaft_b(t_ms):
        x, y = head_centre(t_ms)
        return x, y + head_a + shaft_len_lat

    shaft_lat = _Bar(
        t_on=head.t_on,
        t_off=head.t_off,
        end_a_fn=shaft_a,
        end_b_fn=shaft_b,
        halfwidth=max(spec.shaft_w_mm / s_lat / 2, 1.2),
    )

    # Rear view.
    tilt = math.radians(spec.tilt_deg)
    u_hat, v_hat = _face_axes(tilt)
    a_in = (spec.face_long_mm / 2) / s_rear
    b_in = (spec.face_ml_mm / 2) / s_rear
    cx0, cy0 = spec.face_cx_px, spec.face_cy_px
    tip_rear = (
        cx0 + (spec.impact_u_mm / s_rear) * u_hat[0]
        + (spec.impact_v_mm / s_rear) * v_hat[0],
        cy0 + (spec.impact_u_mm / s_rear) * u_hat[1]
        + (spec.impact_v_mm / s_rear) * v_hat[1],
    )
    v_face = (1.0, -2.5)  # rear-view racket rise, px/ms

    def ring_centre(t_ms):
        tau = np.asarray(t_ms, dtype=np.float64) - t_i
        fac = np.where(tau > 0, 0.4, 1.0)
        return cx0 + v_face[0] * tau * fac, cy0 + v_face[1] * tau * fac

    ring = _Ring(
        t_on=t_i - 20.0,
        t_off=t_i + 8.0,
        centre_fn=ring_centre,
        theta=tilt,
        a_in=a_in,
        b_in=b_in,
        rim_px=spec.rim_mm / s_rear,
    )
    shaft_len_rear = spec.shaft_len_mm / s_rear

    def rshaft_a(t_ms):
        x, y = ring_centre(t_ms)
        return x - ring.a_out * v_hat[0], y - ring.a_out * v_hat[1]

    def rshaft_b(t_ms):
        x, y = rshaft_a(t_ms)
        return x - shaft_len_rear * v_hat[0], y - shaft_len_rear * v_hat[1]

    shaft_rear = _Bar(
        t_on=ring.t_on,
        t_off=ring.t_off,
        end_a_fn=rshaft_a,
        end_b_fn=rshaft_b,
        halfwidth=max(spec.shaft_w_mm / s_rear / 2, 1.5),
        pulse_amp=0.5,
    )

    v_sr = (spec.inbound_ml_m_s / s_rear, spec.inbound_velocity[1] / s_rear)
    g_rear = GRAVITY_MM_MS2 / s_rear

    # During the ~1 ms of string contact the shuttle judders against the
    # bed: it recoils back along its arrival direction and returns, never
    # crossing the contact point.  The judder re-covers the nose rows a few
    # times inside the impact packet, so the tip region is densely populated
    # there no matter where in the packet the contact falls; the lowest
    # covered pixel stays the true contact tip.  The triangular profile is
    # anchored to the absolute render grid, not to the contact time: it is
    # zero on even 0.1 ms steps and fully lifted on odd ones, so the return
    # to contact is rendered at every other step for any impact phase.  A
    # contact-phased or incommensurate profile can sit lifted at every
    # sampled step and the nose rows would never re-emit.
    arr_n = math.hypot(v_sr[0], v_sr[1])
    arr_ux, arr_uy = v_sr[0] / arr_n, v_sr[1] / arr_n

    def rear_tip(t_ms):
        t_arr = np.asarray(t_ms, dtype=np.float64)
        tau = t_arr - t_i
        tau_c = np.minimum(tau, 0.0)  # held at the impact pose afterwards
        phase = np.abs((t_arr % 0.2) / 0.1 - 1.0)
        judder = np.where(tau > 0, 1.5 * (1.0 - phase), 0.0)
        return (
            tip_rear[0] + v_sr[0] * tau_c - judder * arr_ux,
            tip_rear[1] + v_sr[1] * tau_c + 0.5 * g_rear * tau_c * tau_c
            - judder * arr_uy,
        )

    def rear_dir(t_ms):
        tau = np.asarray(t_ms, dtype=np.float64) - t_i
        tau_c = np.minimum(tau, 0.0)
        return np.broadcast_to(v_sr[0], tau.shape).copy(), v_sr[1] + g_rear * tau_c

    shuttle_rear = _Shuttle(
        t_on=t_i - 45.0,
        t_off=t_i + 1.0,
        tip_fn=rear_tip,
        dir_fn=rear_dir,
        cork_r=spec.cork_r_mm / s_rear,
        skirt_len=spec.skirt_len_mm / s_rear,
        skirt_r=spec.skirt_r_mm / s_rear,
        nose_frac=0.5,
        bloom_px=0.9,
        bloom_window=(t_i, t_i + 0.35),
    )

    return {
        "lateral": [shuttle_lat, head, shaft_lat],
        "rear": [ring, shaft_rear, shuttle_rear],
        "lateral_racket": [head, shaft_lat],
        "rear_racket": [ring, shaft_rear],
        "shuttle_lat": shuttle_lat,
        "shuttle_rear": shuttle_rear,
        "tip_rear": tip_rear,
    }


def _noise_events(rng, rate_hz, duration_us, width, height):
    n = rng.poisson(rate_hz * duration_us / 1e6)
    t = np.sort(rng.integers(0, duration_us, size=n).astype(np.int64))
    x = rng.integers(0, width, size=n).astype(np.int64)
    y = rng.integers(0, height, size=n).astype(np.int64)
    p = (rng.integers(0, 2, size=n) * 2 - 1).astype(np.int8)
    return t, x, y, p


def _assemble(view, width, height, parts, trigger_t) -> EventStream:
    t = np.concatenate([p[0] for p in parts])
    x = np.concatenate([p[1] for p in parts])
    y = np.concatenate([p[2] for p in parts])
    p_ = np.concatenate([p[3] for p in parts])
    order = np.lexsort((p_, x, y, t))
    return EventStream(
        view=view,
        width=width,
        height=height,
        t=t[order],
        x=x[order].astype(np.int32),
        y=y[order].astype(np.int32),
        p=p_[order],
        trigger_t=trigger_t,
    )


def coverage_mask(spec: SceneSpec, view: str, t_us: int) -> np.ndarray:
    """Full-frame silhouette coverage at one step time (jitter-free);
    debugging and oracle support."""
    scene = _build_scene(spec)
    X = np.arange(spec.width, dtype=np.float64)[None, None, :]
    Y = np.arange(spec.height, dtype=np.float64)[None, :, None]
    t_col = np.array([t_us / 1000.0])[:, None, None]
    out = np.zeros((spec.height, spec.width), dtype=bool)
    for sil in scene[view]:
        out |= sil.cover(X, Y, t_col, 0.0, 0.0)[0]
    return out


def _shuttle_track(spec: SceneSpec, shuttle) -> np.ndarray:
    """Per-packet silhouette-centroid ground truth around the impact."""
    t_i_us = spec.t_impact_ms * 1000.0
    first = int(max(shuttle.t_on * 1000, t_i_us - 40_000)) // PACKET_US * PACKET_US
    last = int(min(shuttle.t_off * 1000, t_i_us + 45_000))
    rows = []
    r = shuttle.extent_px() + 2
    for t0 in range(first, last - PACKET_US, PACKET_US):
        mid_ms = (t0 + PACKET_US / 2) / 1000.0
        cen = shuttle.centers(np.array([mid_ms]))[0]
        x0 = max(int(cen[0] - r), 0)
        x1 = min(int(cen[0] + r), spec.width - 1)
        y0 = max(int(cen[1] - r), 0)
        y1 = min(int(cen[1] + r), spec.height - 1)
        if x0 > x1 or y0 > y1:
            continue
        X = np.arange(x0, x1 + 1, dtype=np.float64)[None, None, :]
        Y = np.arange(y0, y1 + 1, dtype=np.float64)[None, :, None]
        cov = shuttle.cover(X, Y, np.array([mid_ms])[:, None, None], 0.0, 0.0)[0]
        if not cov.any():
            continue
        ys, xs = np.nonzero(cov)
        rows.append((t0 + PACKET_US / 2, xs.mean() + x0, ys.mean() + y0))
    return np.asarray(rows, dtype=np.float64)


def generate_trial(spec: SceneSpec) -> tuple[EventStream, EventStream, GroundTruth]:
    """Render both views of one trial; identical specs give byte-identical
    streams."""
    scene = _build_scene(spec)
    duration_us = int(spec.duration_ms * 1000)
    t_impact_us = spec.t_impact_ms * 1000.0
    trigger_t = int(round(t_impact_us + spec.trigger_lag_ms * 1000.0))

    ss = np.random.SeedSequence(spec.seed)
    seeds = ss.spawn(2 + len(scene["lateral"]) + len(scene["rear"]))
    noise_lat = np.random.default_rng(seeds[0])
    noise_rear = np.random.default_rng(seeds[1])
    jitter_seeds = seeds[2:]

    parts_lat = []
    k = 0
    for sil in scene["lateral"]:
        parts_lat.append(
            _emit_events(sil, spec.width, spec.height, spec.jitter_px,
                         jitter_seeds[k], spec.event_scatter_px)
        )
        k += 1
    parts_rear = []
    rear_events_by_sil = []
    for sil in scene["rear"]:
        ev = _emit_events(sil, spec.width, spec.height, spec.jitter_px,
                          jitter_seeds[k], spec.event_scatter_px)
        parts_rear.append(ev)
        rear_events_by_sil.append(ev)
        k += 1
    parts_lat.append(
        _noise_events(noise_lat, spec.noise_rate_hz, duration_us, spec.width,
                      spec.height)
    )
    parts_rear.append(
        _noise_events(noise_rear, spec.noise_rate_hz, duration_us, spec.width,
                      spec.height)
    )
    lateral = _assemble(View.LATERAL, spec.width, spec.height, parts_lat, trigger_t)
    rear = _assemble(View.REAR, spec.width, spec.height, parts_rear, trigger_t)

    packet_start = int(t_impact_us) // PACKET_US * PACKET_US

    def packet_positive_pixels(parts):
        pix = []
        for t, x, y, p in parts:
            m = (t >= packet_start) & (t < packet_start + PACKET_US) & (p > 0)
            if m.any():
                pix.append(np.column_stack((x[m], y[m])))
        if not pix:
            return np.empty((0, 2), dtype=np.int64)
        return np.unique(np.concatenate(pix), axis=0)

    truth = GroundTruth(
        t_impact_us=t_impact_us,
        trigger_t_us=trigger_t,
        impact_uv_mm=(spec.impact_u_mm, spec.impact_v_mm),
        speed_in_plane_m_s=math.hypot(*spec.outbound_velocity),
        speed_total_m_s=math.hypot(
            math.hypot(*spec.outbound_velocity), spec.out_of_plane_speed
        ),
        tilt_deg=spec.tilt_deg,
        expected_location_status=spec.expected_location_status,
        impact_xy_lateral_px=(spec.impact_x_px, spec.impact_y_px),
        tip_rear_px=scene["tip_rear"],
        face_centre_rear_px=(spec.face_cx_px, spec.face_cy_px),
        rear_impact_packet_start_us=packet_start,
        racket_pixels_rear=packet_positive_pixels(rear_events_by_sil[:2]),
        shuttle_pixels_rear=packet_positive_pixels(rear_events_by_sil[2:]),
        shuttle_track_lateral=_shuttle_track(spec, scene["shuttle_lat"]),
    )
    return lateral, rear, truth


FAILURE_MODES = ("TipOutsideFace", "ShaftAngleInvalid")


def generate_failure_trial(
    spec: SceneSpec, mode: str
) -> tuple[EventStream, EventStream, GroundTruth]:
    """Perturb the scene so the requested failure is ground-truth-correct.

    TipOutsideFace moves the impact point well clear of the rim (a sideways
    miss, so the trailing skirt cannot reach back inside the face);
    ShaftAngleInvalid twists the racket beyond the +-60 deg limit.  Noise is
    disabled so the classification is a deterministic property of geometry.
    """
    if mode == "TipOutsideFace":
        spec = replace(
            spec,
            impact_u_mm=150.0,
            impact_v_mm=-40.0,
            outbound_velocity=(30.0, 8.0),
            noise_rate_hz=0.0,
        )
    elif mode == "ShaftAngleInvalid":
        spec = replace(spec, tilt_deg=70.0, noise_rate_hz=0.0)
    else:
        raise ValueError(f"unknown failure mode {mode!r}; want {FAILURE_MODES}")
    trial = generate_trial(spec)
    assert trial[2].expected_location_status == mode
    return trial


@dataclass
class BatchSpec:
    """Randomized batch of trials for end-to-end runs."""

    n_trials: int = 10
    participants: int = 2
    seed: int = 0
    speed_range: tuple[float, float] = (40.0, 60.0)
    u_range: tuple[float, float] = (-65.0, 65.0)
    v_range: tuple[float, float] = (-85.0, 85.0)
    tilt_range: tuple[float, float] = (-10.0, 10.0)
    noise_rate_hz: float = 2000.0
    failures: dict = field(default_factory=dict)  # mode -> fraction

    @classmethod
    def from_json(cls, path) -> "BatchSpec":
        with open(path) as fh:
            raw = json.load(fh)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown batch spec keys: {sorted(unknown)}")
        for key in ("speed_range", "u_range", "v_range", "tilt_range"):
            if key in raw:
                raw[key] = tuple(raw[key])
        return cls(**raw)


def sample_specs(batch: BatchSpec) -> list[tuple[str, str, SceneSpec, str]]:
    """(trial_id, participant, spec, failure_mode_or_empty) per trial.

    Success-trial impact points are confined to an inner safety ellipse of
    the face so the ground truth is unambiguous.
    """
    rng = np.random.default_rng(batch.seed)
    n_fail = {m: int(round(f * batch.n_trials)) for m, f in batch.failures.items()}
    modes = [""] * (batch.n_trials - sum(n_fail.values()))
    for m, c in n_fail.items():
        if m not in FAILURE_MODES:
            raise ValueError(f"unknown failure mode {m!r}")
        modes += [m] * c
    if len(modes) != batch.n_trials:
        raise ValueError("failure fractions exceed the batch size")
    rng.shuffle(modes)
    out = []
    for i in range(batch.n_trials):
        participant = f"P{i % batch.participants + 1:02d}"
        while True:
            u = rng.uniform(*batch.u_range)
            v = rng.uniform(*batch.v_range)
            if (u / batch.u_range[1]) ** 2 + (v / batch.v_range[1]) ** 2 <= 1.0:
                break
        speed = rng.uniform(*batch.speed_range)
        vy = rng.uniform(2.0, 9.0)
        spec = SceneSpec(
            seed=int(rng.integers(0, 2**31 - 1)),
            t_impact_ms=600.0 + rng.uniform(0.10, 0.40),
            impact_u_mm=float(u),
            impact_v_mm=float(v),
            inbound_velocity=(float(rng.uniform(-2.5, -0.8)),
                              float(rng.uniform(4.5, 6.5))),
            outbound_velocity=(float(math.sqrt(speed**2 - vy**2)), float(vy)),
            tilt_deg=float(rng.uniform(*batch.tilt_range)),
            noise_rate_hz=batch.noise_rate_hz,
            trigger_lag_ms=float(29.4 + rng.normal(0.0, 1.5)),
        )
        trial_id = f"{participant.lower()}_t{i + 1:03d}"
        out.append((trial_id, participant, spec, modes[i]))
    return out


def write_batch(batch: BatchSpec, out_dir: str | Path) -> Path:
    """Render a batch to disk: binary streams, an analysis manifest with
    noisy reference annotations, and the exact ground truth alongside."""
    from . import io as evio

    out = Path(out_dir)
    (out / "streams").mkdir(parents=True, exist_ok=True)
    trials_json = []
    gt_json = {}
    cal_lat = None
    for trial_id, participant, spec, mode in sample_specs(batch):
        if mode:
            lateral, rear, gt = generate_failure_trial(spec, mode)
        else:
            lateral, rear, gt = generate_trial(spec)
        cal_lat = spec.lateral_mm_per_px
        evio.write_stream(lateral, out / "streams" / f"{trial_id}_lateral.evs")
        evio.write_stream(rear, out / "streams" / f"{trial_id}_rear.evs")
        # Reference annotations: ground truth blurred by a plausible
        # measurement error of the comparison method.
        ref_rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 77]))
        trigger_rel_ms = (gt.t_impact_us - gt.trigger_t_us) / 1000.0
        reference = {
            "impact_time_ms": trigger_rel_ms + ref_rng.normal(0.0, 0.3),
            "speed_m_s": gt.speed_in_plane_m_s + ref_rng.normal(0.0, 0.4),
        }
        if gt.expected_location_status == "Success":
            reference["u_mm"] = gt.impact_uv_mm[0] + ref_rng.normal(0.0, 1.2)
            reference["v_mm"] = gt.impact_uv_mm[1] + ref_rng.normal(0.0, 1.2)
        trials_json.append(
            {
                "trial_id": trial_id,
                "participant": participant,
                "lateral": f"streams/{trial_id}_lateral.evs",
                "rear": f"streams/{trial_id}_rear.evs",
                "ransac_seed": int(spec.seed % 99991),
                "reference": reference,
            }
        )
        gt_json[trial_id] = {
            **gt.to_json_dict(),
            "failure_mode": mode or None,
            "scene_seed": spec.seed,
        }
    manifest = {
        "calibration": {"lateral_mm_per_px": cal_lat, "rear_mm_per_px": None},
        "trials": trials_json,
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )
    (out / "ground_truth.json").write_text(
        json.dumps(gt_json, indent=2, sort_keys=True) + "\n"
    )
    return out / "manifest.json"
