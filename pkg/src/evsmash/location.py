"""Impact location on the racket face from the rear view.

The rear camera faces the incoming player, so at contact the racket face
shows as a bright ellipse of positive-polarity events (the moving white rim)
with the shaft below it and the shuttle silhouette inside.  Processing runs
on the single 0.5 ms packet containing the impact time:

1. accumulate positive events into an image,
2. extract 8-connected regions of sufficient area in the upper image,
3. split face from shaft rows by lateral extent,
4. fit an ellipse to the face rim (direct least squares, ellipse-specific),
5. fit the shaft line with RANSAC and replace the ellipse tilt with the
   shaft angle (the long face axis is collinear with the shaft, and the
   shaft angle is far more stable under partial rim visibility),
6. take the lowest positive pixel strictly inside the face as the shuttle
   tip and express it in face coordinates (mm, origin at face centre).

Failures map to statuses rather than exceptions at the trial level:
TipOutsideFace, ShaftAngleInvalid (shaft beyond +-60 deg from vertical or an
unreliable line fit), FaceNotFound.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
from scipy import ndimage

from .events import (
    PACKET_US,
    Calibration,
    EventPacket,
    EventStream,
    PolarityImage,
    View,
    accumulate,
    rear_calibration_from_ellipse,
)

logger = logging.getLogger(__name__)


class LocationStatus(Enum):
    SUCCESS = "Success"
    TIP_OUTSIDE_FACE = "TipOutsideFace"
    SHAFT_ANGLE_INVALID = "ShaftAngleInvalid"
    FACE_NOT_FOUND = "FaceNotFound"


class LocationError(RuntimeError):
    """Stage failure inside locate_impact; carries the result status."""

    status: LocationStatus = LocationStatus.FACE_NOT_FOUND


class FaceNotFoundError(LocationError):
    status = LocationStatus.FACE_NOT_FOUND


class ShaftAngleError(LocationError):
    status = LocationStatus.SHAFT_ANGLE_INVALID


class TipOutsideFaceError(LocationError):
    status = LocationStatus.TIP_OUTSIDE_FACE


class EllipseFitError(ValueError):
    """Point set does not determine an ellipse."""


@dataclass
class LocateConfig:
    min_area_px: int = 50  # smallest region kept as a candidate
    upper_fraction: float = 0.6  # candidate centroid must be in this top part
    extent_ratio: float = 0.4  # face rows: extent >= ratio * max row extent
    ransac_iters: int = 200
    ransac_tol_px: float = 2.0  # inlier distance to the shaft line
    ransac_seed: int = 0
    max_shaft_deg: float = 60.0  # beyond this from vertical -> invalid
    # split/tip internals
    min_face_rows: int = 10  # narrower bands are not a face
    min_face_extent_px: float = 20.0  # widest row of a real face, lower bound
    min_shaft_rows: int = 10  # smaller leftovers are rim caps, not a shaft
    min_shaft_ratio: float = 0.3  # fit quality floors; a fit below any of
    min_shaft_inliers: int = 40  # them is ignored rather than trusted
    # A line fixed by a short segment has angle noise ~ tol/span; below
    # ~60 px that is worse than the rim fit it would replace, so the
    # correction only engages with a genuinely long shaft track.
    min_shaft_span_px: float = 60.0
    shaft_agree_deg: float = 12.0  # max |shaft - ellipse| tilt disagreement
    shaft_margin_px: float = 6.0  # shaft points: this far outside the ellipse
    # (the rim halo from breathing plus sensor scatter reaches ~3 px out;
    # points inside the margin would contaminate the shaft angle)
    tip_margin_px: float = 4.0  # tip search inset, rejects rim pixels
    min_tip_cluster_px: int = 12  # smallest pixel group accepted as shuttle
    tip_clearance_px: float = 2.5  # tip this close to the search edge means
    # the silhouette continues past it and the real tip lies outside


@dataclass(frozen=True)
class Region:
    """Pixel set of one connected component (or a derived pixel set)."""

    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "xs", np.asarray(self.xs, dtype=np.int64))
        object.__setattr__(self, "ys", np.asarray(self.ys, dtype=np.int64))
        if len(self.xs) != len(self.ys):
            raise ValueError("coordinate arrays must have equal length")

    @property
    def area(self) -> int:
        return len(self.xs)

    @property
    def centroid(self) -> tuple[float, float]:
        return float(self.xs.mean()), float(self.ys.mean())

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        """(x0, y0, x1, y1), inclusive."""
        return (
            int(self.xs.min()),
            int(self.ys.min()),
            int(self.xs.max()),
            int(self.ys.max()),
        )

    def points(self) -> np.ndarray:
        return np.column_stack((self.xs, self.ys)).astype(np.float64)


@dataclass(frozen=True)
class EllipseParams:
    """Geometric ellipse: centre, semi-axes (a >= b), tilt from vertical.

    ``theta`` is the major-axis angle from the image vertical in
    (-pi/2, pi/2], positive when the head leans toward +x.
    """

    cx: float
    cy: float
    a: float  # semi-major, px
    b: float  # semi-minor, px
    theta: float  # rad

    def __post_init__(self) -> None:
        if not (self.a >= self.b > 0):
            raise ValueError("need a >= b > 0")
        if not (-math.pi / 2 < self.theta <= math.pi / 2 + 1e-12):
            raise ValueError("theta must lie in (-pi/2, pi/2]")

    @property
    def major_dir(self) -> tuple[float, float]:
        """Unit vector along the major axis toward the head (up in image)."""
        return math.sin(self.theta), -math.cos(self.theta)

    @property
    def minor_dir(self) -> tuple[float, float]:
        """Unit vector along the minor axis toward image right."""
        return math.cos(self.theta), math.sin(self.theta)

    def face_frame(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        """(u, v) components in px: u along minor axis, v along major."""
        dx = np.asarray(x, dtype=np.float64) - self.cx
        dy = np.asarray(y, dtype=np.float64) - self.cy
        ux, uy = self.minor_dir
        vx, vy = self.major_dir
        return dx * ux + dy * uy, dx * vx + dy * vy

    def contains(self, x, y, inset_px: float = 0.0):
        """True where (x, y) lies strictly inside the ellipse inset by
        ``inset_px`` (negative values expand)."""
        sb = self.b - inset_px
        sa = self.a - inset_px
        if sb <= 0 or sa <= 0:
            raise ValueError("inset exceeds the ellipse axes")
        u, v = self.face_frame(x, y)
        return (u / sb) ** 2 + (v / sa) ** 2 < 1.0


@dataclass(frozen=True)
class ShaftLine:
    phi: float  # rad from vertical, (-pi/2, pi/2]
    inlier_count: int
    inlier_ratio: float
    centroid: tuple[float, float] = (0.0, 0.0)
    span_px: float = 0.0  # inlier extent along the line


@dataclass(frozen=True)
class FaceCoordinates:
    """Impact point on the face: +u toward image right after de-tilting,
    +v toward the racket head, millimetres from the face centre."""

    u_mm: float
    v_mm: float


@dataclass(frozen=True)
class LocationResult:
    status: LocationStatus
    coords: FaceCoordinates | None = None
    ellipse: EllipseParams | None = None  # tilt-corrected when available
    shaft: ShaftLine | None = None
    tip_px: tuple[int, int] | None = None
    rear_mm_per_px: float | None = None
    tilt_corrected: bool = False
    detail: str = ""


def select_impact_packet(
    packets: Sequence[EventPacket], t_impact: float
) -> EventPacket:
    """The packet whose [t_start, t_start + 500) window contains t_impact."""
    if not packets:
        raise ValueError("empty packet sequence")
    first = packets[0].t_start
    idx = int(t_impact - first) // PACKET_US
    if t_impact < first or idx >= len(packets):
        raise ValueError(
            f"t_impact {t_impact:.0f} us outside packet range "
            f"[{first}, {packets[-1].t_start + PACKET_US})"
        )
    return packets[idx]


def extract_candidates(
    image: PolarityImage, cfg: LocateConfig | None = None
) -> list[Region]:
    """8-connected positive regions with sufficient area whose centroid lies
    in the upper part of the image, largest first."""
    cfg = cfg or LocateConfig()
    mask = image.counts > 0
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=np.int8))
    regions = []
    for lab in range(1, n + 1):
        ys, xs = np.nonzero(labels == lab)
        if len(xs) < cfg.min_area_px:
            continue
        if ys.mean() >= cfg.upper_fraction * image.height:
            continue
        regions.append(Region(xs=xs, ys=ys))
    regions.sort(key=lambda r: -r.area)
    return regions


def split_face_shaft(
    regions: Sequence[Region], cfg: LocateConfig | None = None
) -> tuple[Region, Region | None]:
    """Face and shaft pixel sets by per-row lateral extent.

    Over the merged candidate pixels, rows at least ``extent_ratio`` times
    as wide as the widest row form the face band; merged pixels from the
    top of the image down to the band's last row are the face, rows below
    it the shaft.  A leftover of fewer than ``min_shaft_rows`` rows is the
    rim's bottom cap, not a shaft, and yields None.
    """
    cfg = cfg or LocateConfig()
    if not regions:
        raise FaceNotFoundError("no candidate regions")
    xs = np.concatenate([r.xs for r in regions])
    ys = np.concatenate([r.ys for r in regions])
    y0 = ys.min()
    idx = ys - y0
    n_rows = int(idx.max()) + 1
    row_min = np.full(n_rows, np.iinfo(np.int64).max)
    row_max = np.full(n_rows, np.iinfo(np.int64).min)
    np.minimum.at(row_min, idx, xs)
    np.maximum.at(row_max, idx, xs)
    occupied = row_max >= row_min
    extent = np.where(occupied, row_max - row_min, -1).astype(np.float64)
    widest = extent.max()
    if widest < cfg.min_face_extent_px:
        raise FaceNotFoundError(
            f"widest candidate row spans {widest:.0f} px, "
            f"below the {cfg.min_face_extent_px:.0f} px face minimum"
        )
    passing = np.flatnonzero(occupied & (extent >= cfg.extent_ratio * widest))
    if not len(passing):
        raise FaceNotFoundError("no row passes the extent threshold")
    band_rows = int(passing[-1] - passing[0]) + 1
    if band_rows < cfg.min_face_rows:
        raise FaceNotFoundError(
            f"face band spans {band_rows} rows, need {cfg.min_face_rows}"
        )
    split_y = y0 + int(passing[-1])
    in_face = ys <= split_y
    face = Region(xs=xs[in_face], ys=ys[in_face])
    sxs, sys = xs[~in_face], ys[~in_face]
    shaft = None
    if len(sxs) and int(sys.max() - sys.min()) + 1 >= cfg.min_shaft_rows:
        shaft = Region(xs=sxs, ys=sys)
    return face, shaft


def fit_ellipse(points: np.ndarray) -> EllipseParams:
    """Direct least-squares conic fit constrained to an ellipse.

    ``points`` is (n, 2) of pixel coordinates sampled on the rim (the
    positive events are the moving rim, so the region already is the
    boundary).  Uses the numerically stable block decomposition of the
    constrained eigenproblem; input is centred and scaled first.

    Raises EllipseFitError for degenerate input (fewer than 6 points,
    collinear points, or a non-elliptical conic).
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be an (n, 2) array")
    if len(pts) < 6:
        raise EllipseFitError(f"need at least 6 points, got {len(pts)}")
    mean = pts.mean(axis=0)
    scale = pts.std(axis=0).mean()
    if scale <= 0:
        raise EllipseFitError("points are coincident")
    xn = (pts[:, 0] - mean[0]) / scale
    yn = (pts[:, 1] - mean[1]) / scale

    d1 = np.column_stack((xn * xn, xn * yn, yn * yn))  # quadratic block
    d2 = np.column_stack((xn, yn, np.ones_like(xn)))  # linear block
    s1 = d1.T @ d1
    s2 = d1.T @ d2
    s3 = d2.T @ d2
    try:
        t_mat = -np.linalg.solve(s3, s2.T)
    except np.linalg.LinAlgError:
        raise EllipseFitError("degenerate point configuration") from None
    m = s1 + s2 @ t_mat
    # inv(C1) @ M with C1 the ellipse constraint 4ac - b^2 = 1.
    m_red = np.array([m[2] / 2.0, -m[1], m[0] / 2.0])
    eigval, eigvec = np.linalg.eig(m_red)
    cond = 4 * eigvec[0] * eigvec[2] - eigvec[1] ** 2
    ok = np.flatnonzero((cond > 0) & np.isfinite(eigval))
    if not len(ok):
        raise EllipseFitError("no elliptical solution for this point set")
    a1 = np.real(eigvec[:, ok[0]])
    conic_n = np.concatenate((a1, t_mat @ a1))

    # Undo normalization: substitute x -> (x - mx)/s, y -> (y - my)/s.
    an, bn, cn, dn, en, fn = conic_n
    s = scale
    mx, my = mean
    conic = np.array(
        [
            an / s**2,
            bn / s**2,
            cn / s**2,
            dn / s - (2 * an * mx + bn * my) / s**2,
            en / s - (bn * mx + 2 * cn * my) / s**2,
            fn
            - dn * mx / s
            - en * my / s
            + (an * mx**2 + bn * mx * my + cn * my**2) / s**2,
        ]
    )
    return _conic_to_ellipse(conic)


def ellipse_distance(ellipse: EllipseParams, xs, ys) -> np.ndarray:
    """First-order distance from points to the ellipse contour
    (|Q| / |grad Q| for the implicit quadric Q)."""
    u, v = ellipse.face_frame(np.asarray(xs, dtype=np.float64),
                              np.asarray(ys, dtype=np.float64))
    q = (u / ellipse.b) ** 2 + (v / ellipse.a) ** 2 - 1.0
    cu = 2.0 * u / ellipse.b**2
    cv = 2.0 * v / ellipse.a**2
    sin_t, cos_t = math.sin(ellipse.theta), math.cos(ellipse.theta)
    gx = cu * cos_t + cv * sin_t
    gy = cu * sin_t - cv * cos_t
    grad = np.hypot(gx, gy)
    grad = np.where(grad == 0, 1.0, grad)
    return np.abs(q) / grad


def fit_ellipse_trimmed(
    points: np.ndarray, trim_px: float = 3.5, iters: int = 2
) -> tuple[EllipseParams, np.ndarray]:
    """Ellipse fit with outlier trimming.

    The rim band pixels lie within the band half-width of the true contour,
    while the shuttle silhouette sits well inside the face; one or two
    passes of dropping points farther than ``trim_px`` from the current fit
    removes the interior pixels.  Returns the fit and the kept-point mask.
    """
    pts = np.asarray(points, dtype=np.float64)
    keep = np.ones(len(pts), dtype=bool)
    ellipse = fit_ellipse(pts)
    for _ in range(iters):
        dist = ellipse_distance(ellipse, pts[:, 0], pts[:, 1])
        candidate = dist <= trim_px
        if candidate.sum() < 6 or candidate.all():
            break
        keep = candidate
        ellipse = fit_ellipse(pts[keep])
    return ellipse, keep


def _conic_to_ellipse(conic: np.ndarray) -> EllipseParams:
    a_, b_, c_, d_, e_, f_ = conic
    m2 = np.array([[a_, b_ / 2.0], [b_ / 2.0, c_]])
    det = np.linalg.det(m2)
    if det <= 0:
        raise EllipseFitError("conic is not an ellipse")
    centre = np.linalg.solve(2.0 * m2, [-d_, -e_])
    # Conic value at the centre; the ellipse is p' M2 p = -f0 around it.
    f0 = centre @ m2 @ centre + np.array([d_, e_]) @ centre + f_
    if f0 == 0:
        raise EllipseFitError("degenerate (point) conic")
    eigval, eigvec = np.linalg.eigh(m2)
    radii2 = -f0 / eigval
    if np.any(radii2 <= 0):
        raise EllipseFitError("conic is not an ellipse")
    radii = np.sqrt(radii2)
    k = int(np.argmax(radii))  # major axis <-> smaller eigenvalue
    major, minor = float(radii[k]), float(radii[1 - k])
    dvec = eigvec[:, k]
    theta = _angle_from_vertical(dvec)
    return EllipseParams(
        cx=float(centre[0]), cy=float(centre[1]), a=major, b=minor, theta=theta
    )


def _angle_from_vertical(direction: np.ndarray) -> float:
    """Axis angle from the image vertical, normalized to (-pi/2, pi/2]."""
    dx, dy = float(direction[0]), float(direction[1])
    if dy > 0 or (dy == 0 and dx < 0):
        dx, dy = -dx, -dy  # point the axis upward (image y grows down)
    theta = math.atan2(dx, -dy)
    if theta <= -math.pi / 2:
        theta += math.pi
    elif theta > math.pi / 2:
        theta -= math.pi
    return theta


def fit_shaft(
    points: np.ndarray,
    iters: int = 200,
    tol_px: float = 2.0,
    seed: int = 0,
) -> ShaftLine:
    """RANSAC line through the shaft pixels, refit on inliers by total
    least squares.  Deterministic for a given seed."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise ValueError("need at least two shaft points")
    n = len(pts)
    rng = np.random.default_rng(seed)
    best_count = -1
    best_inliers = None
    for _ in range(iters):
        i, j = rng.choice(n, size=2, replace=False)
        d = pts[j] - pts[i]
        norm = math.hypot(d[0], d[1])
        if norm == 0:
            continue
        normal = np.array([-d[1], d[0]]) / norm
        dist = np.abs((pts - pts[i]) @ normal)
        inliers = dist <= tol_px
        count = int(inliers.sum())
        if count > best_count:
            best_count = count
            best_inliers = inliers
    if best_inliers is None:
        raise ValueError("shaft points are all coincident")
    sel = pts[best_inliers]
    centre = sel.mean(axis=0)
    cov = (sel - centre).T @ (sel - centre)
    eigval, eigvec = np.linalg.eigh(cov)
    direction = eigvec[:, int(np.argmax(eigval))]
    phi = _angle_from_vertical(direction)
    along = (sel - centre) @ direction
    return ShaftLine(
        phi=phi,
        inlier_count=best_count,
        inlier_ratio=best_count / n,
        centroid=(float(centre[0]), float(centre[1])),
        span_px=float(along.max() - along.min()),
    )


def correct_tilt(
    ellipse: EllipseParams,
    shaft: ShaftLine | None,
    max_shaft_deg: float = 60.0,
) -> tuple[EllipseParams, bool]:
    """Replace the ellipse tilt with the shaft angle.

    Returns ``(params, corrected)``; with no shaft the ellipse is returned
    unchanged and ``corrected`` is False.  Raises ShaftAngleError when the
    racket orientation that will be used, shaft angle or otherwise the
    ellipse tilt, deviates more than ``max_shaft_deg`` from vertical.
    """
    angle = ellipse.theta if shaft is None else shaft.phi
    if abs(math.degrees(angle)) > max_shaft_deg:
        raise ShaftAngleError(
            f"racket at {math.degrees(angle):.1f} deg from vertical, "
            f"limit {max_shaft_deg:.0f} deg"
        )
    if shaft is None:
        return ellipse, False
    return (
        EllipseParams(
            cx=ellipse.cx, cy=ellipse.cy, a=ellipse.a, b=ellipse.b, theta=shaft.phi
        ),
        True,
    )


def find_tip(
    image: PolarityImage,
    ellipse: EllipseParams,
    margin_px: float = 4.0,
    min_cluster_px: int = 12,
    clearance_px: float = 2.5,
) -> tuple[int, int]:
    """Lowest pixel of the shuttle silhouette strictly inside the face.

    The positive pixels inside the fitted rim (inset by ``margin_px``, which
    keeps scattered rim pixels out of the candidate set) are grouped with a
    tolerance for small gaps (the silhouette outline is sampled sparsely
    within a packet, so strict adjacency over-fragments it) and the shuttle
    is taken to be the largest group by pixel count.  Lone noise pixels and
    short arcs bleeding off the rim never outweigh the shuttle silhouette;
    a largest group below ``min_cluster_px`` therefore means the shuttle is
    not on the face.  The tip is the bottom pixel of the shuttle group,
    ties on y broken by distance to the minor axis, then by x.

    A tip closer than ``clearance_px`` to the search boundary is rejected:
    it means the silhouette runs on past the boundary and its true lowest
    point lies outside the face, with only an overhanging part visible
    inside.
    """
    mask = image.counts > 0
    ys, xs = np.nonzero(mask)
    if not len(xs):
        raise TipOutsideFaceError("no positive pixels in the impact packet")
    inside = ellipse.contains(xs, ys, inset_px=margin_px)
    if not inside.any():
        raise TipOutsideFaceError("no positive pixels inside the face")
    iys, ixs = ys[inside], xs[inside]
    interior = np.zeros((image.height, image.width), dtype=bool)
    interior[iys, ixs] = True
    bridged = ndimage.binary_dilation(
        interior, structure=np.ones((3, 3)), iterations=2
    )
    labels, _ = ndimage.label(bridged, structure=np.ones((3, 3)))
    point_labels = labels[iys, ixs]
    sizes = np.bincount(point_labels)
    if sizes.max() < min_cluster_px:
        raise TipOutsideFaceError(
            "no shuttle-sized pixel group inside the face"
        )
    sel = point_labels == int(np.argmax(sizes))
    gxs, gys = ixs[sel], iys[sel]
    bottom = gys == gys.max()
    bxs, bys = gxs[bottom], gys[bottom]
    _, bv = ellipse.face_frame(bxs, bys)
    order = np.lexsort((bxs, np.abs(bv)))
    tip = int(bxs[order[0]]), int(bys[order[0]])
    if not ellipse.contains(tip[0], tip[1], inset_px=margin_px + clearance_px):
        raise TipOutsideFaceError(
            "shuttle silhouette runs past the face boundary; "
            "its lowest visible pixel is not the tip"
        )
    return tip


def to_face_coords(
    tip_px: tuple[int, int], ellipse: EllipseParams, cal: Calibration
) -> FaceCoordinates:
    """Tip pixel -> millimetres in the face frame (+v toward head, +u right
    after de-tilting)."""
    if cal.rear_mm_per_px is None:
        raise ValueError("rear calibration scale is not set")
    u, v = ellipse.face_frame(tip_px[0], tip_px[1])
    return FaceCoordinates(
        u_mm=float(u) * cal.rear_mm_per_px, v_mm=float(v) * cal.rear_mm_per_px
    )


def locate_impact(
    stream: EventStream,
    t_impact: float,
    cal: Calibration,
    cfg: LocateConfig | None = None,
) -> LocationResult:
    """Run the rear-view location chain for the packet containing t_impact.

    Every failure path yields the corresponding non-Success status with the
    diagnostics gathered so far.
    """
    cfg = cfg or LocateConfig()
    if stream.view is not View.REAR:
        raise ValueError("impact location runs on the rear-view stream")
    if not len(stream) or not (stream.t_first <= t_impact <= stream.t_last):
        raise ValueError("t_impact outside the rear stream range")
    packet_start = (int(t_impact) // PACKET_US) * PACKET_US
    image = accumulate(stream, packet_start, PACKET_US, polarity=1)

    candidates = extract_candidates(image, cfg)
    if not candidates:
        return LocationResult(
            status=LocationStatus.FACE_NOT_FOUND,
            detail="no candidate regions in the impact packet",
        )
    try:
        face, _ = split_face_shaft(candidates, cfg)
    except FaceNotFoundError as exc:
        return LocationResult(status=exc.status, detail=str(exc))

    # Fit on the merged face pixels with interior-point trimming: the rim
    # may fragment into several regions, and the shuttle silhouette inside
    # the face must not pull the fit.
    try:
        raw_ellipse, _ = fit_ellipse_trimmed(face.points())
    except EllipseFitError as exc:
        return LocationResult(
            status=LocationStatus.FACE_NOT_FOUND, detail=f"ellipse fit: {exc}"
        )

    # Shaft pixels: candidate pixels clearly outside the fitted rim and on
    # the handle side of the long axis.  Working in the face frame stays
    # robust to strong tilts, where "rows below the face" breaks down, and
    # the handle-side cut matters: the shuttle's approach trail leaves the
    # face past the opposite vertex, and a line through trail plus shaft
    # can carry enough inliers over enough span to look trustworthy while
    # pointing along the arrival instead of the shaft.
    cand_xs = np.concatenate([r.xs for r in candidates])
    cand_ys = np.concatenate([r.ys for r in candidates])
    outside = ~raw_ellipse.contains(cand_xs, cand_ys,
                                    inset_px=-cfg.shaft_margin_px)
    _, cand_v = raw_ellipse.face_frame(cand_xs, cand_ys)
    outside &= cand_v <= -0.85 * raw_ellipse.a
    sxs, sys = cand_xs[outside], cand_ys[outside]
    shaft: ShaftLine | None = None
    if len(sxs) >= cfg.min_shaft_rows and (
        int(sys.max() - sys.min()) + 1 >= cfg.min_shaft_rows
        or int(sxs.max() - sxs.min()) + 1 >= cfg.min_shaft_rows
    ):
        shaft = fit_shaft(
            np.column_stack((sxs, sys)),
            iters=cfg.ransac_iters,
            tol_px=cfg.ransac_tol_px,
            seed=cfg.ransac_seed,
        )
    # The shaft angle replaces the ellipse tilt only when the line fit is
    # trustworthy: enough inliers over enough length, and roughly collinear
    # with the fitted long axis (they are the same physical direction, so a
    # large disagreement convicts the sparser shaft fit, not the rim fit).
    if shaft is not None:
        axis_diff = abs(shaft.phi - raw_ellipse.theta) % math.pi
        axis_diff = min(axis_diff, math.pi - axis_diff)
    usable = shaft is not None and (
        shaft.inlier_ratio >= cfg.min_shaft_ratio
        and shaft.inlier_count >= cfg.min_shaft_inliers
        and shaft.span_px >= cfg.min_shaft_span_px
        and math.degrees(axis_diff) <= cfg.shaft_agree_deg
    )
    try:
        ellipse, corrected = correct_tilt(
            raw_ellipse, shaft if usable else None, cfg.max_shaft_deg
        )
    except ShaftAngleError as exc:
        return LocationResult(
            status=exc.status, ellipse=raw_ellipse, shaft=shaft, detail=str(exc)
        )

    rear_scale = cal.rear_mm_per_px
    if rear_scale is None:
        rear_scale = rear_calibration_from_ellipse(
            2 * ellipse.a, 2 * ellipse.b, cal.face_inner_long_mm, cal.face_inner_ml_mm
        )
    try:
        tip = find_tip(
            image,
            ellipse,
            margin_px=cfg.tip_margin_px,
            min_cluster_px=cfg.min_tip_cluster_px,
            clearance_px=cfg.tip_clearance_px,
        )
    except TipOutsideFaceError as exc:
        return LocationResult(
            status=exc.status,
            ellipse=ellipse,
            shaft=shaft,
            rear_mm_per_px=rear_scale,
            tilt_corrected=corrected,
            detail=str(exc),
        )
    coords = to_face_coords(
        tip,
        ellipse,
        Calibration(
            lateral_mm_per_px=cal.lateral_mm_per_px,
            rear_mm_per_px=rear_scale,
            face_inner_long_mm=cal.face_inner_long_mm,
            face_inner_ml_mm=cal.face_inner_ml_mm,
        ),
    )
    if (
        abs(coords.u_mm) > cal.face_inner_ml_mm / 2
        or abs(coords.v_mm) > cal.face_inner_long_mm / 2
    ):
        return LocationResult(
            status=LocationStatus.TIP_OUTSIDE_FACE,
            ellipse=ellipse,
            shaft=shaft,
            tip_px=tip,
            rear_mm_per_px=rear_scale,
            tilt_corrected=corrected,
            detail=f"tip maps outside the physical face "
            f"({coords.u_mm:.1f}, {coords.v_mm:.1f}) mm",
        )
    logger.debug(
        "impact at (%.1f, %.1f) mm, tilt %.1f deg%s",
        coords.u_mm,
        coords.v_mm,
        math.degrees(ellipse.theta),
        " (shaft-corrected)" if corrected else "",
    )
    return LocationResult(
        status=LocationStatus.SUCCESS,
        coords=coords,
        ellipse=ellipse,
        shaft=shaft,
        tip_px=tip,
        rear_mm_per_px=rear_scale,
        tilt_corrected=corrected,
    )
