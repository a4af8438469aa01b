"""Assigning a temperature to every range pixel.

Each valid TOF pixel is back-projected, moved into the IR frame and
projected onto the thermopile array (:func:`build_projection_map`). The
resulting continuous IR coordinates drive four upsamplers:

* ``nearest``   - temperature of the IR pixel the projection falls in
* ``bilinear``  - position-weighted mix of the 4 surrounding IR centers
* ``depth``     - same 4 IR pixels, weighted by depth similarity
* ``segment``   - splits mixed IR pixels into two depth segments and solves
  for the hidden segment temperature from the area-weighted measurement

The *footprint* of an IR pixel is the set of valid TOF pixels whose
projection rounds to it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Extrinsics, Intrinsics, pixel_rays

DEFAULT_HOMOGENEITY_TOL = 0.05  # m
DEFAULT_AREA_FLOOR = 0.02
WEIGHT_EPS = 1e-6  # m


class FusionError(ValueError):
    pass


@dataclass(frozen=True)
class ProjectionMap:
    """Continuous IR coordinates for every TOF pixel."""

    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray
    ir_width: int
    ir_height: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid.shape

    def nearest_index(self) -> tuple[np.ndarray, np.ndarray]:
        """Integer IR column/row for every TOF pixel (rounding half up; -1 where invalid)."""
        iu = np.where(self.valid, np.floor(np.where(self.valid, self.u, 0) + 0.5), -1).astype(int)
        iv = np.where(self.valid, np.floor(np.where(self.valid, self.v, 0) + 0.5), -1).astype(int)
        return iu, iv

    def footprint_index(self) -> np.ndarray:
        """Flat IR pixel index per TOF pixel, -1 where invalid."""
        iu, iv = self.nearest_index()
        return np.where(self.valid, iv * self.ir_width + iu, -1)


@dataclass
class FusedImage:
    data: np.ndarray  # degC, NaN where invalid
    valid: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class Segment:
    mean_depth: float
    members: np.ndarray  # indices into the footprint sample list
    area: float  # fraction of the footprint


@dataclass(frozen=True)
class PixelSegments:
    segments: tuple[Segment, ...]
    spread: float  # max - min depth over the footprint

    @property
    def mixed(self) -> bool:
        return len(self.segments) > 1


def build_projection_map(
    depth: np.ndarray, K_tof: Intrinsics, K_ir: Intrinsics, ext: Extrinsics
) -> ProjectionMap:
    """Project every TOF pixel onto the IR array.

    Invalid depth (NaN or non-positive), points behind the IR camera and
    projections outside the IR rectangle are flagged invalid per pixel.
    """
    depth = np.asarray(depth, dtype=float)
    if depth.shape != K_tof.shape:
        raise FusionError(f"depth image shape {depth.shape} does not match TOF intrinsics {K_tof.shape}")
    vv, uu = np.mgrid[0 : K_tof.height, 0 : K_tof.width]
    ok = np.isfinite(depth) & (depth > 0)
    pts = pixel_rays(uu, vv, K_tof) * np.where(ok, depth, 1.0)[..., None]
    q = pts @ ext.rotation.T + np.asarray(ext.t)
    z = q[..., 2]
    in_front = z > 0
    zs = np.where(in_front, z, 1.0)
    u = K_ir.fx * q[..., 0] / zs + K_ir.cx
    v = K_ir.fy * q[..., 1] / zs + K_ir.cy
    valid = ok & in_front & K_ir.contains(u, v)
    return ProjectionMap(
        u=np.where(valid, u, np.nan),
        v=np.where(valid, v, np.nan),
        valid=valid,
        ir_width=K_ir.width,
        ir_height=K_ir.height,
    )


def _check(pmap: ProjectionMap, thermal: np.ndarray) -> np.ndarray:
    thermal = np.asarray(thermal, dtype=float)
    if thermal.shape != (pmap.ir_height, pmap.ir_width):
        raise FusionError(
            f"thermal image shape {thermal.shape} does not match projection map IR size "
            f"{(pmap.ir_height, pmap.ir_width)}"
        )
    return thermal


def fuse_nearest(pmap: ProjectionMap, thermal: np.ndarray) -> FusedImage:
    thermal = _check(pmap, thermal)
    iu, iv = pmap.nearest_index()
    out = np.where(pmap.valid, thermal[np.clip(iv, 0, None), np.clip(iu, 0, None)], np.nan)
    return FusedImage(out, pmap.valid.copy())


def _cell(pmap: ProjectionMap):
    """Bilinear cell corners (clamped to the array) and fractional offsets."""
    u = np.where(pmap.valid, pmap.u, 0.0)
    v = np.where(pmap.valid, pmap.v, 0.0)
    x0 = np.floor(u)
    y0 = np.floor(v)
    fx = u - x0
    fy = v - y0
    x0 = x0.astype(int)
    y0 = y0.astype(int)
    xs = (np.clip(x0, 0, pmap.ir_width - 1), np.clip(x0 + 1, 0, pmap.ir_width - 1))
    ys = (np.clip(y0, 0, pmap.ir_height - 1), np.clip(y0 + 1, 0, pmap.ir_height - 1))
    # corner order: (x0,y0) (x1,y0) (x0,y1) (x1,y1)
    cols = np.stack([xs[0], xs[1], xs[0], xs[1]], axis=-1)
    rows = np.stack([ys[0], ys[0], ys[1], ys[1]], axis=-1)
    return cols, rows, fx, fy


def _lerp(a, b, f):
    return np.clip(a + f * (b - a), np.minimum(a, b), np.maximum(a, b))


def fuse_bilinear(pmap: ProjectionMap, thermal: np.ndarray) -> FusedImage:
    """Bilinear interpolation between IR pixel centers; borders clamp."""
    thermal = _check(pmap, thermal)
    cols, rows, fx, fy = _cell(pmap)
    t = thermal[rows, cols]
    top = _lerp(t[..., 0], t[..., 1], fx)
    bottom = _lerp(t[..., 2], t[..., 3], fx)
    out = np.where(pmap.valid, _lerp(top, bottom, fy), np.nan)
    return FusedImage(out, pmap.valid.copy())


def footprint_mean_depth(pmap: ProjectionMap, depth: np.ndarray) -> np.ndarray:
    """Mean depth of each IR pixel's footprint, NaN for empty footprints. Shape ``(ir_h, ir_w)``."""
    idx = pmap.footprint_index().ravel()
    ok = idx >= 0
    n = pmap.ir_width * pmap.ir_height
    counts = np.bincount(idx[ok], minlength=n)
    sums = np.bincount(idx[ok], weights=np.asarray(depth, dtype=float).ravel()[ok], minlength=n)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return mean.reshape(pmap.ir_height, pmap.ir_width)


def depth_weights(d, neighbour_depths, mode: str = "similarity", eps: float = WEIGHT_EPS) -> np.ndarray:
    """Interpolation weights for the 4 cell corners given their footprint depths.

    ``d`` has shape ``S``, ``neighbour_depths`` shape ``S + (4,)``; NaN
    neighbour depths are dropped. ``similarity`` weights are proportional
    to ``1 / max(|d - d_i|, eps)``, and corners matching within ``eps`` share
    all the weight. ``as_printed`` weights are proportional to
    ``|d - d_i|`` itself (equal weights if all differences vanish). Rows
    with every corner dropped come back as NaN.
    """
    d = np.asarray(d, dtype=float)[..., None]
    nd = np.asarray(neighbour_depths, dtype=float)
    avail = np.isfinite(nd)
    diff = np.where(avail, np.abs(d - np.where(avail, nd, 0.0)), np.inf)
    if mode == "similarity":
        exact = avail & (diff <= eps)
        raw = np.where(avail, 1.0 / np.maximum(diff, eps), 0.0)
        raw = np.where(exact.any(axis=-1, keepdims=True), exact.astype(float), raw)
    elif mode == "as_printed":
        raw = np.where(avail, diff, 0.0)
        flat = raw.sum(axis=-1, keepdims=True) == 0
        raw = np.where(flat, avail.astype(float), raw)
    else:
        raise ValueError(f"unknown weighting mode {mode!r}")
    total = raw.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(total > 0, raw / total, np.nan)


def fuse_depth_weighted(
    pmap: ProjectionMap, thermal: np.ndarray, depth: np.ndarray, mode: str = "similarity"
) -> FusedImage:
    """Interpolate the 4 surrounding IR pixels, weighting each by depth agreement.

    A corner's depth is the mean depth of its footprint. Corners with empty
    footprints are dropped; if all four are, the pixel falls back to
    nearest-neighbour.
    """
    thermal = _check(pmap, thermal)
    depth = np.asarray(depth, dtype=float)
    cols, rows, _, _ = _cell(pmap)
    mean_depth = footprint_mean_depth(pmap, depth)
    w = depth_weights(np.where(pmap.valid, depth, 0.0), mean_depth[rows, cols], mode)
    t = thermal[rows, cols]
    usable = np.isfinite(w)
    # offset from the first corner keeps uniform inputs exact
    ref = t[..., 0]
    out = ref + np.sum(np.where(usable, w * (t - ref[..., None]), 0.0), axis=-1)
    avail = np.isfinite(mean_depth[rows, cols])
    lo = np.min(np.where(avail, t, np.inf), axis=-1)
    hi = np.max(np.where(avail, t, -np.inf), axis=-1)
    out = np.clip(out, np.minimum(lo, hi), np.maximum(lo, hi))
    no_corner = ~usable.any(axis=-1)
    nearest = fuse_nearest(pmap, thermal).data
    out = np.where(no_corner, nearest, out)
    out = np.where(pmap.valid, out, np.nan)
    return FusedImage(out, pmap.valid.copy(), {"nearest_fallback": int(np.sum(no_corner & pmap.valid))})


def kmeans_1d(values: np.ndarray) -> np.ndarray:
    """Globally optimal two-cluster k-means on scalars.

    In 1D the optimal partition is a threshold on the sorted values, so
    every split between distinct neighbours is scored by its within-cluster
    sum of squares using prefix sums. The result is a fixed point of the
    Lloyd iteration (a Lloyd run seeded at min and max can stall in a worse
    one). Returns a boolean array, True for members of the upper cluster.
    """
    x = np.asarray(values, dtype=float)
    n = x.size
    if n < 2:
        return np.zeros(n, dtype=bool)
    xs = np.sort(x)
    # shift for numerical stability of the sum-of-squares identity
    xs0 = xs - xs.mean()
    cs = np.cumsum(xs0)
    cs2 = np.cumsum(xs0 * xs0)
    i = np.arange(1, n)  # size of the lower cluster
    sse_lo = cs2[i - 1] - cs[i - 1] ** 2 / i
    sse_hi = (cs2[-1] - cs2[i - 1]) - (cs[-1] - cs[i - 1]) ** 2 / (n - i)
    sse = np.where(xs[i] > xs[i - 1], sse_lo + sse_hi, np.inf)
    if not np.isfinite(sse).any():
        return np.zeros(n, dtype=bool)
    k = int(np.argmin(sse)) + 1
    return x >= xs[k]


def segment_footprint(depths, homogeneity_tol: float = DEFAULT_HOMOGENEITY_TOL) -> PixelSegments:
    """Split an IR pixel footprint into one or two depth segments.

    Footprints whose depth standard deviation is within ``homogeneity_tol``
    stay whole; others are split by 1D 2-means. Segments are ordered by
    increasing mean depth.
    """
    d = np.asarray(depths, dtype=float).ravel()
    if d.size == 0:
        raise FusionError("empty footprint")
    spread = float(d.max() - d.min())
    if np.std(d) <= homogeneity_tol or spread == 0:
        return PixelSegments((Segment(float(d.mean()), np.arange(d.size), 1.0),), spread)
    upper = kmeans_1d(d)
    near, far = np.flatnonzero(~upper), np.flatnonzero(upper)
    return PixelSegments(
        (
            Segment(float(d[near].mean()), near, near.size / d.size),
            Segment(float(d[far].mean()), far, far.size / d.size),
        ),
        spread,
    )


def fuse_segment(
    pmap: ProjectionMap,
    thermal: np.ndarray,
    depth: np.ndarray,
    homogeneity_tol: float = DEFAULT_HOMOGENEITY_TOL,
    area_floor: float = DEFAULT_AREA_FLOOR,
) -> FusedImage:
    """Area-compensated upsampling for mixed IR pixels.

    Homogeneous IR pixels pass their measurement to the whole footprint.
    For a mixed pixel, the most homogeneous single-segment neighbour in the
    3x3 neighbourhood (smallest depth spread, then closest mean depth to
    one of the segments) lends its temperature to the segment closest to it
    in depth. The other segment gets the temperature that makes the area
    weighted mix equal to the measurement::

        T_other = T_m + (T_m - T_known) * A_known / max(A_other, area_floor)

    Without such a neighbour both segments keep the measurement.
    """
    thermal = _check(pmap, thermal)
    depth = np.asarray(depth, dtype=float)
    h, w = pmap.ir_height, pmap.ir_width
    idx = pmap.footprint_index().ravel()
    flat_depth = depth.ravel()

    order = np.argsort(idx, kind="stable")
    sorted_idx = idx[order]
    starts = np.searchsorted(sorted_idx, np.arange(h * w))
    ends = np.searchsorted(sorted_idx, np.arange(h * w), side="right")

    segs: dict[int, PixelSegments] = {}
    members: dict[int, np.ndarray] = {}
    for k in range(h * w):
        if ends[k] > starts[k]:
            members[k] = order[starts[k] : ends[k]]
            segs[k] = segment_footprint(flat_depth[members[k]], homogeneity_tol)

    out = np.full(idx.shape, np.nan)
    fallback = np.zeros((h, w), dtype=bool)
    solved = np.zeros((h, w), dtype=bool)
    t_flat = thermal.ravel()
    for k, ps in segs.items():
        tm = t_flat[k]
        pix = members[k]
        if not ps.mixed:
            out[pix] = tm
            continue
        r, c = divmod(k, w)
        best_key, best = None, None
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                rr, cc = r + dr, c + dc
                if (dr == 0 and dc == 0) or not (0 <= rr < h and 0 <= cc < w):
                    continue
                nb = segs.get(rr * w + cc)
                if nb is None or nb.mixed:
                    continue
                gap = min(abs(nb.segments[0].mean_depth - s.mean_depth) for s in ps.segments)
                key = (nb.spread, gap)
                if best_key is None or key < best_key:
                    best_key, best = key, (rr * w + cc, nb)
        if best is None:
            out[pix] = tm
            fallback[r, c] = True
            continue
        nk, nb = best
        nb_depth = nb.segments[0].mean_depth
        i_known = int(np.argmin([abs(nb_depth - s.mean_depth) for s in ps.segments]))
        known, other = ps.segments[i_known], ps.segments[1 - i_known]
        t_known = t_flat[nk]
        t_other = tm + (tm - t_known) * known.area / max(other.area, area_floor)
        out[pix[known.members]] = t_known
        out[pix[other.members]] = t_other
        solved[r, c] = True

    out = out.reshape(pmap.shape)
    return FusedImage(
        np.where(pmap.valid, out, np.nan),
        pmap.valid.copy(),
        {"fallback": fallback, "solved": solved, "segments": segs},
    )


FUSION_METHODS = ("nearest", "bilinear", "depth", "segment")


def fuse(
    method: str,
    pmap: ProjectionMap,
    thermal: np.ndarray,
    depth: np.ndarray | None = None,
    *,
    mode: str = "similarity",
    homogeneity_tol: float = DEFAULT_HOMOGENEITY_TOL,
    area_floor: float = DEFAULT_AREA_FLOOR,
) -> FusedImage:
    """Dispatch by method name (one of :data:`FUSION_METHODS`)."""
    if method == "nearest":
        return fuse_nearest(pmap, thermal)
    if method == "bilinear":
        return fuse_bilinear(pmap, thermal)
    if depth is None:
        raise FusionError(f"method {method!r} needs the depth image")
    if method == "depth":
        return fuse_depth_weighted(pmap, thermal, depth, mode)
    if method == "segment":
        return fuse_segment(pmap, thermal, depth, homogeneity_tol, area_floor)
    raise FusionError(f"unknown fusion method {method!r}; expected one of {FUSION_METHODS}")
