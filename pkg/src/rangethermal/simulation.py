"""Synthetic range/thermal data with ground truth.

A scene is a stack of flat primitives (rectangles and discs), each with a
uniform depth and temperature, rendered at TOF resolution with a per-pixel
depth test. Gaussian noise is added to both rasters, then the thermal image
is area-averaged down to thermopile resolution.

Besides the co-located evaluation setup, two generators exist for the
other pipelines: :func:`render_calibration_view` images a heated disc with a
misaligned sensor pair, and :func:`simulate_sequence` produces moving warm
and cold discs for the tracker.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import Extrinsics, Intrinsics, pixel_rays

DEFAULT_SIGMA_DEPTH = 0.01  # m
DEFAULT_SIGMA_TEMP = 0.5  # degC
MIN_DEPTH = 1e-3  # m, noisy depth is clipped here to stay a valid measurement

TOF_SIZE = (160, 120)
IR_SIZE = (16, 16)

DEFAULT_K_TOF = Intrinsics(fx=150.0, fy=150.0, cx=79.5, cy=59.5, width=160, height=120)
DEFAULT_K_IR = DEFAULT_K_TOF.scaled(IR_SIZE[0] / TOF_SIZE[0], IR_SIZE[1] / TOF_SIZE[1], *IR_SIZE)


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class Rect:
    x: float
    y: float
    w: float
    h: float
    depth: float
    temp: float

    def covers(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        return (u >= self.x) & (u < self.x + self.w) & (v >= self.y) & (v < self.y + self.h)


@dataclass(frozen=True)
class Disc:
    cx: float
    cy: float
    r: float
    depth: float
    temp: float

    def covers(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        return (u - self.cx) ** 2 + (v - self.cy) ** 2 <= self.r**2


@dataclass(frozen=True)
class SceneSpec:
    width: int = TOF_SIZE[0]
    height: int = TOF_SIZE[1]
    background_depth: float = 4.0
    background_temp: float = 20.0
    primitives: tuple = ()
    sigma_depth: float = DEFAULT_SIGMA_DEPTH
    sigma_temp: float = DEFAULT_SIGMA_TEMP
    seed: int = 0

    def validate(self) -> None:
        if self.width < 1 or self.height < 1:
            raise SceneError(f"canvas must be at least 1x1, got {self.width}x{self.height}")
        if not self.background_depth > 0:
            raise SceneError(f"background depth must be positive, got {self.background_depth}")
        for p in self.primitives:
            if not (p.depth > 0 and math.isfinite(p.depth)):
                raise SceneError(f"primitive depth must be positive, got {p}")
            if not math.isfinite(p.temp):
                raise SceneError(f"primitive temperature must be finite, got {p}")
        if self.sigma_depth < 0 or self.sigma_temp < 0:
            raise SceneError("noise sigmas must be non-negative")


@dataclass(frozen=True)
class GroundTruth:
    thermal_hi: np.ndarray
    depth_hi: np.ndarray


@dataclass(frozen=True)
class SimulatedDataset:
    truth: GroundTruth
    depth: np.ndarray  # noisy, TOF resolution
    thermal_hi: np.ndarray  # noisy, TOF resolution
    thermal: np.ndarray  # noisy, thermopile resolution
    K_tof: Intrinsics = DEFAULT_K_TOF
    K_ir: Intrinsics = DEFAULT_K_IR
    ext: Extrinsics = field(default_factory=Extrinsics)


def default_scene(seed: int = 0) -> SceneSpec:
    """The shipped evaluation scene: a room with a person, furniture and a small hot object.

    Every object has a uniform depth and temperature on a 160x120 canvas.
    """
    return SceneSpec(
        background_depth=4.0,
        background_temp=20.0,
        primitives=(
            Rect(8, 72, 64, 40, depth=3.0, temp=24.0),  # table
            Rect(92, 14, 34, 96, depth=2.0, temp=34.0),  # person
            Disc(38, 34, 14, depth=2.6, temp=45.0),  # radiator panel
            Disc(146, 96, 3, depth=1.6, temp=60.0),  # hot mug
        ),
        seed=seed,
    )


def render_scene(spec: SceneSpec) -> GroundTruth:
    """Rasterize a scene; at each pixel the nearest covering primitive wins.

    Pixel ``(u, v)`` is covered by a rectangle when ``x <= u < x + w`` and
    ``y <= v < y + h``, by a disc when its center lies within ``r``. Equal
    depths keep the earlier primitive.
    """
    spec.validate()
    v, u = np.mgrid[0 : spec.height, 0 : spec.width].astype(float)
    depth = np.full((spec.height, spec.width), float(spec.background_depth))
    temp = np.full((spec.height, spec.width), float(spec.background_temp))
    for p in spec.primitives:
        win = p.covers(u, v) & (p.depth < depth)
        depth[win] = p.depth
        temp[win] = p.temp
    return GroundTruth(thermal_hi=temp, depth_hi=depth)


def noise_field(shape, seed: int, stream: int = 0) -> np.ndarray:
    """Standard normal field from a counter-based generator keyed by ``(seed, stream)``."""
    ss = np.random.SeedSequence([int(seed), int(stream)])
    return np.random.Generator(np.random.Philox(ss)).standard_normal(shape)


def add_noise(raster: np.ndarray, sigma: float, seed: int, stream: int = 0) -> np.ndarray:
    """Add i.i.d. Gaussian noise; ``sigma == 0`` returns an unchanged copy. NaNs stay NaN."""
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    raster = np.asarray(raster, dtype=float)
    if sigma == 0:
        return raster.copy()
    return raster + sigma * noise_field(raster.shape, seed, stream)


def _overlap_matrix(n_in: int, n_out: int) -> np.ndarray:
    """``(n_out, n_in)`` matrix of the overlap length of each output cell with each input pixel."""
    scale = n_in / n_out
    edges_out = np.arange(n_out + 1) * scale
    lo = np.maximum(edges_out[:-1, None], np.arange(n_in)[None, :])
    hi = np.minimum(edges_out[1:, None], np.arange(n_in)[None, :] + 1)
    return np.clip(hi - lo, 0.0, None)


def downsample_area(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Area-integrating downsample: each output pixel averages its exact input footprint.

    Non-integer ratios are handled by fractional overlap weights (a
    160x120 image to 16x16 gives 10 x 7.5 input pixels per output pixel).
    """
    img = np.asarray(img, dtype=float)
    h, w = img.shape
    if out_w < 1 or out_h < 1 or out_w > w or out_h > h:
        raise ValueError(f"cannot downsample {w}x{h} to {out_w}x{out_h}")
    wy = _overlap_matrix(h, out_h)
    wx = _overlap_matrix(w, out_w)
    return (wy @ img @ wx.T) / ((h / out_h) * (w / out_w))


def simulate(
    spec: SceneSpec,
    K_tof: Intrinsics = DEFAULT_K_TOF,
    ir_size: tuple[int, int] = IR_SIZE,
    seed: int | None = None,
) -> SimulatedDataset:
    """Render ``spec``, add noise and produce the low-resolution thermal image.

    The sensors are co-located (identity extrinsics) and the IR intrinsics
    are chosen so that each IR pixel sees exactly the canvas block it
    averages.
    """
    if (spec.width, spec.height) != (K_tof.width, K_tof.height):
        K_tof = Intrinsics(
            fx=K_tof.fx, fy=K_tof.fy, cx=(spec.width - 1) / 2, cy=(spec.height - 1) / 2,
            width=spec.width, height=spec.height,
        )
    seed = spec.seed if seed is None else seed
    truth = render_scene(spec)
    depth = np.maximum(add_noise(truth.depth_hi, spec.sigma_depth, seed, stream=0), MIN_DEPTH)
    thermal_hi = add_noise(truth.thermal_hi, spec.sigma_temp, seed, stream=1)
    thermal = downsample_area(thermal_hi, *ir_size)
    K_ir = K_tof.scaled(ir_size[0] / spec.width, ir_size[1] / spec.height, *ir_size)
    return SimulatedDataset(truth, depth, thermal_hi, thermal, K_tof, K_ir, Extrinsics())


# ---------------------------------------------------------------------------
# calibration views (misaligned rig)
# ---------------------------------------------------------------------------


def _plane_hit(rays: np.ndarray, point: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """Ray length to the plane through ``point`` with ``normal`` (inf if parallel or behind)."""
    denom = rays @ normal
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(np.abs(denom) > 1e-12, (point @ normal) / denom, np.inf)
    return np.where(s > 0, s, np.inf)


def render_calibration_view(
    target_center,
    target_radius: float,
    K_tof: Intrinsics,
    K_ir: Intrinsics,
    ext: Extrinsics,
    background_z: float = 4.0,
    target_temp: float = 60.0,
    background_temp: float = 20.0,
    supersample: int = 8,
) -> tuple[np.ndarray, np.ndarray]:
    """Depth and thermal images of a heated disc in front of a wall.

    The disc faces the TOF camera (normal along the TOF optical axis) and is
    centered at ``target_center`` in the TOF frame; the wall is the plane
    ``z = background_z``. The thermal image integrates
    ``supersample x supersample`` rays per IR pixel.
    """
    c = np.asarray(target_center, dtype=float)
    n = np.array([0.0, 0.0, 1.0])
    wall = np.array([0.0, 0.0, background_z])

    v, u = np.mgrid[0 : K_tof.height, 0 : K_tof.width]
    rays = pixel_rays(u, v, K_tof)
    s_disc = _plane_hit(rays, c, n)
    on_disc = np.linalg.norm(rays * s_disc[..., None] - c, axis=-1) <= target_radius
    depth = np.where(on_disc, s_disc, _plane_hit(rays, wall, n))

    R = ext.rotation
    t = np.asarray(ext.t)
    c_ir, n_ir, wall_ir = R @ c + t, R @ n, R @ wall + t
    offs = (np.arange(supersample) + 0.5) / supersample - 0.5
    sv, su = np.mgrid[0 : K_ir.height, 0 : K_ir.width].astype(float)
    su = su[..., None, None] + offs[None, None, None, :]
    sv = sv[..., None, None] + offs[None, None, :, None]
    rays_ir = pixel_rays(su, sv, K_ir)
    s_t = _plane_hit(rays_ir, c_ir, n_ir)
    hit_t = np.linalg.norm(rays_ir * s_t[..., None] - c_ir, axis=-1) <= target_radius
    # the disc only shows where it is nearer than the wall
    hit_t &= s_t < _plane_hit(rays_ir, wall_ir, n_ir)
    thermal = np.where(hit_t, target_temp, background_temp).mean(axis=(-2, -1))
    return depth, thermal


# ---------------------------------------------------------------------------
# tracking sequences
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MovingDisc:
    start: tuple[float, float]
    velocity: tuple[float, float]  # pixels per frame
    r: float
    depth: float
    temp: float

    def at(self, k: int) -> Disc:
        return Disc(
            self.start[0] + k * self.velocity[0],
            self.start[1] + k * self.velocity[1],
            self.r, self.depth, self.temp,
        )


@dataclass(frozen=True)
class Sequence:
    frames: list  # (depth, thermal) per frame
    truth: dict  # object index -> list of (frame, u, v)
    K_tof: Intrinsics
    K_ir: Intrinsics
    n_background: int


def default_movers() -> tuple[MovingDisc, ...]:
    return (
        MovingDisc((28.0, 32.0), (1.8, 0.3), r=12, depth=2.0, temp=34.0),  # person
        MovingDisc((132.0, 92.0), (-1.8, -0.3), r=10, depth=2.5, temp=20.0),  # rolling chair
    )


def simulate_sequence(
    n_frames: int = 60,
    movers: tuple[MovingDisc, ...] | None = None,
    n_background: int = 5,
    base: SceneSpec | None = None,
    seed: int = 0,
) -> Sequence:
    """``n_background`` empty frames followed by ``n_frames`` with moving discs."""
    movers = default_movers() if movers is None else movers
    base = SceneSpec(background_temp=18.0) if base is None else base
    frames = []
    truth: dict[int, list] = {i: [] for i in range(len(movers))}
    for k in range(n_background + n_frames):
        prims = list(base.primitives)
        if k >= n_background:
            j = k - n_background
            for i, m in enumerate(movers):
                d = m.at(j)
                prims.append(d)
                truth[i].append((k, d.cx, d.cy))
        ds = simulate(replace(base, primitives=tuple(prims)), seed=seed * 100003 + k)
        frames.append((ds.depth, ds.thermal))
    K_tof = ds.K_tof
    return Sequence(frames, truth, K_tof, ds.K_ir, n_background)
