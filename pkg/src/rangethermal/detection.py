"""Person detection and tracking on fused range/thermal frames.

Moving objects are found by depth background subtraction, grouped into
8-connected blobs and labelled as people when their mean fused temperature
falls in a skin/clothing band. Blobs are linked over time by gated greedy
nearest-centroid association.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .fusion import FusedImage, build_projection_map, fuse
from .geometry import Extrinsics, Intrinsics

DEFAULT_N_INIT = 5
DEFAULT_DELTA = 0.3  # m
DEFAULT_MIN_BLOB_AREA = 20  # px
DEFAULT_T_MIN = 26.0  # degC
DEFAULT_T_MAX = 40.0  # degC
DEFAULT_GATE = 15.0  # px
DEFAULT_MAX_MISSES = 5


class DetectionError(ValueError):
    pass


@dataclass(frozen=True)
class BackgroundModel:
    reference: np.ndarray  # m, NaN where invalid
    valid: np.ndarray


@dataclass(frozen=True)
class Blob:
    rows: np.ndarray
    cols: np.ndarray
    centroid: tuple[float, float]  # (u, v)
    mean_depth: float
    mean_temp: float  # NaN when no valid fused pixel

    @property
    def area(self) -> int:
        return int(self.rows.size)


@dataclass
class Track:
    id: int
    history: list = field(default_factory=list)  # (frame, u, v, mean_temp)
    state: str = "active"
    misses: int = 0

    @property
    def last_centroid(self) -> tuple[float, float]:
        return self.history[-1][1], self.history[-1][2]

    @property
    def mean_temp(self) -> float:
        temps = [h[3] for h in self.history if math.isfinite(h[3])]
        return float(np.mean(temps)) if temps else math.nan

    def is_person(self, t_min: float = DEFAULT_T_MIN, t_max: float = DEFAULT_T_MAX) -> bool | None:
        return _in_band(self.mean_temp, t_min, t_max)


def _in_band(temp: float, t_min: float, t_max: float) -> bool | None:
    if not math.isfinite(temp):
        return None
    return t_min <= temp <= t_max


def build_background(frames, n_init: int = DEFAULT_N_INIT) -> BackgroundModel:
    """Per-pixel median depth over the first ``n_init`` frames.

    A pixel only gets a reference when it is valid in at least half of
    those frames; the median runs over its valid samples.
    """
    frames = list(frames)[:n_init]
    if not frames or n_init < 1:
        raise DetectionError("background model needs at least one frame")
    stack = np.stack([np.asarray(f, dtype=float) for f in frames])
    stack = np.where(np.isfinite(stack) & (stack > 0), stack, np.nan)
    n_valid = np.sum(np.isfinite(stack), axis=0)
    valid = 2 * n_valid >= len(frames)
    with warnings.catch_warnings():
        # all-NaN pixels are expected; they come back NaN and are masked below
        warnings.simplefilter("ignore", RuntimeWarning)
        ref = np.nanmedian(stack, axis=0)
    valid &= np.isfinite(ref)
    return BackgroundModel(np.where(valid, ref, np.nan), valid)


def extract_foreground(model: BackgroundModel, frame: np.ndarray, delta: float = DEFAULT_DELTA) -> np.ndarray:
    """Pixels at least ``delta`` nearer than the background.

    Only occlusion counts: something moving in front of the background can
    only shorten the measured distance, so farther readings (multipath,
    an opened door) are never foreground.
    """
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    frame = np.asarray(frame, dtype=float)
    ok = model.valid & np.isfinite(frame) & (frame > 0)
    return ok & (np.where(ok, frame, np.inf) <= np.where(ok, model.reference, 0.0) - delta)


_EIGHT = np.ones((3, 3), dtype=bool)


def extract_blobs(
    mask: np.ndarray,
    min_blob_area: int = DEFAULT_MIN_BLOB_AREA,
    depth: np.ndarray | None = None,
    fused: FusedImage | np.ndarray | None = None,
) -> list[Blob]:
    labels, n = ndimage.label(np.asarray(mask, dtype=bool), structure=_EIGHT)
    if fused is not None:
        temps = fused.data if isinstance(fused, FusedImage) else np.asarray(fused, dtype=float)
    blobs = []
    for k in range(1, n + 1):
        rows, cols = np.nonzero(labels == k)
        if rows.size < min_blob_area:
            continue
        mean_depth = float(np.mean(depth[rows, cols])) if depth is not None else math.nan
        mean_temp = math.nan
        if fused is not None:
            t = temps[rows, cols]
            t = t[np.isfinite(t)]
            if t.size:
                mean_temp = float(t.mean())
        blobs.append(Blob(rows, cols, (float(cols.mean()), float(rows.mean())), mean_depth, mean_temp))
    return blobs


def classify_person(blob: Blob, t_min: float = DEFAULT_T_MIN, t_max: float = DEFAULT_T_MAX) -> bool | None:
    """True for people, False for other objects, None if the blob has no valid temperature."""
    return _in_band(blob.mean_temp, t_min, t_max)


def track_update(
    tracks: list[Track],
    blobs: list[Blob],
    frame_idx: int,
    gate: float = DEFAULT_GATE,
    max_misses: int = DEFAULT_MAX_MISSES,
) -> list[Track]:
    """Associate this frame's blobs with active tracks, in place.

    Track/blob pairs are taken in ascending centroid distance, each used at
    most once, pairs farther than ``gate`` never. Leftover blobs open new
    tracks; leftover tracks count a miss and go ``lost`` at ``max_misses``.
    """
    active = [t for t in tracks if t.state == "active"]
    for t in active:
        if t.history and t.history[-1][0] >= frame_idx:
            raise DetectionError(f"frame {frame_idx} is not after track {t.id}'s last frame")

    pairs = []
    for i, t in enumerate(active):
        tu, tv = t.last_centroid
        for j, b in enumerate(blobs):
            d = math.hypot(b.centroid[0] - tu, b.centroid[1] - tv)
            if d <= gate:
                pairs.append((d, i, j))
    pairs.sort()
    used_t, used_b = set(), set()
    for _, i, j in pairs:
        if i in used_t or j in used_b:
            continue
        used_t.add(i)
        used_b.add(j)
        b = blobs[j]
        active[i].history.append((frame_idx, b.centroid[0], b.centroid[1], b.mean_temp))
        active[i].misses = 0

    for i, t in enumerate(active):
        if i not in used_t:
            t.misses += 1
            if t.misses >= max_misses:
                t.state = "lost"

    next_id = max((t.id for t in tracks), default=-1) + 1
    for j, b in enumerate(blobs):
        if j not in used_b:
            tracks.append(Track(next_id, [(frame_idx, b.centroid[0], b.centroid[1], b.mean_temp)]))
            next_id += 1
    return tracks


@dataclass
class TrackingPipeline:
    """Frame-by-frame detection and tracking for a calibrated sensor pair.

    The first ``n_init`` frames only build the background model.
    """

    K_tof: Intrinsics
    K_ir: Intrinsics
    ext: Extrinsics = field(default_factory=Extrinsics)
    method: str = "segment"
    n_init: int = DEFAULT_N_INIT
    delta: float = DEFAULT_DELTA
    min_blob_area: int = DEFAULT_MIN_BLOB_AREA
    gate: float = DEFAULT_GATE
    max_misses: int = DEFAULT_MAX_MISSES
    tracks: list = field(default_factory=list)
    background: BackgroundModel | None = None

    def run(self, frames) -> list[Track]:
        frames = list(frames)
        self.background = build_background([d for d, _ in frames], self.n_init)
        for k, (depth, thermal) in enumerate(frames[self.n_init :], start=self.n_init):
            self.step(k, depth, thermal)
        return self.tracks

    def step(self, frame_idx: int, depth: np.ndarray, thermal: np.ndarray) -> list[Blob]:
        pmap = build_projection_map(depth, self.K_tof, self.K_ir, self.ext)
        fused = fuse(self.method, pmap, thermal, depth)
        mask = extract_foreground(self.background, depth, self.delta)
        blobs = extract_blobs(mask, self.min_blob_area, depth, fused)
        track_update(self.tracks, blobs, frame_idx, self.gate, self.max_misses)
        return blobs


def track_rows(tracks: list[Track], t_min: float = DEFAULT_T_MIN, t_max: float = DEFAULT_T_MAX):
    """Flatten tracks to ``(frame, track_id, u, v, mean_temp, is_person)`` rows sorted by frame."""
    rows = []
    for t in tracks:
        person = t.is_person(t_min, t_max)
        for frame, u, v, temp in t.history:
            rows.append((frame, t.id, u, v, temp, person))
    rows.sort(key=lambda r: (r[0], r[1]))
    return rows
