"""Pinhole camera models, depth back-projection and rigid transforms.

Pixel coordinates are ``(u, v) = (column, row)`` with the origin at the
center of the top-left pixel. Depth values are radial distances along the
viewing ray, not planar ``z``.

Every function accepts either a single point or stacked arrays (leading
dimensions broadcast), so the fusion code can push whole images through.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    """Raised for invalid measurements or points behind a camera."""


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"resolution must be at least 1x1, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} sensor"
            )

    @property
    def shape(self) -> tuple[int, int]:
        """Raster shape ``(height, width)``."""
        return (self.height, self.width)

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def contains(self, u, v) -> np.ndarray:
        """True where ``(u, v)`` lies on the sensor rectangle (pixel edges included on the low side)."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        return (u >= -0.5) & (u < self.width - 0.5) & (v >= -0.5) & (v < self.height - 0.5)

    def scaled(self, sx: float, sy: float, width: int, height: int) -> "Intrinsics":
        """Intrinsics of a sensor imaging the same field of view at a different resolution.

        A pixel of the new sensor spans ``1/sx`` by ``1/sy`` pixels of this one;
        pixel centers are mapped so that pixel edges line up.
        """
        return Intrinsics(
            fx=self.fx * sx,
            fy=self.fy * sy,
            cx=(self.cx + 0.5) * sx - 0.5,
            cy=(self.cy + 0.5) * sy - 0.5,
            width=width,
            height=height,
        )


@dataclass(frozen=True)
class TaitBryanAngles:
    a1: float = 0.0
    a2: float = 0.0
    a3: float = 0.0

    def __post_init__(self) -> None:
        if not all(math.isfinite(a) for a in (self.a1, self.a2, self.a3)):
            raise ValueError(f"angles must be finite, got {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.a1, self.a2, self.a3])

    @classmethod
    def from_array(cls, a) -> "TaitBryanAngles":
        a1, a2, a3 = (float(x) for x in a)
        return cls(a1, a2, a3)

    def wrapped(self) -> "TaitBryanAngles":
        """Same rotation with every angle wrapped into ``[-pi, pi]``."""
        return TaitBryanAngles.from_array(np.angle(np.exp(1j * self.as_array())))


@dataclass(frozen=True)
class Extrinsics:
    """Pose of the TOF frame relative to the IR frame: ``p_ir = R p_tof + t``."""

    angles: TaitBryanAngles = field(default_factory=TaitBryanAngles)
    t: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        t = tuple(float(x) for x in self.t)
        if len(t) != 3 or not all(math.isfinite(x) for x in t):
            raise ValueError(f"translation must be 3 finite values, got {self.t}")
        object.__setattr__(self, "t", t)

    @property
    def rotation(self) -> np.ndarray:
        return rotation_from_angles(self.angles)


def rotation_from_angles(angles: TaitBryanAngles) -> np.ndarray:
    """3x3 rotation for the three Tait-Bryan angles.

    The first two rows are the usual yaw-pitch-roll expressions written
    with ``s_i = sin(a_i)``, ``c_i = cos(a_i)``::

        [ c1 c3               c1 s3               -s1   ]
        [ s2 s1 c3 - c2 s3    s2 s1 s3 + c2 c3    c1 s2 ]
        [ c2 s1 c3 + s2 s3    c2 s1 s3 - s2 c3    c1 c2 ]

    The third row is the one that makes the matrix orthonormal (the
    commonly printed variant ``c2 s1 s3, c2 s1 c3 - s2 c3`` is not).
    """
    s1, s2, s3 = math.sin(angles.a1), math.sin(angles.a2), math.sin(angles.a3)
    c1, c2, c3 = math.cos(angles.a1), math.cos(angles.a2), math.cos(angles.a3)
    return np.array(
        [
            [c1 * c3, c1 * s3, -s1],
            [s2 * s1 * c3 - c2 * s3, s2 * s1 * s3 + c2 * c3, c1 * s2],
            [c2 * s1 * c3 + s2 * s3, c2 * s1 * s3 - s2 * c3, c1 * c2],
        ]
    )


def rotation_partials(angles: TaitBryanAngles) -> np.ndarray:
    """Derivatives of :func:`rotation_from_angles`, shape ``(3, 3, 3)`` indexed ``[angle, row, col]``."""
    s1, s2, s3 = math.sin(angles.a1), math.sin(angles.a2), math.sin(angles.a3)
    c1, c2, c3 = math.cos(angles.a1), math.cos(angles.a2), math.cos(angles.a3)
    d1 = [
        [-s1 * c3, -s1 * s3, -c1],
        [s2 * c1 * c3, s2 * c1 * s3, -s1 * s2],
        [c2 * c1 * c3, c2 * c1 * s3, -s1 * c2],
    ]
    d2 = [
        [0.0, 0.0, 0.0],
        [c2 * s1 * c3 + s2 * s3, c2 * s1 * s3 - s2 * c3, c1 * c2],
        [-s2 * s1 * c3 + c2 * s3, -s2 * s1 * s3 - c2 * c3, -c1 * s2],
    ]
    d3 = [
        [-c1 * s3, c1 * c3, 0.0],
        [-s2 * s1 * s3 - c2 * c3, s2 * s1 * c3 - c2 * s3, 0.0],
        [-c2 * s1 * s3 + s2 * c3, c2 * s1 * c3 + s2 * s3, 0.0],
    ]
    return np.array([d1, d2, d3])


def pixel_rays(u, v, K: Intrinsics) -> np.ndarray:
    """Unit viewing rays through pixel coordinates, shape ``(..., 3)``."""
    u, v = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
    d = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones(u.shape)], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def depth_to_point(pixel, depth, K: Intrinsics) -> np.ndarray:
    """Back-project a pixel with radial depth into the camera frame.

    ``pixel`` is ``(u, v)`` or an array with trailing dimension 2. The
    returned point has norm equal to ``depth``.
    """
    pixel = np.asarray(pixel, dtype=float)
    depth = np.asarray(depth, dtype=float)
    if not np.all(depth > 0) or not np.all(np.isfinite(depth)):
        raise GeometryError("depth must be positive and finite")
    if not np.all(K.contains(pixel[..., 0], pixel[..., 1])):
        raise GeometryError("pixel outside the sensor rectangle")
    return pixel_rays(pixel[..., 0], pixel[..., 1], K) * depth[..., None]


def transform_point(p, ext: Extrinsics) -> np.ndarray:
    """Map TOF-frame points into the IR frame (``R p + t``)."""
    p = np.asarray(p, dtype=float)
    return p @ ext.rotation.T + np.asarray(ext.t)


def project_point(p, K: Intrinsics) -> np.ndarray:
    """Pinhole projection to continuous pixel coordinates, no clamping.

    Raises :class:`GeometryError` if any point has ``z <= 0``.
    """
    p = np.asarray(p, dtype=float)
    z = p[..., 2]
    if np.any(z <= 0):
        raise GeometryError("point behind camera (z <= 0)")
    return np.stack([K.fx * p[..., 0] / z + K.cx, K.fy * p[..., 1] / z + K.cy], axis=-1)
