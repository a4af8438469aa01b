"""Extrinsic rotation calibration from a heated circular target.

The target (a heated plate in front of an unheated planar background) is
located in the thermal image by a temperature threshold and in the range
image by its depth gap to the background. Pairs of centers feed a damped
Gauss-Newton (Levenberg-Marquardt) fit of the three rotation angles; the
translation between the sensors is measured, never estimated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    Extrinsics,
    GeometryError,
    Intrinsics,
    TaitBryanAngles,
    depth_to_point,
    project_point,
    rotation_from_angles,
    rotation_partials,
)

DEFAULT_THRESHOLD_OFFSET = 5.0  # degC above the image median
DEFAULT_BACKGROUND_GAP = 0.3  # m
MAX_ITERATIONS = 200
STEP_TOL = 1e-10
COST_TOL = 1e-12


class CalibrationError(ValueError):
    pass


class TargetNotFound(CalibrationError):
    pass


class UnderdeterminedError(CalibrationError):
    pass


class DegenerateObservation(CalibrationError):
    pass


@dataclass(frozen=True)
class CalibObservation:
    tof_point: tuple[float, float, float]
    ir_center: tuple[float, float]

    def __post_init__(self) -> None:
        p = tuple(float(x) for x in self.tof_point)
        c = tuple(float(x) for x in self.ir_center)
        if len(p) != 3 or not all(math.isfinite(x) for x in p) or p[2] <= 0:
            raise ValueError(f"tof_point must be finite with z > 0, got {self.tof_point}")
        if len(c) != 2 or not all(math.isfinite(x) for x in c):
            raise ValueError(f"ir_center must be finite, got {self.ir_center}")
        object.__setattr__(self, "tof_point", p)
        object.__setattr__(self, "ir_center", c)


@dataclass(frozen=True)
class CalibResult:
    angles: TaitBryanAngles
    residual_rms: float
    iterations: int
    converged: bool
    # cost after every accepted step, starting with the initial cost
    cost_history: tuple[float, ...] = field(default=(), repr=False)


# ---------------------------------------------------------------------------
# target detection
# ---------------------------------------------------------------------------


def detect_target_thermal(
    img: np.ndarray,
    method: str = "centroid",
    threshold_offset: float = DEFAULT_THRESHOLD_OFFSET,
    weighted: bool = True,
) -> tuple[float, float]:
    """Sub-pixel ``(u, v)`` center of the hot target in a thermal image.

    Pixels warmer than ``median + threshold_offset`` form the target mask.
    ``centroid`` returns the center of gravity of the mask, weighted by each
    pixel's excess temperature over the image median unless
    ``weighted=False``. ``hough`` fits circles to the mask outline.
    """
    img = np.asarray(img, dtype=float)
    finite = np.isfinite(img)
    if not finite.any():
        raise TargetNotFound("thermal image has no finite pixels")
    median = float(np.median(img[finite]))
    mask = finite & (img > median + threshold_offset)
    if not mask.any():
        raise TargetNotFound(f"no pixel exceeds median {median:.3f} + {threshold_offset}")

    if method == "centroid":
        v, u = np.nonzero(mask)
        w = img[v, u] - median if weighted else np.ones(len(u))
        return (float(np.sum(w * u) / np.sum(w)), float(np.sum(w * v) / np.sum(w)))
    if method == "hough":
        return _hough_center(mask)
    raise ValueError(f"unknown detection method {method!r}")


def _mask_outline(mask: np.ndarray) -> np.ndarray:
    padded = np.pad(mask, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return mask & ~interior


def _hough_center(mask: np.ndarray, step: float = 0.25) -> tuple[float, float]:
    """Circle Hough transform on the outline of ``mask``.

    Candidate centers lie on a ``step``-pixel grid, radii are integers
    ``1..min(w, h)//2``. An outline pixel votes for ``(center, r)`` when its
    distance to the center is within half a pixel of ``r``. A circle scores
    ``votes**2 / (n_outline * 2*pi*r)``: the product of the share of the
    outline it explains and the share of its circumference that is
    supported, so neither tiny arcs nor oversized circles win. The returned
    center is the mean of all grid centers sharing the best score, which
    recovers sub-pixel centers of symmetric blobs.
    """
    h, w = mask.shape
    ev, eu = np.nonzero(_mask_outline(mask))
    gu = np.arange(-0.5, w - 0.5 + 1e-9, step)
    gv = np.arange(-0.5, h - 0.5 + 1e-9, step)
    cu, cv = np.meshgrid(gu, gv)
    cu, cv = cu.ravel(), cv.ravel()
    dist = np.hypot(cu[:, None] - eu[None, :], cv[:, None] - ev[None, :])

    best_score, best = -1.0, None
    for r in range(1, max(1, min(w, h) // 2) + 1):
        votes = np.count_nonzero(np.abs(dist - r) < 0.5, axis=1)
        score = votes.astype(float) ** 2 / (len(eu) * 2 * math.pi * r)
        top = score.max()
        if top > best_score + 1e-12:
            best_score = top
            best = np.flatnonzero(score >= top - 1e-12)
    return (float(cu[best].mean()), float(cv[best].mean()))


def detect_target_depth(
    img: np.ndarray, K: Intrinsics, background_gap: float = DEFAULT_BACKGROUND_GAP
) -> np.ndarray:
    """3D center of the target in the TOF frame.

    The background depth is the histogram mode of the farther half of the
    valid depths, so the target must cover less than half of the image.
    Pixels at least ``background_gap`` nearer than it form
    the target; the result is the back-projection of the target's pixel
    centroid at the target's median depth.
    """
    img = np.asarray(img, dtype=float)
    valid = np.isfinite(img) & (img > 0)
    if not valid.any():
        raise TargetNotFound("depth image has no valid pixels")
    depths = img[valid]
    far = depths[depths >= np.median(depths)]
    bin_width = background_gap / 4
    lo = far.min()
    bins = np.floor((far - lo) / bin_width).astype(int)
    mode_bin = np.bincount(bins).argmax()
    background = float(np.median(far[bins == mode_bin]))

    fg = valid & (img <= background - background_gap)
    if not fg.any():
        raise TargetNotFound(f"no pixel {background_gap} m nearer than background {background:.3f} m")
    v, u = np.nonzero(fg)
    return depth_to_point((u.mean(), v.mean()), float(np.median(img[fg])), K)


# ---------------------------------------------------------------------------
# rotation estimation
# ---------------------------------------------------------------------------


def reprojection_error(
    obs: CalibObservation, angles: TaitBryanAngles, t, K_ir: Intrinsics
) -> float:
    """Pixel distance between the observed IR center and the projected TOF center."""
    q = rotation_from_angles(angles) @ np.asarray(obs.tof_point) + np.asarray(t, dtype=float)
    uv = project_point(q, K_ir)
    return float(np.hypot(*(np.asarray(obs.ir_center) - uv)))


def _residuals(x, P, C, t, K, with_jacobian=True):
    """Stacked residuals ``ir_center - projection`` (length ``2n``) and their Jacobian."""
    ang = TaitBryanAngles.from_array(x)
    Q = P @ rotation_from_angles(ang).T + t
    X, Y, Z = Q[:, 0], Q[:, 1], Q[:, 2]
    if np.any(Z <= 0):
        raise DegenerateObservation("observation behind the IR camera after transform")
    r = np.empty(2 * len(P))
    r[0::2] = C[:, 0] - (K.fx * X / Z + K.cx)
    r[1::2] = C[:, 1] - (K.fy * Y / Z + K.cy)
    if not with_jacobian:
        return r, None
    dQ = np.einsum("krc,nc->nkr", rotation_partials(ang), P)  # (n, angle, xyz)
    J = np.empty((2 * len(P), 3))
    J[0::2] = -K.fx * (dQ[:, :, 0] / Z[:, None] - X[:, None] * dQ[:, :, 2] / Z[:, None] ** 2)
    J[1::2] = -K.fy * (dQ[:, :, 1] / Z[:, None] - Y[:, None] * dQ[:, :, 2] / Z[:, None] ** 2)
    return r, J


def estimate_rotation(
    obs: list[CalibObservation],
    t,
    K_ir: Intrinsics,
    max_iterations: int = MAX_ITERATIONS,
) -> CalibResult:
    """Least-squares rotation angles from target correspondences.

    Minimizes the summed squared reprojection error over all observations,
    starting from zero angles. Cost never increases across accepted steps.
    """
    if len(obs) < 2:
        raise UnderdeterminedError(f"need at least 2 observations, got {len(obs)}")
    P = np.array([o.tof_point for o in obs], dtype=float)
    C = np.array([o.ir_center for o in obs], dtype=float)
    t = np.asarray(t, dtype=float)

    x = np.zeros(3)
    r, J = _residuals(x, P, C, t, K_ir)
    cost = float(r @ r)
    history = [cost]
    mu = None
    nu = 2.0
    converged = cost == 0.0
    iterations = 0

    while not converged and iterations < max_iterations:
        iterations += 1
        A = J.T @ J
        g = J.T @ r
        if mu is None:
            mu = 1e-3 * max(float(np.max(np.diag(A))), 1e-12)
        delta = -np.linalg.solve(A + mu * np.eye(3), g)
        x_new = x + delta
        try:
            r_new, _ = _residuals(x_new, P, C, t, K_ir, with_jacobian=False)
            cost_new = float(r_new @ r_new)
        except DegenerateObservation:
            cost_new = math.inf

        if cost_new <= cost:
            # predicted reduction of the linearized model drives the damping update
            predicted = float(delta @ (mu * delta - g))
            rho = (cost - cost_new) / predicted if predicted > 0 else 0.0
            small_step = np.linalg.norm(delta) < STEP_TOL
            small_change = cost - cost_new <= COST_TOL * cost
            x, cost = x_new, cost_new
            history.append(cost)
            r, J = _residuals(x, P, C, t, K_ir)
            mu *= max(1 / 3, 1 - (2 * rho - 1) ** 3)
            nu = 2.0
            converged = small_step or small_change or cost == 0.0
        else:
            mu *= nu
            nu *= 2.0
            converged = np.linalg.norm(delta) < STEP_TOL * (np.linalg.norm(x) + STEP_TOL)

    return CalibResult(
        angles=TaitBryanAngles.from_array(x),
        residual_rms=math.sqrt(cost / len(obs)),
        iterations=iterations,
        converged=bool(converged),
        cost_history=tuple(history),
    )


def calibrate(
    pairs: list[tuple[np.ndarray, np.ndarray]],
    t,
    K_tof: Intrinsics,
    K_ir: Intrinsics,
    method: str = "centroid",
    threshold_offset: float = DEFAULT_THRESHOLD_OFFSET,
    background_gap: float = DEFAULT_BACKGROUND_GAP,
) -> tuple[Extrinsics, CalibResult]:
    """Detect the target in each ``(depth, thermal)`` pair and fit the rotation."""
    obs = [
        CalibObservation(
            tuple(detect_target_depth(depth, K_tof, background_gap)),
            detect_target_thermal(thermal, method, threshold_offset),
        )
        for depth, thermal in pairs
    ]
    result = estimate_rotation(obs, t, K_ir)
    return Extrinsics(result.angles, tuple(t)), result


__all__ = [
    "CalibObservation",
    "CalibResult",
    "CalibrationError",
    "DegenerateObservation",
    "GeometryError",
    "TargetNotFound",
    "UnderdeterminedError",
    "calibrate",
    "detect_target_depth",
    "detect_target_thermal",
    "estimate_rotation",
    "reprojection_error",
]
