"""Accuracy of upsampled thermal images against ground truth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fusion import FusedImage


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class ErrorReport:
    error_map: np.ndarray  # |fused - truth|, NaN where invalid
    mean_abs_error: float
    max_abs_error: float
    valid_pixels: int
    ranks: np.ndarray
    cumulative_error: np.ndarray


def _as_arrays(fused, truth):
    if isinstance(fused, FusedImage):
        data, valid = fused.data, fused.valid
    else:
        data = np.asarray(fused, dtype=float)
        valid = np.isfinite(data)
    truth = np.asarray(truth, dtype=float)
    if data.shape != truth.shape:
        raise MetricsError(f"shape mismatch: fused {data.shape} vs truth {truth.shape}")
    return data, valid & np.isfinite(data) & np.isfinite(truth), truth


def error_map(fused, truth) -> np.ndarray:
    """Per-pixel absolute difference; invalid pixels are NaN."""
    data, valid, truth = _as_arrays(fused, truth)
    return np.where(valid, np.abs(np.where(valid, data, 0.0) - np.where(valid, truth, 0.0)), np.nan)


def mean_abs_error(fused, truth) -> float:
    err = error_map(fused, truth)
    ok = np.isfinite(err)
    if not ok.any():
        raise MetricsError("no valid pixels to compare")
    return float(err[ok].mean())


def accumulated_error_curve(err: np.ndarray, n_bins: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative error over pixels sorted by increasing error.

    Returns ``(rank, cumulative_error)``: ``rank`` counts pixels (1-based),
    ``cumulative_error[k]`` is the summed error of the ``rank[k]`` smallest
    errors. With ``n_bins`` the curve is sampled at that many evenly spaced
    ranks, always ending at the last pixel, so the final value is the sum of
    all errors.
    """
    e = np.sort(np.asarray(err, dtype=float)[np.isfinite(err)])
    cum = np.cumsum(e)
    rank = np.arange(1, e.size + 1)
    if n_bins is not None:
        if n_bins < 1:
            raise ValueError(f"n_bins must be at least 1, got {n_bins}")
        if e.size:
            pick = np.unique(np.ceil(np.linspace(0, e.size, n_bins + 1)[1:]).astype(int)) - 1
            return rank[pick], cum[pick]
    return rank, cum


def evaluate(fused, truth, n_bins: int | None = None) -> ErrorReport:
    err = error_map(fused, truth)
    ok = np.isfinite(err)
    if not ok.any():
        raise MetricsError("no valid pixels to compare")
    rank, cum = accumulated_error_curve(err, n_bins)
    return ErrorReport(
        error_map=err,
        mean_abs_error=float(err[ok].mean()),
        max_abs_error=float(err[ok].max()),
        valid_pixels=int(ok.sum()),
        ranks=rank,
        cumulative_error=cum,
    )
