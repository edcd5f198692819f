"""Least-squares polynomial extrapolation of observed screen positions."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError

FIT_FRAMES = 10


@dataclass
class PolyFit:
    degree: int
    coefficients: np.ndarray  # (degree + 1, dims), constant term first
    fit_window: int

    def __call__(self, t):
        return extrapolate(self, t)


def _design(t, degree):
    t = np.asarray(t, dtype=np.float64)
    return np.stack([t ** k for k in range(degree + 1)], axis=-1)


def fit(points, degree, times=None):
    """Normal-equation fit of each coordinate of ``points`` against frame index."""
    if degree not in (1, 2):
        raise ConfigError(f"polynomial degree must be 1 or 2, got {degree}")
    y = np.asarray(points, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    n = y.shape[0]
    if n <= degree:
        raise ShapeError(f"degree-{degree} fit needs more than {degree} points, got {n}")
    t = np.arange(n, dtype=np.float64) if times is None else np.asarray(times, np.float64)
    A = _design(t, degree)
    coef = np.linalg.solve(A.T @ A, A.T @ y)
    return PolyFit(degree, coef, n)


def extrapolate(poly, t):
    """Evaluate the fitted polynomial at frame index (or indices) ``t``."""
    return _design(t, poly.degree) @ poly.coefficients


def baseline_rollout(stream, degree, T, fit_frames=FIT_FRAMES):
    """Fit the first ``fit_frames`` entries of ``stream`` (frames, objects, dims).

    Step ``k`` (1-based) is the extrapolation ``k`` frames past the last fitted
    frame. Returns ``(predictions, truth)`` shaped ``(T, objects, dims)``.
    """
    stream = np.asarray(stream, dtype=np.float64)
    if stream.shape[0] < fit_frames + T:
        raise ShapeError(
            f"stream has {stream.shape[0]} frames, need fit_frames + T = {fit_frames + T}"
        )
    times = np.arange(fit_frames, fit_frames + T, dtype=np.float64)
    preds = np.stack(
        [extrapolate(fit(stream[:fit_frames, j], degree), times)
         for j in range(stream.shape[1])],
        axis=1,
    )
    return preds, stream[fit_frames:fit_frames + T]
