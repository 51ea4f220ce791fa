"""Evaluation metrics: RMSE, delay estimation and convergence detection."""

from __future__ import annotations

import math

import numpy as np
from scipy.spatial.transform import Rotation as _Rot

NOT_CONVERGED = math.inf


class MetricError(ValueError):
    """Misaligned or degenerate inputs."""


def euler_zyx(R: np.ndarray) -> np.ndarray:
    """Yaw, pitch and roll (extrinsic Z-Y-X order) of one or many rotations."""
    R = np.asarray(R, dtype=float)
    single = R.ndim == 2
    angles = _Rot.from_matrix(R.reshape(-1, 3, 3)).as_euler("ZYX")
    return angles[0] if single else angles


def _wrap(a: np.ndarray) -> np.ndarray:
    return (a + np.pi) % (2 * np.pi) - np.pi


def rmse(estimate: np.ndarray, truth: np.ndarray, block: str = "euclidean") -> np.ndarray:
    """Per-axis root-mean-square error.

    Parameters
    ----------
    estimate, truth : ndarray
        ``(n, k)`` series, or ``(n, 3, 3)`` rotations when ``block`` is
        ``"rotation"``.
    block : {"euclidean", "rotation"}
        Rotations are compared through wrapped yaw/pitch/roll differences.
    """
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape:
        raise MetricError(f"shape mismatch {estimate.shape} vs {truth.shape}")
    if block == "rotation":
        err = _wrap(euler_zyx(estimate) - euler_zyx(truth))
    elif block == "euclidean":
        err = estimate - truth
    else:
        raise MetricError(f"unknown block kind {block!r}")
    err = err.reshape(err.shape[0], -1)
    return np.sqrt(np.mean(err**2, axis=0))


def estimate_delay(
    filtered: np.ndarray, reference: np.ndarray, dt: float, max_lag: int
) -> float:
    """Lag of ``filtered`` behind ``reference`` in seconds.

    The integer lag maximizing the normalized cross-correlation is refined
    by fitting a parabola through its two neighbours. A positive value means
    ``filtered`` trails ``reference``. Multi-column inputs are handled by
    summing the per-column correlations.
    """
    x = np.asarray(filtered, dtype=float)
    y = np.asarray(reference, dtype=float)
    if x.shape != y.shape:
        raise MetricError("series must have the same shape")
    if x.ndim == 1:
        x, y = x[:, None], y[:, None]
    x = x - x.mean(axis=0)
    y = y - y.mean(axis=0)
    if np.all(np.std(x, axis=0) == 0) or np.all(np.std(y, axis=0) == 0):
        raise MetricError("flat correlation: constant input")
    n = x.shape[0]
    max_lag = int(min(max_lag, n - 2))
    lags = np.arange(-max_lag, max_lag + 1)
    corr = np.empty(lags.size)
    for i, L in enumerate(lags):
        if L >= 0:
            a, b = x[L:], y[: n - L]
        else:
            a, b = x[: n + L], y[-L:]
        num = np.sum(a * b)
        den = np.sqrt(np.sum(a * a) * np.sum(b * b))
        corr[i] = num / den if den > 0 else 0.0
    i = int(np.argmax(corr))
    frac = 0.0
    if 0 < i < lags.size - 1:
        c0, c1, c2 = corr[i - 1], corr[i], corr[i + 1]
        denom = c0 - 2 * c1 + c2
        if denom < 0:
            frac = 0.5 * (c0 - c2) / denom
    return float((lags[i] + frac) * dt)


def convergence_time(t: np.ndarray, series: np.ndarray, target, band: float) -> float:
    """First time after which ``|series - target| <= band`` until the end.

    Multi-column series use the max-norm across columns. Returns
    :data:`NOT_CONVERGED` when the last sample is outside the band.
    """
    s = np.asarray(series, dtype=float)
    err = np.abs(s - np.asarray(target, dtype=float))
    if err.ndim > 1:
        err = err.max(axis=1)
    outside = np.nonzero(err > band)[0]
    if outside.size == 0:
        return float(t[0] - t[0])
    last = outside[-1]
    if last == err.size - 1:
        return NOT_CONVERGED
    return float(t[last + 1] - t[0])


def noise_rms(noisy_output: np.ndarray, clean_output: np.ndarray) -> float:
    """RMS of the difference between a filter's noisy and noise-free outputs."""
    d = np.asarray(noisy_output, dtype=float) - np.asarray(clean_output, dtype=float)
    return float(np.sqrt(np.mean(d**2)))
