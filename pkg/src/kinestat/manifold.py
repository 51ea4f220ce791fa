"""SO(3) primitives and chart-based differentiation.

Rotations are plain ``(3, 3)`` float arrays and rotation vectors are
``(3,)`` arrays. Everything here is a pure function.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

_SMALL_ANGLE = 1e-8


def skew(v: np.ndarray) -> np.ndarray:
    """Return the skew-symmetric matrix ``S`` with ``S @ w == cross(v, w)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def unskew(S: np.ndarray) -> np.ndarray:
    """Inverse of :func:`skew` applied to the antisymmetric part of ``S``."""
    return 0.5 * np.array([S[2, 1] - S[1, 2], S[0, 2] - S[2, 0], S[1, 0] - S[0, 1]])


def exp_so3(v: np.ndarray) -> np.ndarray:
    """Exponential map from a rotation vector to a rotation matrix.

    Parameters
    ----------
    v : array_like, shape (3,)
        Axis-angle vector in radians.

    Returns
    -------
    ndarray, shape (3, 3)
        Rotation matrix. Uses the second-order Taylor expansion of the
        Rodrigues formula when ``|v| < 1e-8``.
    """
    x, y, z = float(v[0]), float(v[1]), float(v[2])
    t2 = x * x + y * y + z * z
    if t2 < _SMALL_ANGLE**2:
        a, b = 1.0, 0.5
    else:
        t = math.sqrt(t2)
        a = math.sin(t) / t
        b = (1.0 - math.cos(t)) / t2
    # I + a K + b K^2 with K^2 = v v^T - |v|^2 I.
    d = 1.0 - b * t2
    bxy, bxz, byz = b * x * y, b * x * z, b * y * z
    return np.array(
        [
            [d + b * x * x, bxy - a * z, bxz + a * y],
            [bxy + a * z, d + b * y * y, byz - a * x],
            [bxz - a * y, byz + a * x, d + b * z * z],
        ]
    )


def log_so3(R: np.ndarray) -> np.ndarray:
    """Logarithm map from a rotation matrix to its rotation vector.

    The result has norm in ``[0, pi]``. Near a half turn the axis is taken
    from the column of ``a a^T`` with the largest diagonal entry, which makes
    the output deterministic.
    """
    R = np.asarray(R, dtype=float)
    cos_t = np.clip(0.5 * (np.trace(R) - 1.0), -1.0, 1.0)
    w = unskew(R)  # sin(theta) * axis
    sin_t = np.linalg.norm(w)
    if cos_t > 0.0:
        # atan2 is well conditioned here and sin_t/theta -> 1 as theta -> 0.
        theta = np.arctan2(sin_t, cos_t)
        if sin_t < 1e-12:
            return w.copy()
        return w * (theta / sin_t)
    theta = np.arctan2(sin_t, cos_t)
    if np.pi - theta > 1e-6 and sin_t > 1e-12:
        return w * (theta / sin_t)
    # Half-turn branch: sym(R) = cos(t) I + (1 - cos(t)) a a^T.
    B = (0.5 * (R + R.T) - cos_t * np.eye(3)) / (1.0 - cos_t)
    i = int(np.argmax(np.diag(B)))
    axis = B[:, i] / np.sqrt(max(B[i, i], 1e-300))
    axis /= np.linalg.norm(axis)
    # Fix the sign so that sin(theta) * axis agrees with the antisymmetric part.
    if axis @ w < 0.0:
        axis = -axis
    return theta * axis


def right_jacobian(v: np.ndarray) -> np.ndarray:
    """Right Jacobian ``Jr`` with ``Exp(v + d) ~= Exp(v) Exp(Jr(v) d)``."""
    v = np.asarray(v, dtype=float)
    theta2 = float(v @ v)
    K = skew(v)
    if theta2 < 1e-10:
        return np.eye(3) - 0.5 * K + (K @ K) / 6.0
    theta = np.sqrt(theta2)
    a = (1.0 - np.cos(theta)) / theta2
    b = (theta - np.sin(theta)) / (theta2 * theta)
    return np.eye(3) - a * K + b * (K @ K)


def right_jacobian_inv(v: np.ndarray) -> np.ndarray:
    """Inverse of :func:`right_jacobian`."""
    v = np.asarray(v, dtype=float)
    theta2 = float(v @ v)
    K = skew(v)
    if theta2 < 1e-10:
        return np.eye(3) + 0.5 * K + (K @ K) / 12.0
    theta = np.sqrt(theta2)
    c = 1.0 / theta2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * K + c * (K @ K)


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Project a near-rotation onto SO(3) via SVD."""
    U, _, Vt = np.linalg.svd(R)
    M = U @ Vt
    if np.linalg.det(M) < 0.0:
        U[:, -1] = -U[:, -1]
        M = U @ Vt
    return M


def geodesic_distance(R1: np.ndarray, R2: np.ndarray) -> float:
    """Angle in radians of the relative rotation ``R2^T R1``."""
    return float(np.linalg.norm(log_so3(R2.T @ R1)))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation (Haar measure)."""
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def chart_gradient(
    g: Callable[[object], np.ndarray], xbar: object, h: float = 1e-5
) -> np.ndarray:
    """Gradient of ``g`` in the local chart centred at ``xbar``.

    Parameters
    ----------
    g : callable
        Map from a manifold point to an ``m``-vector.
    xbar : ndarray or rotation matrix or point with ``retract``
        Expansion point. A ``(3, 3)`` array is treated as a rotation, a 1-D
        array as a Euclidean point, and any object exposing ``retract(delta)``
        and ``dim`` (such as a nominal filter state) uses that retraction.
    h : float
        Central-difference step.

    Returns
    -------
    ndarray, shape (m, n)
        Column ``i`` is the central difference along chart coordinate ``i``.
    """
    if h <= 0.0:
        raise ValueError("step h must be positive")
    if hasattr(xbar, "retract"):
        n = xbar.dim
        retract = xbar.retract
    else:
        arr = np.asarray(xbar, dtype=float)
        if arr.shape == (3, 3):
            n = 3
            retract = lambda d: arr @ exp_so3(d)  # noqa: E731
        else:
            n = arr.size
            retract = lambda d: arr + d  # noqa: E731
    cols = []
    for i in range(n):
        d = np.zeros(n)
        d[i] = h
        gp = np.atleast_1d(np.asarray(g(retract(d)), dtype=float))
        gm = np.atleast_1d(np.asarray(g(retract(-d)), dtype=float))
        cols.append((gp - gm) / (2.0 * h))
    return np.stack(cols, axis=1)
