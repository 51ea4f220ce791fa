"""Statistical motion models: white-noise driven integrator chains."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lti import LtiSystem, controllability_matrix, observability_matrix, rank


class MotionModelError(ValueError):
    """Invalid model parameters."""


@dataclass(frozen=True)
class StatModel:
    """Scalar colored-noise model ``g' = A g + B w``, ``y = C g``.

    Attributes
    ----------
    order : int
        State dimension ``N``.
    A, B, C : ndarray
        Realization with shapes ``(N, N)``, ``(N, p)`` and ``(1, N)``.
    q : ndarray
        White-noise intensity of each driver.
    """

    order: int
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    q: np.ndarray

    @property
    def Q(self) -> np.ndarray:
        return np.diag(self.q)

    def as_lti(self) -> LtiSystem:
        return LtiSystem(self.A, self.B, self.C, self.Q)


def make_integrator_model(N: int, q) -> StatModel:
    """``N``-th order integrator chain driven at every level.

    ``A`` is the upper shift matrix, ``B = I`` and ``C = e1^T``, so the
    output is the top of the chain and ``q[i]`` drives the ``i``-th
    derivative state.
    """
    if int(N) != N or N < 1:
        raise MotionModelError(f"order must be a positive integer, got {N}")
    N = int(N)
    q = np.asarray(q, dtype=float).ravel()
    if q.size != N:
        raise MotionModelError(f"expected {N} noise intensities, got {q.size}")
    if np.any(q < 0.0):
        raise MotionModelError("noise intensities must be nonnegative")
    if not np.any(q > 0.0):
        raise MotionModelError("at least one noise intensity must be positive")
    A = np.eye(N, k=1)
    B = np.eye(N)
    C = np.zeros((1, N))
    C[0, 0] = 1.0
    model = StatModel(N, A, B, C, q)
    sysm = LtiSystem(A, B @ np.diag(np.sqrt(q)), C)
    if rank(observability_matrix(sysm)) != N:
        raise MotionModelError("(C, A) is not observable")
    if rank(controllability_matrix(sysm)) != N:
        raise MotionModelError("(A, B sqrt(Q)) is not controllable")
    return model


def psd(model: StatModel, w: float) -> float:
    """Output power spectral density ``G(jw) Q G(jw)^H`` at ``w > 0``."""
    if w <= 0.0:
        raise MotionModelError("psd is undefined at w <= 0 for integrator models")
    G = model.C @ np.linalg.solve(1j * w * np.eye(model.order) - model.A, model.B)
    return float(np.real(G @ model.Q @ G.conj().T)[0, 0])


def psd_closed_form(q, w: float) -> float:
    """``sum_i q_i / w^(2i)`` for integrator models."""
    q = np.asarray(q, dtype=float)
    i = np.arange(1, q.size + 1)
    return float(np.sum(q / w ** (2 * i)))


def vectorize(model: StatModel, dims: int = 3) -> LtiSystem:
    """Independent copy of ``model`` per axis.

    The state is ordered derivative-major: ``[g_0 (x,y,z), g_1 (x,y,z), ...]``
    so that the first ``dims`` entries are the modeled quantity itself.
    """
    I = np.eye(dims)
    return LtiSystem(
        np.kron(model.A, I),
        np.kron(model.B, I),
        np.kron(model.C, I),
        np.kron(model.Q, I),
    )
