"""Linear time-invariant system utilities.

Continuous-time state-space systems, observability tests, series
concatenation, stationary Kalman gains, frequency responses, H2 norms and
the first-order low-pass baselines used for filter comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as sla
from scipy import integrate, signal

RANK_TOL = 1e-9


class LtiError(ValueError):
    """Raised for dimension mismatches and failed numerical preconditions."""


class RiccatiNotConverged(LtiError):
    """Raised when the Riccati iteration stalls; carries the last residual."""

    def __init__(self, residual: float, iterations: int):
        super().__init__(
            f"Riccati iteration did not converge after {iterations} steps "
            f"(relative residual {residual:.3e})"
        )
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class LtiSystem:
    """Continuous-time ``x' = A x + B w``, ``y = C x``.

    ``Q`` is the process-noise PSD of ``w`` and ``R_meas`` the measurement
    noise PSD; both are optional.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q: Optional[np.ndarray] = None
    R_meas: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float).reshape(A.shape[0], -1)
        C = np.asarray(self.C, dtype=float).reshape(-1, A.shape[0])
        if A.shape[0] != A.shape[1]:
            raise LtiError(f"A must be square, got {A.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        if self.Q is not None:
            Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
            if Q.shape != (B.shape[1], B.shape[1]):
                raise LtiError(f"Q must be {B.shape[1]}x{B.shape[1]}, got {Q.shape}")
            if not np.allclose(Q, Q.T, atol=1e-12):
                raise LtiError("Q must be symmetric")
            if np.linalg.eigvalsh(Q).min() < -1e-12 * max(1.0, np.trace(Q)):
                raise LtiError("Q must be positive semidefinite")
            object.__setattr__(self, "Q", Q)
        if self.R_meas is not None:
            R = np.atleast_2d(np.asarray(self.R_meas, dtype=float))
            if R.shape != (C.shape[0], C.shape[0]):
                raise LtiError(f"R_meas must be {C.shape[0]}x{C.shape[0]}, got {R.shape}")
            if not np.allclose(R, R.T, atol=1e-12) or np.linalg.eigvalsh(R).min() <= 0.0:
                raise LtiError("R_meas must be symmetric positive definite")
            object.__setattr__(self, "R_meas", R)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def with_noise(self, Q: np.ndarray, R_meas: np.ndarray) -> "LtiSystem":
        return LtiSystem(self.A, self.B, self.C, Q, R_meas)


@dataclass(frozen=True)
class TransferFunction:
    """Frequency response ``G(jw)``.

    ``realization`` holds ``(A, B, C, D)`` when the response comes from a
    state-space model; it enables the Lyapunov cross-check in
    :func:`h2_norm`.
    """

    evaluator: Callable[[float], np.ndarray]
    realization: Optional[tuple] = field(default=None)

    def __call__(self, w: float) -> np.ndarray:
        return np.atleast_2d(self.evaluator(w))

    @classmethod
    def from_ss(cls, A, B, C, D=None) -> "TransferFunction":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
        C = np.asarray(C, dtype=float).reshape(-1, A.shape[0])
        D = np.zeros((C.shape[0], B.shape[1])) if D is None else np.atleast_2d(D)
        eye = np.eye(A.shape[0])

        def ev(w: float) -> np.ndarray:
            return C @ np.linalg.solve(1j * w * eye - A, B) + D

        return cls(ev, (A, B, C, D))

    def magnitude(self, w: np.ndarray) -> np.ndarray:
        """``|G(jw)|`` for a SISO response on a frequency grid."""
        return np.array([abs(self(wi)[0, 0]) for wi in np.atleast_1d(w)])


def rank(M: np.ndarray, tol: float = RANK_TOL) -> int:
    """Numerical rank with relative singular-value tolerance."""
    s = np.linalg.svd(np.atleast_2d(M), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


def observability_matrix(sys: LtiSystem) -> np.ndarray:
    """Stack ``[C; CA; ...; CA^(n-1)]``."""
    A, C = sys.A, sys.C
    if C.shape[1] != A.shape[0]:
        raise LtiError(f"C has {C.shape[1]} columns, A is {A.shape[0]}x{A.shape[0]}")
    blocks = [C]
    for _ in range(A.shape[0] - 1):
        blocks.append(blocks[-1] @ A)
    return np.vstack(blocks)


def controllability_matrix(sys: LtiSystem) -> np.ndarray:
    """Stack ``[B, AB, ..., A^(n-1) B]``."""
    blocks = [sys.B]
    for _ in range(sys.n - 1):
        blocks.append(sys.A @ blocks[-1])
    return np.hstack(blocks)


def is_observable(sys: LtiSystem, tol: float = RANK_TOL) -> bool:
    return rank(observability_matrix(sys), tol) == sys.n


def series_concat(
    plant: LtiSystem, driver: LtiSystem, expose_driver_output: bool = True
) -> LtiSystem:
    """Feed the driver output into the plant input.

    The state is ``[x_plant; x_driver]`` and the white noise enters through
    the driver only. With ``expose_driver_output`` the driver output is
    appended to the measured outputs.
    """
    As, Bs, Cs = plant.A, plant.B, plant.C
    Ag, Bg, Cg = driver.A, driver.B, driver.C
    if Cg.shape[0] != Bs.shape[1]:
        raise LtiError(
            f"driver output dim {Cg.shape[0]} does not match plant input dim {Bs.shape[1]}"
        )
    ns, ng = As.shape[0], Ag.shape[0]
    A = np.block([[As, Bs @ Cg], [np.zeros((ng, ns)), Ag]])
    B = np.vstack([np.zeros((ns, Bg.shape[1])), Bg])
    if expose_driver_output:
        C = np.block(
            [
                [Cs, np.zeros((Cs.shape[0], ng))],
                [np.zeros((Cg.shape[0], ns)), Cg],
            ]
        )
    else:
        C = np.hstack([Cs, np.zeros((Cs.shape[0], ng))])
    return LtiSystem(A, B, C, driver.Q)


def stationary_kalman_gain(
    sys: LtiSystem,
    dt: float = 1e-3,
    rtol: float = 1e-12,
    max_iter: int = 1_000_000,
) -> np.ndarray:
    """Continuous-time stationary Kalman gain from the sampled Riccati recursion.

    The model is sampled with forward Euler at step ``dt``: process noise
    covariance ``B Q B^T dt`` and measurement covariance ``R / dt``. The
    predict/update recursion runs until the relative Frobenius change of the
    prior covariance drops below ``rtol``. The continuous gain is recovered
    as ``P_mid C^T R^-1`` with ``P_mid`` the average of the stationary prior
    and posterior covariances, which is second-order accurate in ``dt``.
    """
    if sys.Q is None or sys.R_meas is None:
        raise LtiError("stationary_kalman_gain needs Q and R_meas")
    A, B, C = sys.A, sys.B, sys.C
    n = A.shape[0]
    if rank(observability_matrix(sys)) < n:
        raise LtiError("(C, A) is not observable")
    Phi = np.eye(n) + A * dt
    Qd = B @ sys.Q @ B.T * dt
    Rd = sys.R_meas / dt
    Rinv = np.linalg.inv(sys.R_meas)
    P = np.eye(n)
    residual = np.inf
    for it in range(1, max_iter + 1):
        S = C @ P @ C.T + Rd
        K = np.linalg.solve(S, C @ P).T
        Pp = P - K @ S @ K.T
        Pn = Phi @ Pp @ Phi.T + Qd
        Pn = 0.5 * (Pn + Pn.T)
        if not np.all(np.isfinite(Pn)):
            raise RiccatiNotConverged(np.inf, it)
        residual = np.linalg.norm(Pn - P) / max(np.linalg.norm(P), 1e-300)
        P = Pn
        if residual < rtol:
            S = C @ P @ C.T + Rd
            K = np.linalg.solve(S, C @ P).T
            P_post = P - K @ S @ K.T
            return 0.5 * (P + P_post) @ C.T @ Rinv
    raise RiccatiNotConverged(residual, max_iter)


def _check_hurwitz(A: np.ndarray) -> None:
    ev = np.linalg.eigvals(A)
    if np.max(ev.real) >= 0.0:
        raise LtiError(f"closed loop is not Hurwitz (max real part {np.max(ev.real):.3e})")


def transfer_functions(
    sys: LtiSystem, L: np.ndarray, pick_row: int
) -> tuple[TransferFunction, ...]:
    """Responses from each measured channel to estimated state ``pick_row``.

    Row ``pick_row`` of ``(sI - A + L C)^-1 L`` split into one SISO transfer
    function per output channel, in output order.
    """
    Acl = sys.A - L @ sys.C
    _check_hurwitz(Acl)
    e = np.zeros((1, sys.n))
    e[0, pick_row] = 1.0
    return tuple(
        TransferFunction.from_ss(Acl, L[:, [j]], e) for j in range(sys.C.shape[0])
    )


def integrated_response(G_rate: TransferFunction, G_direct: TransferFunction) -> TransferFunction:
    """Response ``G_rate(s)/s + G_direct(s)``.

    Models a quantity observed both directly and through its integral, such
    as acceleration seen by an accelerometer and a velocity sensor.
    """
    return TransferFunction(lambda w: G_rate(w) / (1j * w) + G_direct(w))


def _h2_lyapunov(real: tuple) -> float:
    A, B, C, D = real
    if np.any(np.abs(D) > 0.0):
        raise LtiError("H2 norm diverges for a non-strictly-proper system")
    _check_hurwitz(A)
    Wc = sla.solve_continuous_lyapunov(A, -B @ B.T)
    return float(np.sqrt(max(np.trace(C @ Wc @ C.T), 0.0)))


TAIL_TOL = 1e-4
MAX_WIDENINGS = 8


def h2_norm(
    G: TransferFunction,
    w_min: float = 1e-3,
    w_max: float = 1e5,
    n_points: int = 8192,
    rtol: float = 0.01,
) -> float:
    """H2 norm by log-grid quadrature of ``|G(jw)|^2``.

    The two-sided integral ``(1/2pi) int |G|^2 dw`` is evaluated as
    ``(1/pi) int_{w_min}^{w_max} |G|^2 w d(ln w)``. The grid is widened by
    two decades on each side whose tail ``|G|^2 w`` still carries more than
    ``TAIL_TOL`` of the integral, keeping the point density. When ``G``
    carries a state-space realization the Lyapunov value is computed too
    and the two must agree to ``rtol``.
    """
    if n_points < 4096:
        raise LtiError("at least 4096 grid points are required")
    density = n_points / np.log(w_max / w_min)
    lo, hi = np.log(w_min), np.log(w_max)
    for _ in range(MAX_WIDENINGS + 1):
        lw = np.linspace(lo, hi, max(n_points, int(density * (hi - lo))))
        w = np.exp(lw)
        mag2 = np.array([np.sum(np.abs(G(wi)) ** 2) for wi in w])
        if not np.all(np.isfinite(mag2)):
            raise LtiError("non-finite frequency response on the grid")
        total = integrate.simpson(mag2 * w, x=lw)
        # Below w_min |G|^2 is about flat; above w_max it falls at least as 1/w^2.
        lo_tail, hi_tail = mag2[0] * w[0], mag2[-1] * w[-1]
        if max(lo_tail, hi_tail) <= TAIL_TOL * total:
            break
        if lo_tail > TAIL_TOL * total:
            lo -= np.log(100.0)
        if hi_tail > TAIL_TOL * total:
            hi += np.log(100.0)
    else:
        raise LtiError("H2 integral does not converge on the grid")
    quad = float(np.sqrt(total / np.pi))
    if G.realization is not None:
        lyap = _h2_lyapunov(G.realization)
        scale = max(abs(lyap), 1e-300)
        if lyap == 0.0 and quad == 0.0:
            return 0.0
        if abs(quad - lyap) > rtol * scale:
            raise LtiError(f"quadrature {quad:.6g} and Lyapunov {lyap:.6g} disagree")
        return lyap
    return quad


def match_butterworth(target_sigma: float) -> float:
    """Time constant ``k`` with ``||1/(1+ks)||_2 == target_sigma``."""
    if target_sigma <= 0.0:
        raise LtiError("target_sigma must be positive")
    return 1.0 / (2.0 * target_sigma**2)


def butterworth1_coeffs(k: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Tustin discretization of ``1/(1+ks)`` as ``(b, a)``."""
    b, a = signal.bilinear([1.0], [k, 1.0], fs=1.0 / dt)
    return np.asarray(b), np.asarray(a)


def filter_butterworth1(x: np.ndarray, k: float, dt: float) -> np.ndarray:
    """Causal first-order low-pass ``1/(1+ks)`` along axis 0.

    The filter state starts at steady state for the first sample so that a
    constant signal passes unchanged.
    """
    x = np.asarray(x, dtype=float)
    b, a = butterworth1_coeffs(k, dt)
    zi = signal.lfilter_zi(b, a)
    shape = (len(zi),) + (1,) * (x.ndim - 1)
    y, _ = signal.lfilter(b, a, x, axis=0, zi=zi.reshape(shape) * x[:1])
    return y


def filter_zero_phase(x: np.ndarray, k: float, dt: float) -> np.ndarray:
    """Forward then time-reversed pass of :func:`filter_butterworth1`."""
    y = filter_butterworth1(x, k, dt)
    return filter_butterworth1(y[::-1], k, dt)[::-1]


def kalman_observable_reduction(
    sys: LtiSystem, tol: float = RANK_TOL
) -> tuple[LtiSystem, np.ndarray]:
    """Observable subsystem via the SVD of the observability matrix.

    Returns the reduced system and the basis ``V1`` (``n x r``) of the
    observable subspace, so that ``x_r = V1^T x``. The observable subspace
    is ``A^T``-invariant, hence ``C V1 V1^T = C`` and ``V1^T A V1 V1^T =
    V1^T A`` and the reduced system reproduces the original output exactly.
    """
    O = observability_matrix(sys)
    _, s, Vt = np.linalg.svd(O)
    r = int(np.sum(s > tol * s[0])) if s.size and s[0] > 0 else 0
    V1 = Vt[:r].T
    Ar = V1.T @ sys.A @ V1
    Br = V1.T @ sys.B
    Cr = sys.C @ V1
    return LtiSystem(Ar, Br, Cr, sys.Q, sys.R_meas), V1


def noise_sigma(responses: Sequence[TransferFunction], psds: Sequence[float]) -> float:
    """Output standard deviation of independent white noises through ``responses``."""
    return float(np.sqrt(sum(r * h2_norm(G) ** 2 for G, r in zip(responses, psds))))


def butterworth_tf(k: float) -> TransferFunction:
    """``1/(1+ks)`` with its state-space realization."""
    return TransferFunction.from_ss([[-1.0 / k]], [[1.0 / k]], [[1.0]])


@dataclass(frozen=True)
class VelocityAccelStudy:
    """Velocity and acceleration sensors fused through a two-state integrator model.

    ``G_v`` and ``G_a`` map the velocity and acceleration measurements to
    the acceleration estimate; ``G_aa`` is the response from true
    acceleration to its estimate; ``k`` is the matched low-pass time constant.
    """

    system: LtiSystem
    L: np.ndarray
    G_v: TransferFunction
    G_a: TransferFunction
    G_aa: TransferFunction
    sigma: float
    k: float


def velocity_accel_study(
    r_v: float, r_a: float, q_a1: float, q_a2: float, dt: float = 1e-3
) -> VelocityAccelStudy:
    """Stationary filter for ``v' = a`` with ``a`` a second-order integrator output.

    States ``(v, a, a')``, outputs ``(v, a)`` with noise PSDs ``r_v`` and
    ``r_a``. The low-pass is matched so that ``||1/(1+ks)||_2`` equals the
    standard deviation of the acceleration estimate under unit-PSD
    scaling, ``sqrt(r_v ||G_v||^2 + r_a ||G_a||^2)``.
    """
    plant = LtiSystem([[0.0]], [[1.0]], [[1.0]])
    driver = LtiSystem(np.eye(2, k=1), np.eye(2), [[1.0, 0.0]], np.diag([q_a1, q_a2]))
    cat = series_concat(plant, driver, expose_driver_output=True)
    sysc = cat.with_noise(np.diag([q_a1, q_a2]), np.diag([r_v, r_a]))
    L = stationary_kalman_gain(sysc, dt)
    G_v, G_a = transfer_functions(sysc, L, 1)
    sigma = noise_sigma((G_v, G_a), (r_v, r_a))
    return VelocityAccelStudy(sysc, L, G_v, G_a, integrated_response(G_v, G_a), sigma,
                              match_butterworth(sigma))
