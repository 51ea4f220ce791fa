"""Concrete system models for the error-state filter.

* :class:`PosImuStateModel`: position/heading/IMU fusion where acceleration
  and angular velocity are outputs of appended integrator models and the IMU
  readings are measurements.
* :class:`PosImuInputModel`: the conventional form where IMU readings drive
  the kinematics as known inputs.
* :class:`InterImuModel`: relative extrinsics between two rigidly attached
  IMUs in minimal form.
* :class:`LinearPlugin`: any :class:`~kinestat.lti.LtiSystem` on a single
  Euclidean block, for cross-checks against a plain Kalman filter.

Measurement channels
--------------------
``pos``  position of the sensor point, ``p + R c``
``mag``  heading direction, ``R^T e_ref``
``acc``  accelerometer, ``a + b_a``
``gyro`` gyroscope, ``w + b_w``
``acc2`` second accelerometer (inter-IMU model only)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .eskf import NominalState, StateLayout, SystemModelPlugin
from .lti import LtiSystem, kalman_observable_reduction
from .manifold import exp_so3, skew
from .motion_model import StatModel, make_integrator_model

GRAVITY = np.array([0.0, 0.0, -9.81])
E1 = np.array([1.0, 0.0, 0.0])
I3 = np.eye(3)


class ModelError(ValueError):
    """Invalid model configuration or missing input."""


@dataclass(frozen=True)
class NoiseSpec:
    """Sensor noise standard deviations (per sample) and bias random walks.

    ``bias_*_rw`` are continuous random-walk intensities in units of
    ``(quantity)^2 / s``.
    """

    pos: float = 0.005
    mag: float = 0.01
    acc: float = 0.05
    gyro: float = 0.005
    acc2: float = 0.05
    bias_acc_rw: float = 1e-6
    bias_gyro_rw: float = 1e-8


def _kron3(M: np.ndarray) -> np.ndarray:
    return np.kron(M, I3)


def _model_blocks(m: StatModel) -> tuple[np.ndarray, np.ndarray]:
    """3-axis ``A`` and the output selector ``C`` of a scalar model."""
    return _kron3(m.A), _kron3(m.C)


DEFAULT_P0 = {
    "p": 1.0,
    "v": 1.0,
    "R": 0.1**2,
    "c": 1.0,
    "b_a": 1e-2,
    "b_w": 1e-2,
    "gamma_a": 1.0,
    "gamma_w": 1.0,
    "w": 1.0,
    "gamma_tau": 1.0,
}


def initial_covariance(layout: StateLayout, diag: Optional[dict] = None) -> np.ndarray:
    """Diagonal initial covariance from per-block variances."""
    d = dict(DEFAULT_P0)
    if diag:
        d.update(diag)
    P = np.zeros((layout.n_err, layout.n_err))
    for b in layout.blocks:
        s = layout.err[b.name]
        val = d.get(b.name, 1.0)
        val = np.broadcast_to(np.asarray(val, dtype=float), (b.dim,))
        P[s, s] = np.diag(val)
    return P


class PosImuStateModel(SystemModelPlugin):
    """State formulation: ``(p, v, R, c, b_a, b_w, gamma_a, gamma_w)``.

    Dynamics: ``p' = v``, ``v' = R a + g``, ``R' = R [w]``, ``c' = 0``, bias
    random walks and integrator models ``gamma' = A gamma + w_gamma`` with
    ``a = C_a gamma_a`` and ``w = C_w gamma_w``.
    """

    channels = ("pos", "mag", "acc", "gyro")
    composite = {"imu": ("acc", "gyro")}

    def __init__(
        self,
        model_a: StatModel,
        model_w: StatModel,
        noise: NoiseSpec = NoiseSpec(),
        gravity: np.ndarray = GRAVITY,
        e_ref: np.ndarray = E1,
    ):
        self.model_a, self.model_w = model_a, model_w
        self.noise = noise
        self.g = np.asarray(gravity, dtype=float)
        self.e_ref = np.asarray(e_ref, dtype=float)
        Na, Nw = model_a.order, model_w.order
        self.layout = StateLayout(
            [
                ("p", 3), ("v", 3), ("R", "rotation"), ("c", 3),
                ("b_a", 3), ("b_w", 3), ("gamma_a", 3 * Na), ("gamma_w", 3 * Nw),
            ]
        )
        self.Aa, self.Ca = _model_blocks(model_a)
        self.Aw, self.Cw = _model_blocks(model_w)
        L = self.layout
        self._s = {k: L.err[k] for k in L.names()}
        self.n_w = 6 + 3 * Na + 3 * Nw
        self.Q_c = np.diag(
            np.concatenate(
                [
                    np.full(3, noise.bias_acc_rw),
                    np.full(3, noise.bias_gyro_rw),
                    np.repeat(model_a.q, 3),
                    np.repeat(model_w.q, 3),
                ]
            )
        )
        Fw = np.zeros((L.n_err, self.n_w))
        Fw[L.err["b_a"].start :, :] = np.eye(self.n_w)
        self._Fw = Fw
        self._R = {
            "pos": noise.pos**2 * I3,
            "mag": noise.mag**2 * I3,
            "acc": noise.acc**2 * I3,
            "gyro": noise.gyro**2 * I3,
        }

    def accel(self, x: NominalState) -> np.ndarray:
        return self.Ca @ x["gamma_a"]

    def omega(self, x: NominalState) -> np.ndarray:
        return self.Cw @ x["gamma_w"]

    def f(self, x: NominalState, u=None) -> np.ndarray:
        s = self._s
        out = np.zeros(self.layout.n_err)
        R = x["R"]
        out[s["p"]] = x["v"]
        out[s["v"]] = R @ self.accel(x) + self.g
        out[s["R"]] = self.omega(x)
        out[s["gamma_a"]] = self.Aa @ x["gamma_a"]
        out[s["gamma_w"]] = self.Aw @ x["gamma_w"]
        return out

    def F_x(self, x: NominalState, u=None) -> np.ndarray:
        s = self._s
        n = self.layout.n_err
        F = np.zeros((n, n))
        R = x["R"]
        F[s["p"], s["v"]] = I3
        F[s["v"], s["R"]] = -R @ skew(self.accel(x))
        F[s["v"], s["gamma_a"]] = R @ self.Ca
        F[s["R"], s["R"]] = -skew(self.omega(x))
        F[s["R"], s["gamma_w"]] = self.Cw
        F[s["gamma_a"], s["gamma_a"]] = self.Aa
        F[s["gamma_w"], s["gamma_w"]] = self.Aw
        return F

    def F_w(self, x: NominalState, u=None) -> np.ndarray:
        return self._Fw

    def h(self, x: NominalState, channel: str) -> np.ndarray:
        if channel == "pos":
            return x["p"] + x["R"] @ x["c"]
        if channel == "mag":
            return x["R"].T @ self.e_ref
        if channel == "acc":
            return self.accel(x) + x["b_a"]
        if channel == "gyro":
            return self.omega(x) + x["b_w"]
        raise ModelError(f"unknown channel {channel!r}")

    def H(self, x: NominalState, channel: str) -> np.ndarray:
        s = self._s
        H = np.zeros((3, self.layout.n_err))
        R = x["R"]
        if channel == "pos":
            H[:, s["p"]] = I3
            H[:, s["R"]] = -R @ skew(x["c"])
            H[:, s["c"]] = R
        elif channel == "mag":
            H[:, s["R"]] = skew(R.T @ self.e_ref)
        elif channel == "acc":
            H[:, s["b_a"]] = I3
            H[:, s["gamma_a"]] = self.Ca
        elif channel == "gyro":
            H[:, s["b_w"]] = I3
            H[:, s["gamma_w"]] = self.Cw
        else:
            raise ModelError(f"unknown channel {channel!r}")
        return H

    def R_meas(self, channel: str) -> np.ndarray:
        return self._R[channel]


class PosImuInputModel(SystemModelPlugin):
    """Input formulation: ``(p, v, R, c, b_a, b_w)`` driven by ``u = (a_m, w_m)``.

    ``v' = R (a_m - b_a) + g`` and ``R' = R [w_m - b_w]``. The IMU white
    noise enters as process noise with PSD ``sigma^2 * imu_dt``.
    """

    channels = ("pos", "mag")

    def __init__(
        self,
        noise: NoiseSpec = NoiseSpec(),
        imu_dt: float = 1e-3,
        gravity: np.ndarray = GRAVITY,
        e_ref: np.ndarray = E1,
    ):
        self.noise = noise
        self.g = np.asarray(gravity, dtype=float)
        self.e_ref = np.asarray(e_ref, dtype=float)
        self.layout = StateLayout(
            [("p", 3), ("v", 3), ("R", "rotation"), ("c", 3), ("b_a", 3), ("b_w", 3)]
        )
        L = self.layout
        self._s = {k: L.err[k] for k in L.names()}
        self.n_w = 12
        self.Q_c = np.diag(
            np.concatenate(
                [
                    np.full(3, noise.acc**2 * imu_dt),
                    np.full(3, noise.gyro**2 * imu_dt),
                    np.full(3, noise.bias_acc_rw),
                    np.full(3, noise.bias_gyro_rw),
                ]
            )
        )
        self._R = {"pos": noise.pos**2 * I3, "mag": noise.mag**2 * I3}

    @staticmethod
    def _input(u, check: bool = False) -> tuple[np.ndarray, np.ndarray]:
        if u is None:
            raise ModelError("input formulation needs (a_m, w_m) for every step")
        a_m, w_m = u
        if check and not (np.isfinite(a_m).all() and np.isfinite(w_m).all()):
            raise ModelError("missing IMU input sample")
        return a_m, w_m

    def f(self, x: NominalState, u=None) -> np.ndarray:
        a_m, w_m = self._input(u)
        s = self._s
        out = np.zeros(self.layout.n_err)
        out[s["p"]] = x["v"]
        out[s["v"]] = x["R"] @ (a_m - x["b_a"]) + self.g
        out[s["R"]] = w_m - x["b_w"]
        return out

    def F_x(self, x: NominalState, u=None) -> np.ndarray:
        a_m, w_m = self._input(u, check=True)
        s = self._s
        n = self.layout.n_err
        F = np.zeros((n, n))
        R = x["R"]
        F[s["p"], s["v"]] = I3
        F[s["v"], s["R"]] = -R @ skew(a_m - x["b_a"])
        F[s["v"], s["b_a"]] = -R
        F[s["R"], s["R"]] = -skew(w_m - x["b_w"])
        F[s["R"], s["b_w"]] = -I3
        return F

    def F_w(self, x: NominalState, u=None) -> np.ndarray:
        s = self._s
        Fw = np.zeros((self.layout.n_err, self.n_w))
        Fw[s["v"], 0:3] = -x["R"]
        Fw[s["R"], 3:6] = -I3
        Fw[s["b_a"], 6:9] = I3
        Fw[s["b_w"], 9:12] = I3
        return Fw

    def h(self, x: NominalState, channel: str) -> np.ndarray:
        if channel == "pos":
            return x["p"] + x["R"] @ x["c"]
        if channel == "mag":
            return x["R"].T @ self.e_ref
        raise ModelError(f"unknown channel {channel!r}")

    def H(self, x: NominalState, channel: str) -> np.ndarray:
        s = self._s
        H = np.zeros((3, self.layout.n_err))
        R = x["R"]
        if channel == "pos":
            H[:, s["p"]] = I3
            H[:, s["R"]] = -R @ skew(x["c"])
            H[:, s["c"]] = R
        elif channel == "mag":
            H[:, s["R"]] = skew(R.T @ self.e_ref)
        else:
            raise ModelError(f"unknown channel {channel!r}")
        return H

    def R_meas(self, channel: str) -> np.ndarray:
        return self._R[channel]


def inter_imu_accel2(
    R: np.ndarray, a: np.ndarray, w: np.ndarray, tau: np.ndarray, c: np.ndarray, b_a: np.ndarray
) -> np.ndarray:
    """Second accelerometer reading ``R (a + [w]^2 c + [tau] c) + b_a``."""
    W = skew(w)
    return R @ (a + W @ (W @ c) + np.cross(tau, c)) + b_a


class InterImuModel(SystemModelPlugin):
    """Minimal inter-IMU model ``(b_a, b_w, w, c, R, gamma_tau, gamma_a)``.

    ``b_a`` is the relative accelerometer bias seen in the second IMU frame,
    ``w`` the angular velocity of the first IMU fed by ``tau = C_tau
    gamma_tau``, ``a = C_a gamma_a`` the biased acceleration of the first
    IMU, and ``(c, R)`` the constant extrinsics.
    """

    channels = ("gyro", "acc", "acc2")
    composite = {"imu": ("gyro", "acc", "acc2")}

    def __init__(self, model_tau: StatModel, model_a: StatModel, noise: NoiseSpec = NoiseSpec()):
        self.model_tau, self.model_a = model_tau, model_a
        self.noise = noise
        Nt, Na = model_tau.order, model_a.order
        self.layout = StateLayout(
            [
                ("b_a", 3), ("b_w", 3), ("w", 3), ("c", 3), ("R", "rotation"),
                ("gamma_tau", 3 * Nt), ("gamma_a", 3 * Na),
            ]
        )
        L = self.layout
        self._s = {k: L.err[k] for k in L.names()}
        self.At, self.Ct = _model_blocks(model_tau)
        self.Aa, self.Ca = _model_blocks(model_a)
        self.n_w = 6 + 3 * Nt + 3 * Na
        self.Q_c = np.diag(
            np.concatenate(
                [
                    np.full(3, noise.bias_acc_rw),
                    np.full(3, noise.bias_gyro_rw),
                    np.repeat(model_tau.q, 3),
                    np.repeat(model_a.q, 3),
                ]
            )
        )
        s = self._s
        Fw = np.zeros((L.n_err, self.n_w))
        Fw[s["b_a"], 0:3] = I3
        Fw[s["b_w"], 3:6] = I3
        Fw[s["gamma_tau"].start :, 6:] = np.eye(3 * Nt + 3 * Na)
        self._Fw = Fw
        self._R = {
            "gyro": noise.gyro**2 * I3,
            "acc": noise.acc**2 * I3,
            "acc2": noise.acc2**2 * I3,
        }

    def tau(self, x: NominalState) -> np.ndarray:
        return self.Ct @ x["gamma_tau"]

    def accel(self, x: NominalState) -> np.ndarray:
        return self.Ca @ x["gamma_a"]

    def f(self, x: NominalState, u=None) -> np.ndarray:
        s = self._s
        out = np.zeros(self.layout.n_err)
        out[s["w"]] = self.tau(x)
        out[s["gamma_tau"]] = self.At @ x["gamma_tau"]
        out[s["gamma_a"]] = self.Aa @ x["gamma_a"]
        return out

    def F_x(self, x: NominalState, u=None) -> np.ndarray:
        s = self._s
        n = self.layout.n_err
        F = np.zeros((n, n))
        F[s["w"], s["gamma_tau"]] = self.Ct
        F[s["gamma_tau"], s["gamma_tau"]] = self.At
        F[s["gamma_a"], s["gamma_a"]] = self.Aa
        return F

    def F_w(self, x: NominalState, u=None) -> np.ndarray:
        return self._Fw

    def h(self, x: NominalState, channel: str) -> np.ndarray:
        if channel == "gyro":
            return x["w"] + x["b_w"]
        if channel == "acc":
            return self.accel(x)
        if channel == "acc2":
            return inter_imu_accel2(x["R"], self.accel(x), x["w"], self.tau(x), x["c"], x["b_a"])
        raise ModelError(f"unknown channel {channel!r}")

    def H(self, x: NominalState, channel: str) -> np.ndarray:
        s = self._s
        H = np.zeros((3, self.layout.n_err))
        if channel == "gyro":
            H[:, s["w"]] = I3
            H[:, s["b_w"]] = I3
        elif channel == "acc":
            H[:, s["gamma_a"]] = self.Ca
        elif channel == "acc2":
            R, c, w = x["R"], x["c"], x["w"]
            tau = self.tau(x)
            W = skew(w)
            u_body = self.accel(x) + W @ (W @ c) + np.cross(tau, c)
            H[:, s["b_a"]] = I3
            H[:, s["R"]] = -R @ skew(u_body)
            H[:, s["c"]] = R @ (W @ W + skew(tau))
            H[:, s["w"]] = R @ (np.outer(w, c) + (w @ c) * I3 - 2.0 * np.outer(c, w))
            H[:, s["gamma_tau"]] = -R @ skew(c) @ self.Ct
            H[:, s["gamma_a"]] = R @ self.Ca
        else:
            raise ModelError(f"unknown channel {channel!r}")
        return H

    def R_meas(self, channel: str) -> np.ndarray:
        return self._R[channel]


class LinearPlugin(SystemModelPlugin):
    """Linear system ``x' = A x + B w``, ``y = C x`` with one channel ``y``.

    ``R_meas`` of the system is used as the per-sample measurement covariance.
    """

    channels = ("y",)

    def __init__(self, sys: LtiSystem):
        if sys.Q is None or sys.R_meas is None:
            raise ModelError("LinearPlugin needs Q and R_meas")
        self.sys = sys
        self.layout = StateLayout([("x", sys.n)])
        self.Q_c = sys.Q
        self.n_w = sys.B.shape[1]

    def f(self, x: NominalState, u=None) -> np.ndarray:
        return self.sys.A @ x["x"]

    def F_x(self, x: NominalState, u=None) -> np.ndarray:
        return self.sys.A.copy()

    def F_w(self, x: NominalState, u=None) -> np.ndarray:
        return self.sys.B.copy()

    def h(self, x: NominalState, channel: str) -> np.ndarray:
        return self.sys.C @ x["x"]

    def H(self, x: NominalState, channel: str) -> np.ndarray:
        return self.sys.C.copy()

    def R_meas(self, channel: str) -> np.ndarray:
        return self.sys.R_meas


# ---------------------------------------------------------------------------
# Non-minimal inter-IMU model and the invariance check.


@dataclass
class InvarianceReport:
    """Outcome of :func:`check_minimal_invariance`."""

    minimal: bool
    nullity: int
    xbar_norm: float
    max_output_diff: float
    message: str = ""
    xbar: Optional[np.ndarray] = field(default=None, repr=False)


class NonMinimalInterImu:
    """Inter-IMU model before reduction.

    State (flat): ``gamma_a1 (3Na), gamma_tau1 (3Nt), w1, b_w1, b_a1, b_a2,
    c`` followed by the constant rotation ``R`` held separately.
    Outputs: ``[w_m1; a_m1; a_m2]`` without noise.
    """

    def __init__(self, model_a: StatModel, model_tau: StatModel, R: np.ndarray):
        self.model_a, self.model_tau = model_a, model_tau
        self.R = np.asarray(R, dtype=float)
        self.Na, self.Nt = model_a.order, model_tau.order
        self.Aa, self.Ca = _model_blocks(model_a)
        self.At, self.Ct = _model_blocks(model_tau)
        na, nt = 3 * self.Na, 3 * self.Nt
        idx = np.cumsum([0, na, nt, 3, 3, 3, 3, 3])
        names = ["gamma_a1", "gamma_tau1", "w1", "b_w1", "b_a1", "b_a2", "c"]
        self.sl = {k: slice(int(idx[i]), int(idx[i + 1])) for i, k in enumerate(names)}
        self.n = int(idx[-1])

    def f(self, x: np.ndarray, w: dict) -> np.ndarray:
        s = self.sl
        dx = np.zeros(self.n)
        dx[s["gamma_a1"]] = self.Aa @ x[s["gamma_a1"]] + w.get("gamma_a1", 0.0)
        dx[s["gamma_tau1"]] = self.At @ x[s["gamma_tau1"]] + w.get("gamma_tau1", 0.0)
        dx[s["w1"]] = self.Ct @ x[s["gamma_tau1"]]
        return dx

    def h(self, x: np.ndarray) -> np.ndarray:
        s = self.sl
        a1 = self.Ca @ x[s["gamma_a1"]]
        tau = self.Ct @ x[s["gamma_tau1"]]
        w1 = x[s["w1"]]
        w_m1 = w1 + x[s["b_w1"]]
        a_m1 = a1 + x[s["b_a1"]]
        a_m2 = inter_imu_accel2(self.R, a1, w1, tau, x[s["c"]], x[s["b_a2"]])
        return np.concatenate([w_m1, a_m1, a_m2])

    def accel_subsystem(self) -> LtiSystem:
        """The ``(gamma_a1, b_a1)`` subsystem with output ``a = C gamma + b``."""
        na = 3 * self.Na
        A = np.zeros((na + 3, na + 3))
        A[:na, :na] = self.Aa
        B = np.eye(na + 3)
        C = np.hstack([self.Ca, I3])
        return LtiSystem(A, B, C)

    def invariant_directions(self, tol: float = 1e-9) -> np.ndarray:
        """Basis of constant offsets ``xbar`` leaving dynamics and outputs unchanged.

        Solves ``A gamma = 0``, ``C gamma + b_a1 = 0`` and sets
        ``b_a2 = -R C gamma``. Columns are full-state vectors.
        """
        sub = self.accel_subsystem()
        N = _nullspace(np.vstack([sub.A, sub.C]), tol)
        na = 3 * self.Na
        cols = []
        for k in range(N.shape[1]):
            xb = np.zeros(self.n)
            xb[self.sl["gamma_a1"]] = N[:na, k]
            xb[self.sl["b_a1"]] = N[na:, k]
            xb[self.sl["b_a2"]] = -self.R @ (self.Ca @ N[:na, k])
            cols.append(xb)
        return np.stack(cols, axis=1) if cols else np.zeros((self.n, 0))

    def simulate_outputs(
        self, x0: np.ndarray, duration: float = 10.0, dt: float = 1e-3
    ) -> np.ndarray:
        """Noise-free RK4 output trajectory under a fixed deterministic excitation."""
        na, nt = 3 * self.Na, 3 * self.Nt
        fa = np.linspace(0.7, 1.9, na)
        ft = np.linspace(0.5, 2.3, nt)

        def w_at(t: float) -> dict:
            return {
                "gamma_a1": np.sin(2 * np.pi * fa * t + np.arange(na)),
                "gamma_tau1": np.cos(2 * np.pi * ft * t + 0.5 * np.arange(nt)),
            }

        n_steps = int(round(duration / dt))
        x = x0.astype(float).copy()
        ys = np.empty((n_steps + 1, 9))
        ys[0] = self.h(x)
        for k in range(n_steps):
            t = k * dt
            wa, wm, wb = w_at(t), w_at(t + 0.5 * dt), w_at(t + dt)
            k1 = self.f(x, wa)
            k2 = self.f(x + 0.5 * dt * k1, wm)
            k3 = self.f(x + 0.5 * dt * k2, wm)
            k4 = self.f(x + dt * k3, wb)
            x = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            ys[k + 1] = self.h(x)
        return ys


def _nullspace(M: np.ndarray, tol: float) -> np.ndarray:
    _, s, Vt = np.linalg.svd(M)
    r = int(np.sum(s > tol * s[0])) if s.size and s[0] > 0 else 0
    return Vt[r:].T


def check_minimal_invariance(
    model: NonMinimalInterImu,
    x0: Optional[np.ndarray] = None,
    duration: float = 10.0,
    dt: float = 1e-3,
    seed: int = 0,
) -> InvarianceReport:
    """Search for a nonzero invariant offset and compare output trajectories."""
    rng = np.random.default_rng(seed)
    basis = model.invariant_directions()
    if basis.shape[1] == 0:
        return InvarianceReport(True, 0, 0.0, 0.0, "model already minimal")
    xbar = basis @ rng.standard_normal(basis.shape[1])
    if x0 is None:
        x0 = 0.1 * rng.standard_normal(model.n)
    y0 = model.simulate_outputs(x0, duration, dt)
    y1 = model.simulate_outputs(x0 + xbar, duration, dt)
    diff = float(np.max(np.abs(y1 - y0)))
    return InvarianceReport(
        False, basis.shape[1], float(np.linalg.norm(xbar)), diff,
        "outputs are invariant to the offset", xbar,
    )


def reduced_accel_subsystem(model: NonMinimalInterImu) -> tuple[LtiSystem, int]:
    """Observable part of the acceleration subsystem and the number of dropped states."""
    sub = model.accel_subsystem()
    red, _ = kalman_observable_reduction(sub)
    return red, sub.n - red.n


def reduced_invariant_directions(model: NonMinimalInterImu, tol: float = 1e-9) -> np.ndarray:
    """Invariant offsets of the reduced model: ``A_r g = 0``, ``C_r g = 0``.

    The relative bias then must vanish too, so any solution is the zero vector.
    """
    red, _ = reduced_accel_subsystem(model)
    return _nullspace(np.vstack([red.A, red.C]), tol)


def state_model_from_orders(Na: int, qa, Nw: int, qw, **kw) -> PosImuStateModel:
    return PosImuStateModel(make_integrator_model(Na, qa), make_integrator_model(Nw, qw), **kw)


def random_state(layout: StateLayout, rng: np.random.Generator, scale: float = 1.0) -> NominalState:
    """Random nominal state: Gaussian Euclidean blocks, random rotations."""
    x = layout.zero()
    x.data[layout.eu_amb] = scale * rng.standard_normal(layout.eu_amb.size)
    for a, _ in layout.rot:
        x.data[a : a + 9] = exp_so3(rng.uniform(-1, 1, 3) * 2.0).ravel()
    return x
