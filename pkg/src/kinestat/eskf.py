"""Error-state extended Kalman filter over Euclidean x SO(3) product states.

A filter is configured with a :class:`SystemModelPlugin` describing the
nominal dynamics, error-state Jacobians, noise intensities and one or more
measurement channels. Rotation blocks use the right-multiplicative error
``R = R_hat Exp(dtheta)``; Euclidean blocks use additive errors.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .manifold import chart_gradient, exp_so3, log_so3

EUCLIDEAN = "euclidean"
ROTATION = "rotation"


class EskfError(RuntimeError):
    """Numerical failure inside the filter (non-finite state, singular S)."""


@dataclass(frozen=True)
class Block:
    name: str
    kind: str
    dim: int


class StateLayout:
    """Ordered blocks of a product-manifold state.

    Parameters
    ----------
    blocks : sequence of (name, spec)
        ``spec`` is an int for a Euclidean block of that size or the string
        ``"rotation"`` for an SO(3) block.
    """

    def __init__(self, blocks: Sequence[tuple[str, object]]):
        out: list[Block] = []
        names = set()
        for name, spec in blocks:
            if name in names:
                raise ValueError(f"duplicate block name {name!r}")
            names.add(name)
            if spec == ROTATION:
                out.append(Block(name, ROTATION, 3))
            else:
                d = int(spec)
                if d <= 0:
                    raise ValueError(f"block {name!r} needs a positive dimension")
                out.append(Block(name, EUCLIDEAN, d))
        self.blocks: tuple[Block, ...] = tuple(out)
        self.err: dict[str, slice] = {}
        self.amb: dict[str, slice] = {}
        e = a = 0
        eu_err, eu_amb, rot = [], [], []
        for b in self.blocks:
            self.err[b.name] = slice(e, e + b.dim)
            width = 9 if b.kind == ROTATION else b.dim
            self.amb[b.name] = slice(a, a + width)
            if b.kind == ROTATION:
                rot.append((a, e))
            else:
                eu_err.extend(range(e, e + b.dim))
                eu_amb.extend(range(a, a + b.dim))
            e += b.dim
            a += width
        self.n_err = e
        self.n_amb = a
        self.eu_err = np.array(eu_err, dtype=int)
        self.eu_amb = np.array(eu_amb, dtype=int)
        self.rot = tuple(rot)
        self.kinds = {b.name: b.kind for b in self.blocks}

    def __iter__(self):
        return iter(self.blocks)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, StateLayout) and self.blocks == other.blocks

    def __hash__(self) -> int:
        return hash(self.blocks)

    def names(self) -> list[str]:
        return [b.name for b in self.blocks]

    def flat_labels(self) -> list[str]:
        """Column labels of :meth:`NominalState.to_flat`."""
        labels = []
        for b in self.blocks:
            if b.kind == ROTATION or b.dim == 3:
                labels += [f"{b.name}_{ax}" for ax in "xyz"]
            else:
                labels += [f"{b.name}_{i}" for i in range(b.dim)]
        return labels

    def zero(self) -> "NominalState":
        data = np.zeros(self.n_amb)
        for a, _ in self.rot:
            data[a : a + 9] = np.eye(3).ravel()
        return NominalState(self, data)


class NominalState:
    """Point on the product manifold described by a :class:`StateLayout`.

    Euclidean blocks are returned as writable views; rotation blocks as
    ``(3, 3)`` views.
    """

    __slots__ = ("layout", "data")

    def __init__(self, layout: StateLayout, data: np.ndarray):
        self.layout = layout
        self.data = data

    @classmethod
    def from_blocks(cls, layout: StateLayout, **values) -> "NominalState":
        x = layout.zero()
        for k, v in values.items():
            x[k] = v
        return x

    @property
    def dim(self) -> int:
        return self.layout.n_err

    def __getitem__(self, name: str) -> np.ndarray:
        s = self.layout.amb[name]
        if self.layout.kinds[name] == ROTATION:
            return self.data[s].reshape(3, 3)
        return self.data[s]

    def __setitem__(self, name: str, value) -> None:
        self.data[self.layout.amb[name]] = np.asarray(value, dtype=float).ravel()

    def copy(self) -> "NominalState":
        return NominalState(self.layout, self.data.copy())

    def retract(self, delta: np.ndarray) -> "NominalState":
        """``x [+] delta``: additive on Euclidean blocks, ``R Exp(d)`` on rotations."""
        out = self.data.copy()
        lay = self.layout
        out[lay.eu_amb] += delta[lay.eu_err]
        for a, e in lay.rot:
            R = out[a : a + 9].reshape(3, 3)
            out[a : a + 9] = (R @ exp_so3(delta[e : e + 3])).ravel()
        return NominalState(lay, out)

    def boxminus(self, other: "NominalState") -> np.ndarray:
        """``self [-] other``, the tangent vector ``d`` with ``other [+] d == self``."""
        lay = self.layout
        d = np.empty(lay.n_err)
        d[lay.eu_err] = self.data[lay.eu_amb] - other.data[lay.eu_amb]
        for a, e in lay.rot:
            R1 = self.data[a : a + 9].reshape(3, 3)
            R0 = other.data[a : a + 9].reshape(3, 3)
            d[e : e + 3] = log_so3(R0.T @ R1)
        return d

    def to_flat(self) -> np.ndarray:
        """Euclidean values plus rotation vectors, in layout order."""
        parts = []
        for b in self.layout.blocks:
            v = self[b.name]
            parts.append(log_so3(v) if b.kind == ROTATION else v)
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, layout: StateLayout, flat: np.ndarray) -> "NominalState":
        x = layout.zero()
        i = 0
        for b in layout.blocks:
            v = flat[i : i + b.dim]
            x[b.name] = exp_so3(v) if b.kind == ROTATION else v
            i += b.dim
        return x

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))


class SystemModelPlugin:
    """Interface implemented by concrete system models.

    ``f`` returns the tangent-space velocity of the nominal state: the time
    derivative for Euclidean blocks and the body angular velocity for
    rotation blocks. ``Q_c`` is the continuous white-noise PSD of the
    process noise ``w``; :meth:`Q` converts it to the covariance of the
    noise sample held over one step.
    """

    layout: StateLayout
    Q_c: np.ndarray
    channels: tuple[str, ...] = ()
    # Named stacks of channels updated jointly, e.g. {"imu": ("acc", "gyro")}.
    composite: dict = {}

    def f(self, x: NominalState, u=None) -> np.ndarray:
        raise NotImplementedError

    def F_x(self, x: NominalState, u=None) -> np.ndarray:
        raise NotImplementedError

    def F_w(self, x: NominalState, u=None) -> np.ndarray:
        raise NotImplementedError

    def Q(self, dt: float) -> np.ndarray:
        return self.Q_c / dt

    def h(self, x: NominalState, channel: str) -> np.ndarray:
        raise NotImplementedError

    def H(self, x: NominalState, channel: str) -> np.ndarray:
        raise NotImplementedError

    def R_meas(self, channel: str) -> np.ndarray:
        raise NotImplementedError

    def residual(self, z: np.ndarray, zhat: np.ndarray, channel: str) -> np.ndarray:
        return z - zhat


def _symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def integrate_nominal(
    x: NominalState, plugin: SystemModelPlugin, dt: float, u=None, method: str = "rk4"
) -> NominalState:
    """Advance the nominal state by ``dt`` along the plugin vector field.

    ``rk4`` evaluates the classic four stages through the retraction, which
    reduces to ``R Exp(w dt)`` on rotation blocks when ``w`` is constant over
    the step. ``euler`` takes a single retraction step.
    """
    f = plugin.f
    k1 = f(x, u)
    if method == "euler":
        return x.retract(dt * k1)
    if method != "rk4":
        raise ValueError(f"unknown integration method {method!r}")
    k2 = f(x.retract(0.5 * dt * k1), u)
    k3 = f(x.retract(0.5 * dt * k2), u)
    k4 = f(x.retract(dt * k3), u)
    return x.retract((dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))


def propagate(
    x: NominalState,
    P: np.ndarray,
    plugin: SystemModelPlugin,
    dt: float,
    u=None,
    method: str = "rk4",
) -> tuple[NominalState, np.ndarray]:
    """Prediction step.

    The nominal state is integrated with :func:`integrate_nominal` and the
    covariance with ``Phi_x = I + F_x dt`` and ``Phi_w = F_w dt``.
    """
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    Fx = plugin.F_x(x, u)
    Fw = plugin.F_w(x, u)
    x_new = integrate_nominal(x, plugin, dt, u, method)
    if not x_new.is_finite():
        raise EskfError("non-finite nominal state after propagation")
    Phi = Fx * dt
    Phi[np.diag_indices_from(Phi)] += 1.0
    G = Fw * dt
    P_new = Phi @ P @ Phi.T + G @ plugin.Q(dt) @ G.T
    return x_new, _symmetrize(P_new)


def update(
    x: NominalState,
    P: np.ndarray,
    plugin: SystemModelPlugin,
    z_m: np.ndarray,
    channel: str,
    joseph: bool = False,
) -> tuple[NominalState, np.ndarray]:
    """Measurement update with error injection.

    The error estimate ``K r`` is injected into the nominal state and then
    implicitly reset to zero; the covariance update is ``P - K S K^T`` or
    the Joseph form when ``joseph`` is set.
    """
    parts = plugin.composite.get(channel)
    if parts is None:
        zhat = plugin.h(x, channel)
        H = plugin.H(x, channel)
        R = plugin.R_meas(channel)
        r = plugin.residual(np.asarray(z_m, dtype=float), zhat, channel)
    else:
        z_m = np.asarray(z_m, dtype=float)
        rs, Hs, Rs = [], [], []
        i = 0
        for ch in parts:
            zh = plugin.h(x, ch)
            rs.append(plugin.residual(z_m[i : i + zh.size], zh, ch))
            Hs.append(plugin.H(x, ch))
            Rs.append(plugin.R_meas(ch))
            i += zh.size
        r = np.concatenate(rs)
        H = np.vstack(Hs)
        R = sla.block_diag(*Rs)
    PHt = P @ H.T
    S = H @ PHt + R
    try:
        cf = sla.cho_factor(S)
    except np.linalg.LinAlgError as exc:
        raise EskfError(f"innovation covariance is not positive definite ({channel})") from exc
    K = sla.cho_solve(cf, PHt.T).T
    dx = K @ r
    if not np.all(np.isfinite(dx)):
        raise EskfError(f"non-finite correction from channel {channel}")
    x_new = x.retract(dx)
    if not x_new.is_finite():
        raise EskfError("non-finite nominal state after update")
    if joseph:
        IKH = -K @ H
        IKH[np.diag_indices_from(IKH)] += 1.0
        P_new = IKH @ P @ IKH.T + K @ R @ K.T
    else:
        P_new = P - K @ S @ K.T
    return x_new, _symmetrize(P_new)


@dataclass
class StepTimer:
    """Accumulated wall-clock time of predict and update calls."""

    predict_s: float = 0.0
    predict_n: int = 0
    update_s: float = 0.0
    update_n: int = 0

    @property
    def mean_predict_ms(self) -> float:
        return 1e3 * self.predict_s / max(self.predict_n, 1)

    @property
    def mean_update_ms(self) -> float:
        return 1e3 * self.update_s / max(self.update_n, 1)


@dataclass
class ErrorStateEKF:
    """Stateful convenience wrapper around :func:`propagate` and :func:`update`."""

    plugin: SystemModelPlugin
    x: NominalState
    P: np.ndarray
    joseph: bool = False
    method: str = "rk4"
    timer: StepTimer = field(default_factory=StepTimer)

    def predict(self, dt: float, u=None) -> None:
        t0 = time.perf_counter()
        self.x, self.P = propagate(self.x, self.P, self.plugin, dt, u, self.method)
        self.timer.predict_s += time.perf_counter() - t0
        self.timer.predict_n += 1

    def correct(self, channel: str, z_m: np.ndarray) -> None:
        t0 = time.perf_counter()
        self.x, self.P = update(self.x, self.P, self.plugin, z_m, channel, self.joseph)
        self.timer.update_s += time.perf_counter() - t0
        self.timer.update_n += 1

    def sigma(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.P), 0.0, None))


@dataclass
class JacobianReport:
    """Maximum per-entry relative error of analytic vs numerical Jacobians."""

    errors: dict[str, float]
    tol: float

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.errors.values())

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    def failures(self) -> list[str]:
        return [k for k, e in self.errors.items() if e > self.tol]


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric)), initial=0.0))


def numerical_F_x(
    plugin: SystemModelPlugin, x: NominalState, u=None, h: float = 1e-5
) -> np.ndarray:
    """Finite-difference error-state Jacobian of the dynamics at ``x``.

    For rotation blocks the error rate is ``w(x) - R^T R_hat w(x_hat)`` to
    first order, where ``R = R_hat Exp(dtheta)``.
    """
    f0 = plugin.f(x, u)
    lay = x.layout

    def g(xp: NominalState) -> np.ndarray:
        out = plugin.f(xp, u).copy()
        for a, e in lay.rot:
            Rh = x.data[a : a + 9].reshape(3, 3)
            Rp = xp.data[a : a + 9].reshape(3, 3)
            out[e : e + 3] -= Rp.T @ Rh @ f0[e : e + 3]
        return out

    return chart_gradient(g, x, h)


def numerical_H(
    plugin: SystemModelPlugin, x: NominalState, channel: str, h: float = 1e-5
) -> np.ndarray:
    return chart_gradient(lambda xp: plugin.h(xp, channel), x, h)


def validate_jacobians(
    plugin: SystemModelPlugin,
    x: NominalState,
    tol: float = 1e-4,
    u=None,
    h: float = 1e-5,
    channels: Optional[Iterable[str]] = None,
) -> JacobianReport:
    """Compare analytic ``F_x`` and ``H`` against chart finite differences.

    The error measure is ``|A - N| / max(1, |N|)`` per entry.
    """
    errors = {"F_x": _rel_err(plugin.F_x(x, u), numerical_F_x(plugin, x, u, h))}
    for ch in channels if channels is not None else plugin.channels:
        errors[f"H[{ch}]"] = _rel_err(plugin.H(x, ch), numerical_H(plugin, x, ch, h))
    return JacobianReport(errors, tol)
