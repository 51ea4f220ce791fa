"""Numerical observability analysis on product manifolds.

The Lie derivative of ``g`` along a tangent field ``f`` is the derivative of
``g`` along the integral curves of ``f``. Rotation blocks carry body-frame
tangent vectors, so ``R' = R [w]`` has chart velocity ``w``. Since a curve on
the manifold is the same curve in the ambient coordinates (rotations stored
as nine entries), derivatives are taken in those coordinates: single fields
by forward-mode AD, repeated drift derivatives by Taylor-mode propagation of
the integral curve. Gradients are Jacobians in the chart
``d -> xbar [+] d``.

All field and output functions take the ambient state vector (the layout of
:class:`~kinestat.eskf.NominalState`) and must be written with ``jax.numpy``.
A nested finite-difference evaluator working through the retraction is kept
as an independent cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import jax
import jax.numpy as jnp
from jax.experimental.jet import jet
import numpy as np

from . import lti
from .eskf import ROTATION, NominalState, StateLayout
from .manifold import exp_so3, log_so3, random_rotation, skew
from .motion_model import StatModel, make_integrator_model

jax.config.update("jax_enable_x64", True)

GRAVITY = (0.0, 0.0, -9.81)
E1 = (1.0, 0.0, 0.0)
RANK_TOL = 1e-9
FD_MAX_DEPTH = 4

Field = Callable[[jnp.ndarray], jnp.ndarray]


class ObservabilityError(ValueError):
    """Invalid system description, chain, or non-finite derivative."""


# ---------------------------------------------------------------------------
# Differentiable SO(3) and retraction


_SERIES_TERMS = 12
_A_COEF = tuple((-1) ** n / math.factorial(2 * n + 1) for n in range(_SERIES_TERMS))
_B_COEF = tuple((-1) ** n / math.factorial(2 * n + 2) for n in range(_SERIES_TERMS))


def _poly(coef: Sequence[float], x):
    acc = coef[-1]
    for c in coef[-2::-1]:
        acc = acc * x + c
    return acc


def jskew(v):
    """``jax`` version of :func:`kinestat.manifold.skew`."""
    z = jnp.zeros((), dtype=v.dtype)
    return jnp.array([[z, -v[2], v[1]], [v[2], z, -v[0]], [-v[1], v[0], z]])


def jexp(v):
    """Rotation-vector exponential that is smooth to all orders at zero.

    Small angles use a power series in ``|v|^2``; the closed form is only
    evaluated on a guarded argument so derivatives stay finite.
    """
    t2 = v @ v
    small = t2 < 0.25
    t2s = jnp.where(small, 1.0, t2)
    t = jnp.sqrt(t2s)
    a = jnp.where(small, _poly(_A_COEF, t2), jnp.sin(t) / t)
    b = jnp.where(small, _poly(_B_COEF, t2), (1.0 - jnp.cos(t)) / t2s)
    K = jskew(v)
    return jnp.eye(3) + a * K + b * (K @ K)


def retract(layout: StateLayout, x, d):
    """``x [+] d`` on ambient vectors, differentiable in both arguments."""
    parts = []
    for b in layout.blocks:
        a, e = layout.amb[b.name], layout.err[b.name]
        if b.kind == ROTATION:
            parts.append((x[a].reshape(3, 3) @ jexp(d[e])).reshape(9))
        else:
            parts.append(x[a] + d[e])
    return jnp.concatenate(parts)


def blocks(layout: StateLayout, x) -> dict:
    """Named views of an ambient vector; rotations come back as ``(3, 3)``."""
    out = {}
    for b in layout.blocks:
        v = x[layout.amb[b.name]]
        out[b.name] = v.reshape(3, 3) if b.kind == ROTATION else v
    return out


def pack(layout: StateLayout, parts: dict):
    """Tangent vector from named pieces; absent blocks are zero."""
    dtype = next(iter(parts.values())).dtype if parts else jnp.float64
    out = []
    for b in layout.blocks:
        v = parts.get(b.name)
        out.append(jnp.zeros(b.dim, dtype=dtype) if v is None else jnp.reshape(v, (b.dim,)))
    return jnp.concatenate(out)


def _boxminus_np(layout: StateLayout, x: np.ndarray, anchor: np.ndarray) -> np.ndarray:
    d = np.zeros(layout.n_err)
    for b in layout.blocks:
        a, e = layout.amb[b.name], layout.err[b.name]
        if b.kind == ROTATION:
            d[e] = log_so3(anchor[a].reshape(3, 3).T @ x[a].reshape(3, 3))
        else:
            d[e] = x[a] - anchor[a]
    return d


def _as_ambient(layout: StateLayout, x) -> np.ndarray:
    if isinstance(x, NominalState):
        if x.layout != layout:
            raise ObservabilityError("point layout does not match the system layout")
        return np.asarray(x.data, dtype=float)
    arr = np.asarray(x, dtype=float).ravel()
    if arr.size != layout.n_amb:
        raise ObservabilityError(f"point has {arr.size} entries, layout needs {layout.n_amb}")
    return arr


# ---------------------------------------------------------------------------
# System description and chains


@dataclass
class SystemDescription:
    """Input-affine system ``x' = f0(x) + sum_i f_i(x) u_i``, ``y_j = h_j(x)``.

    Parameters
    ----------
    layout : StateLayout
        Product manifold of the state.
    drift : callable
        ``f0``: ambient vector to tangent vector (length ``layout.n_err``).
    controls : sequence of callable
        ``f_1 ... f_m`` with the same signature as ``drift``.
    outputs : sequence of callable
        ``h_j``: ambient vector to a 1-D output.
    name : str
        Label used in reports.
    """

    layout: StateLayout
    drift: Field
    controls: tuple = ()
    outputs: tuple = ()
    name: str = "system"
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.controls = tuple(self.controls)
        self.outputs = tuple(self.outputs)
        if not self.outputs:
            raise ObservabilityError("a system needs at least one output")
        x0 = jnp.asarray(self.layout.zero().data)
        for i, fi in enumerate(self.fields):
            shape = jnp.shape(fi(x0))
            if shape != (self.layout.n_err,):
                raise ObservabilityError(
                    f"field {i} returns shape {shape}, tangent dimension is {self.layout.n_err}"
                )
        self.output_dims = []
        for j, h in enumerate(self.outputs):
            shape = jnp.shape(h(x0))
            if len(shape) != 1:
                raise ObservabilityError(f"output {j} must be 1-D, got shape {shape}")
            self.output_dims.append(int(shape[0]))

    @property
    def fields(self) -> tuple:
        return (self.drift,) + self.controls

    @property
    def dim(self) -> int:
        return self.layout.n_err


@dataclass(frozen=True)
class LieChain:
    """``L_{f_{i_k}} ... L_{f_{i_1}} h_j``.

    ``fields`` lists field indices outermost first, so ``LieChain(0, (4, 0))``
    differentiates ``h_0`` along ``f_0`` and the result along ``f_4``.
    Index 0 is the drift.
    """

    output: int
    fields: tuple = ()

    @property
    def order(self) -> int:
        return len(self.fields)

    def check(self, sys: SystemDescription) -> None:
        if not 0 <= self.output < len(sys.outputs):
            raise ObservabilityError(f"output index {self.output} out of range")
        for i in self.fields:
            if not 0 <= i < len(sys.fields):
                raise ObservabilityError(f"field index {i} out of range")

    def label(self, field_names: Optional[Sequence[str]] = None) -> str:
        names = field_names or [f"f{i}" for i in range(100)]
        if not self.fields:
            return f"h{self.output + 1}"
        return "L(" + " ".join(names[i] for i in self.fields) + f") h{self.output + 1}"


def drift_chains(output: int, orders: Sequence[int]) -> list[LieChain]:
    """``L^k_{f0...f0} h_output`` for each ``k`` in ``orders``."""
    return [LieChain(output, (0,) * int(k)) for k in orders]


def ambient_field(layout: StateLayout, f: Field) -> Field:
    """Ambient velocity of a tangent field: rotation blocks map ``w`` to ``R [w]``."""

    def fa(x):
        v = f(x)
        parts = []
        for b in layout.blocks:
            a, e = layout.amb[b.name], layout.err[b.name]
            if b.kind == ROTATION:
                parts.append((x[a].reshape(3, 3) @ jskew(v[e])).reshape(9))
            else:
                parts.append(v[e])
        return jnp.concatenate(parts)

    return fa


def _lie(sys: SystemDescription, g: Callable, fi: Field) -> Callable:
    # The derivative along a tangent field only sees g on the manifold, so
    # differentiating the ambient extension is exact.
    fa = ambient_field(sys.layout, fi)

    def lg(x):
        return jax.jvp(g, (x,), (fa(x),))[1]

    return lg


def _chain_function(sys: SystemDescription, chain: LieChain) -> Callable:
    g = sys.outputs[chain.output]
    for i in reversed(chain.fields):
        g = _lie(sys, g, sys.fields[i])
    return g


def _drift_tower(sys: SystemDescription, outs: Sequence[int], kmax: int) -> Callable:
    """Drift derivatives ``0..kmax`` of the stacked outputs by Taylor mode.

    ``L^k_{f0} h (x)`` is the ``k``-th time derivative of ``h`` along the
    integral curve through ``x``; its derivatives are propagated with
    ``jet`` through the ambient vector field.
    """
    fa = ambient_field(sys.layout, sys.drift)

    def h(x):
        return jnp.concatenate([sys.outputs[j](x) for j in outs])

    def tower(x):
        if kmax == 0:
            return (h(x),)
        xs = [fa(x)]
        for _ in range(1, kmax):
            _, ys = jet(fa, (x,), (tuple(xs),))
            xs.append(ys[-1])
        h0, hs = jet(h, (x,), (tuple(xs),))
        return (h0,) + tuple(hs)

    return tower


def _stacked_function(sys: SystemDescription, chains: Sequence[LieChain]) -> Callable:
    drift_only = [c for c in chains if all(i == 0 for i in c.fields)]
    outs = sorted({c.output for c in drift_only})
    kmax = max((c.order for c in drift_only), default=-1)
    offsets, o = {}, 0
    for j in outs:
        offsets[j] = o
        o += sys.output_dims[j]
    tower = _drift_tower(sys, outs, kmax) if drift_only else None
    mixed = {c: _chain_function(sys, c) for c in chains if c not in drift_only}

    def fn(x):
        levels = tower(x) if tower is not None else ()
        rows = []
        for c in chains:
            if c in mixed:
                rows.append(mixed[c](x))
            else:
                s = offsets[c.output]
                rows.append(levels[c.order][s : s + sys.output_dims[c.output]])
        return jnp.concatenate(rows)

    return fn


def _compiled(sys: SystemDescription, chains: tuple, kind: str) -> Callable:
    key = (kind, chains)
    if key not in sys._cache:
        fn = _stacked_function(sys, chains)
        L = sys.layout
        if kind == "values":
            sys._cache[key] = jax.jit(fn)
        else:
            def mat(anchor, xi):
                return jax.jacfwd(lambda d: fn(retract(L, anchor, d)))(xi)

            sys._cache[key] = jax.jit(mat)
    return sys._cache[key]


def _finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise ObservabilityError(f"non-finite values in {what}")
    return arr


def lie_derivative(
    sys: SystemDescription, chain: LieChain, x, method: str = "ad"
) -> np.ndarray:
    """Evaluate one Lie-derivative chain at ``x``.

    Parameters
    ----------
    sys : SystemDescription
    chain : LieChain
    x : NominalState or ndarray
        Point given by its ambient vector.
    method : {"ad", "fd"}
        Automatic differentiation (exact to rounding) or nested central
        differences with per-level steps ``1e-4 * 10**(level / 2)``, which
        is limited to :data:`FD_MAX_DEPTH` levels.
    """
    chain.check(sys)
    xa = _as_ambient(sys.layout, x)
    if method == "ad":
        val = np.asarray(_compiled(sys, (chain,), "values")(jnp.asarray(xa)))
    elif method == "fd":
        val = _lie_fd(sys, chain, xa)
    else:
        raise ObservabilityError(f"unknown method {method!r}")
    return _finite(val, chain.label())


def _lie_fd(sys: SystemDescription, chain: LieChain, x: np.ndarray) -> np.ndarray:
    depth = chain.order
    if depth > FD_MAX_DEPTH:
        raise ObservabilityError(
            f"finite differences are limited to depth {FD_MAX_DEPTH}, chain has {depth}"
        )
    L = sys.layout

    def ev(fn, y):
        return np.asarray(fn(jnp.asarray(y)), dtype=float)

    g = lambda y: ev(sys.outputs[chain.output], y)  # noqa: E731
    for level, i in enumerate(reversed(chain.fields), start=1):
        h = 1e-4 * 10 ** (level / 2)
        if not h > 0.0 or not np.isfinite(h):
            raise ObservabilityError("finite-difference step underflow")

        def lg(y, g=g, fi=sys.fields[i], h=h):
            fy = ev(fi, y)
            yp = np.asarray(retract(L, jnp.asarray(y), jnp.asarray(h * fy)))
            ym = np.asarray(retract(L, jnp.asarray(y), jnp.asarray(-h * fy)))
            return (g(yp) - g(ym)) / (2.0 * h)

        g = lg
    return g(x)


def observability_matrix_nl(
    sys: SystemDescription,
    xbar,
    chains: Sequence[LieChain],
    anchor=None,
) -> np.ndarray:
    """Stacked chart gradients of the chains at ``xbar``.

    Parameters
    ----------
    sys : SystemDescription
    xbar : NominalState or ndarray
        Evaluation point.
    chains : sequence of LieChain
        Row blocks, in order.
    anchor : NominalState or ndarray, optional
        Centre of the chart. By default the chart is centred at ``xbar``;
        otherwise gradients are taken at the chart coordinates of ``xbar``
        relative to ``anchor``.

    Returns
    -------
    ndarray, shape (sum of output dims, sys.dim)
    """
    chains = tuple(chains)
    for c in chains:
        c.check(sys)
    xa = _as_ambient(sys.layout, xbar)
    if anchor is None:
        an, xi = xa, np.zeros(sys.dim)
    else:
        an = _as_ambient(sys.layout, anchor)
        xi = _boxminus_np(sys.layout, xa, an)
    M = np.asarray(_compiled(sys, chains, "matrix")(jnp.asarray(an), jnp.asarray(xi)))
    return _finite(M, "observability matrix")


def row_slices(sys: SystemDescription, chains: Sequence[LieChain]) -> list[slice]:
    """Row range of each chain in :func:`observability_matrix_nl`."""
    out, r = [], 0
    for c in chains:
        m = sys.output_dims[c.output]
        out.append(slice(r, r + m))
        r += m
    return out


@dataclass(frozen=True)
class RankResult:
    """Numerical rank with the supporting singular values."""

    rank: int
    singular_values: np.ndarray
    null_direction: np.ndarray
    tol: float

    @property
    def cols(self) -> int:
        return self.null_direction.size

    @property
    def deficit(self) -> int:
        return self.cols - self.rank

    @property
    def full(self) -> bool:
        return self.rank == self.cols

    def tail(self, k: int = 3) -> np.ndarray:
        """Smallest ``k`` singular values relative to the largest."""
        s = self.singular_values
        if s.size == 0 or s[0] == 0.0:
            return np.zeros(min(k, s.size))
        return s[-k:] / s[0]


def rank_probe(M: np.ndarray, tol: float = RANK_TOL, equilibrate: bool = False) -> RankResult:
    """SVD rank with relative tolerance ``tol * sigma_max``.

    Singular values are padded with zeros up to the column count, so a
    wide matrix reports its structural deficit. ``null_direction`` is the
    right singular vector belonging to the smallest singular value.
    ``equilibrate`` scales nonzero columns to unit norm first, which leaves
    the exact rank unchanged but helps when column scales span many decades.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if equilibrate:
        norms = np.linalg.norm(M, axis=0)
        M = M / np.where(norms > 0.0, norms, 1.0)
    _, s, Vt = np.linalg.svd(M)
    n = M.shape[1]
    s = np.concatenate([s, np.zeros(n - s.size)]) if s.size < n else s
    r = 0 if s.size == 0 or s[0] == 0.0 else int(np.sum(s > tol * s[0]))
    return RankResult(r, s, Vt[-1].copy(), tol)


# ---------------------------------------------------------------------------
# Concrete systems


def lti_description(sys: lti.LtiSystem) -> SystemDescription:
    """``x' = A x``, ``y = C x`` on a single Euclidean block."""
    A, C = jnp.asarray(sys.A), jnp.asarray(sys.C)
    layout = StateLayout([("x", sys.n)])
    return SystemDescription(layout, lambda x: A @ x, (), (lambda x: C @ x,), "lti")


def lti_chains(n: int) -> list[LieChain]:
    return drift_chains(0, range(n))


def input_system(gravity=GRAVITY, e_ref=E1) -> SystemDescription:
    """Input-formulation kinematics ``(p, v, R, c, b_a, b_w)``.

    Fields: ``f0`` is the drift at zero IMU input, ``f1..f3`` the rotation
    directions driven by the gyro and ``f4..f6`` the velocity directions
    ``R e_i`` driven by the accelerometer. Outputs ``h1 = p + R c`` and
    ``h2 = R^T e_ref``.
    """
    layout = StateLayout(
        [("p", 3), ("v", 3), ("R", ROTATION), ("c", 3), ("b_a", 3), ("b_w", 3)]
    )
    g = jnp.asarray(gravity, dtype=float)
    e = jnp.asarray(e_ref, dtype=float)
    eye = np.eye(3)

    def f0(x):
        s = blocks(layout, x)
        return pack(layout, {"p": s["v"], "v": g - s["R"] @ s["b_a"], "R": -s["b_w"]})

    def rot_field(i):
        return lambda x: pack(layout, {"R": jnp.asarray(eye[i]) + 0.0 * x[0]})

    def vel_field(i):
        return lambda x: pack(layout, {"v": blocks(layout, x)["R"][:, i]})

    def h1(x):
        s = blocks(layout, x)
        return s["p"] + s["R"] @ s["c"]

    def h2(x):
        return blocks(layout, x)["R"].T @ e

    controls = [rot_field(i) for i in range(3)] + [vel_field(i) for i in range(3)]
    return SystemDescription(layout, f0, controls, (h1, h2), "input")


def input_chains() -> list[LieChain]:
    """The ten chains whose gradients give an 18x18 full-rank matrix."""
    return [
        LieChain(0, ()),
        LieChain(0, (0,)),
        LieChain(0, (1,)),
        LieChain(0, (2,)),
        LieChain(0, (0, 0)),
        LieChain(0, (4, 0)),
        LieChain(0, (5, 0)),
        LieChain(1, (0,)),
        LieChain(1, (1, 0)),
        LieChain(1, (2, 0)),
    ]


def _kron3(m: StatModel):
    return jnp.asarray(np.kron(m.A, np.eye(3))), jnp.asarray(np.kron(m.C, np.eye(3)))


def state_system(
    model_a: StatModel, model_w: StatModel, gravity=GRAVITY, e_ref=E1
) -> SystemDescription:
    """State-formulation kinematics with integrator-driven ``a`` and ``w``.

    Outputs: ``h1 = p + R c``, ``h2 = R^T e_ref``, ``h3 = b_a + a``,
    ``h4 = b_w + w``.
    """
    Na, Nw = model_a.order, model_w.order
    layout = StateLayout(
        [
            ("p", 3), ("v", 3), ("R", ROTATION), ("c", 3), ("b_a", 3), ("b_w", 3),
            ("gamma_a", 3 * Na), ("gamma_w", 3 * Nw),
        ]
    )
    Aa, Ca = _kron3(model_a)
    Aw, Cw = _kron3(model_w)
    g = jnp.asarray(gravity, dtype=float)
    e = jnp.asarray(e_ref, dtype=float)

    def f0(x):
        s = blocks(layout, x)
        return pack(
            layout,
            {
                "p": s["v"],
                "v": s["R"] @ (Ca @ s["gamma_a"]) + g,
                "R": Cw @ s["gamma_w"],
                "gamma_a": Aa @ s["gamma_a"],
                "gamma_w": Aw @ s["gamma_w"],
            },
        )

    def h1(x):
        s = blocks(layout, x)
        return s["p"] + s["R"] @ s["c"]

    def h2(x):
        return blocks(layout, x)["R"].T @ e

    def h3(x):
        s = blocks(layout, x)
        return s["b_a"] + Ca @ s["gamma_a"]

    def h4(x):
        s = blocks(layout, x)
        return s["b_w"] + Cw @ s["gamma_w"]

    sys = SystemDescription(layout, f0, (), (h1, h2, h3, h4), "state")
    sys.orders = (Na, Nw)
    return sys


@dataclass(frozen=True)
class StateChainPlan:
    """Highest drift orders per output of the state formulation."""

    n1: int
    n2: int
    n3: int
    n4: int

    @classmethod
    def default(cls, Na: int, Nw: int) -> "StateChainPlan":
        return cls(Na + 2, Nw + 1, Na - 1, Nw - 1)

    def chains(self) -> list[LieChain]:
        return (
            drift_chains(0, range(self.n1 + 1))
            + drift_chains(1, range(self.n2 + 1))
            + drift_chains(2, range(self.n3 + 1))
            + drift_chains(3, range(self.n4 + 1))
        )


def inter_imu_system(model_tau: StatModel, model_a: StatModel) -> SystemDescription:
    """Minimal inter-IMU model ``(b_a, b_w, w, c, R, gamma_tau, gamma_a)``.

    Outputs: ``h1`` the second accelerometer, ``h2 = w + b_w`` the gyro and
    ``h3 = a`` the first accelerometer.
    """
    Nt, Na = model_tau.order, model_a.order
    layout = StateLayout(
        [
            ("b_a", 3), ("b_w", 3), ("w", 3), ("c", 3), ("R", ROTATION),
            ("gamma_tau", 3 * Nt), ("gamma_a", 3 * Na),
        ]
    )
    At, Ct = _kron3(model_tau)
    Aa, Ca = _kron3(model_a)

    def f0(x):
        s = blocks(layout, x)
        return pack(
            layout,
            {
                "w": Ct @ s["gamma_tau"],
                "gamma_tau": At @ s["gamma_tau"],
                "gamma_a": Aa @ s["gamma_a"],
            },
        )

    def h1(x):
        s = blocks(layout, x)
        W = jskew(s["w"])
        tau = Ct @ s["gamma_tau"]
        c = s["c"]
        return s["R"] @ (Ca @ s["gamma_a"] + W @ (W @ c) + jnp.cross(tau, c)) + s["b_a"]

    def h2(x):
        s = blocks(layout, x)
        return s["w"] + s["b_w"]

    def h3(x):
        return Ca @ blocks(layout, x)["gamma_a"]

    sys = SystemDescription(layout, f0, (), (h1, h2, h3), "inter-imu")
    sys.orders = (Nt, Na)
    return sys


def inter_imu_chains(Nt: int, Na: int, n1: Optional[int] = None) -> list[LieChain]:
    """``h1`` orders ``0..n1``, gyro orders ``0..Nt``, accelerometer ``0..Na-1``."""
    n1 = max(Nt, Na) + 1 if n1 is None else n1
    return drift_chains(0, range(n1 + 1)) + drift_chains(1, range(Nt + 1)) + drift_chains(
        2, range(Na)
    )


# ---------------------------------------------------------------------------
# Sampling


def random_point(
    layout: StateLayout,
    rng: np.random.Generator,
    gamma_first_order: Optional[dict] = None,
) -> NominalState:
    """Gaussian Euclidean blocks and Haar rotations.

    Blocks named in ``gamma_first_order`` are treated as stacked derivative
    states (three entries per order) and scaled by ``10**-order``, where the
    first stacked block has the given order.
    """
    gamma_first_order = gamma_first_order or {}
    x = layout.zero()
    for b in layout.blocks:
        a = layout.amb[b.name]
        if b.kind == ROTATION:
            x.data[a] = random_rotation(rng).ravel()
            continue
        v = rng.standard_normal(b.dim)
        if b.name in gamma_first_order:
            k0 = gamma_first_order[b.name]
            orders = k0 + np.arange(b.dim) // 3
            v = v * 10.0 ** (-orders.astype(float))
        x.data[a] = v
    return x


def _perturb(layout: StateLayout, x: NominalState, scale: float, rng) -> NominalState:
    return x.retract(scale * rng.standard_normal(layout.n_err))


# ---------------------------------------------------------------------------
# Reports


@dataclass(frozen=True)
class TrialRecord:
    """One rank evaluation inside a probe."""

    probe: str
    trial: int
    rank: int
    expected: int
    ok: bool
    sv_tail: tuple
    null_direction: tuple

    def as_row(self) -> dict:
        return {
            "probe": self.probe,
            "trial": self.trial,
            "rank": self.rank,
            "expected": self.expected,
            "ok": int(self.ok),
            "sv_tail": " ".join(repr(float(v)) for v in self.sv_tail),
            "null_direction": " ".join(repr(float(v)) for v in self.null_direction),
        }


@dataclass
class ProbeReport:
    """Per-trial records and a pass/fail summary per sub-probe."""

    name: str
    records: list = field(default_factory=list)
    required: dict = field(default_factory=dict)

    def add(self, probe: str, trial: int, res: RankResult, expected: int, ok: bool) -> None:
        self.records.append(
            TrialRecord(
                probe, trial, res.rank, expected, bool(ok),
                tuple(res.tail(3)), tuple(res.null_direction),
            )
        )

    def fraction(self, probe: str) -> float:
        rs = [r.ok for r in self.records if r.probe == probe]
        return float(np.mean(rs)) if rs else float("nan")

    def count(self, probe: str) -> tuple[int, int]:
        rs = [r.ok for r in self.records if r.probe == probe]
        return int(sum(rs)), len(rs)

    @property
    def passed(self) -> bool:
        return all(self.fraction(p) >= need for p, need in self.required.items())

    def summary(self) -> dict:
        out = {}
        for p, need in self.required.items():
            k, n = self.count(p)
            out[p] = {"ok": k, "trials": n, "required_fraction": need, "passed": k >= need * n}
        return out

    def lines(self) -> list[str]:
        out = []
        for p, s in self.summary().items():
            flag = "PASS" if s["passed"] else "FAIL"
            out.append(f"{self.name}.{p}: {s['ok']}/{s['trials']} (need {s['required_fraction']:.0%}) {flag}")
        return out


@dataclass(frozen=True)
class ProbeConfig:
    """Settings shared by the rank probes."""

    order_a: int = 4
    order_w: int = 4
    order_tau: int = 4
    seed: int = 0
    rank_tol: float = RANK_TOL
    perturbation: float = 1e-3
    c_inter: tuple = (0.1, 0.1, 0.1)
    gravity: tuple = GRAVITY
    e_ref: tuple = E1


def _unit_model(N: int) -> StatModel:
    return make_integrator_model(N, np.ones(N))


# ---------------------------------------------------------------------------
# Input formulation


def probe_input(cfg: ProbeConfig = ProbeConfig(), trials: int = 100) -> ProbeReport:
    """Rank of the ten-chain matrix at random states (full rank is 18)."""
    sys = input_system(cfg.gravity, cfg.e_ref)
    chains = input_chains()
    rng = np.random.default_rng(cfg.seed)
    rep = ProbeReport("input", required={"random": 1.0})
    for t in range(trials):
        x = random_point(sys.layout, rng)
        res = rank_probe(observability_matrix_nl(sys, x, chains), cfg.rank_tol)
        rep.add("random", t, res, sys.dim, res.full)
    return rep


# ---------------------------------------------------------------------------
# State formulation


def lemma2_reduced_matrix(
    sys: SystemDescription, O: np.ndarray, plan: StateChainPlan
) -> np.ndarray:
    """Block-triangular matrix on the ``(theta, c, a, w)`` columns.

    Rows: the heading output gradient in ``theta``; position-output orders
    ``2..n1`` in all four column groups; heading orders ``1..n2`` in the
    ``w`` columns only.
    """
    L = sys.layout
    chains = plan.chains()
    rows = row_slices(sys, chains)
    idx = {c: rows[i] for i, c in enumerate(chains)}
    th, c = L.err["R"], L.err["c"]
    a = slice(L.err["gamma_a"].start, L.err["gamma_a"].start + 3)
    w = slice(L.err["gamma_w"].start, L.err["gamma_w"].start + 3)
    cols = [th, c, a, w]
    out = []
    top = np.zeros((3, 12))
    top[:, 0:3] = O[idx[LieChain(1, ())], th]
    out.append(top)
    for k in range(2, plan.n1 + 1):
        r = idx[LieChain(0, (0,) * k)]
        out.append(np.hstack([O[r, s] for s in cols]))
    for k in range(1, plan.n2 + 1):
        r = idx[LieChain(1, (0,) * k)]
        blk = np.zeros((3, 12))
        blk[:, 9:12] = O[r, w]
        out.append(blk)
    return np.vstack(out)


def structural_zero_mask(sys: SystemDescription, plan: StateChainPlan) -> np.ndarray:
    """Entries of the state-formulation matrix that vanish identically.

    Column groups are ``p, v, theta, c, b_a, b_w, a, (higher gamma_a), w,
    (higher gamma_w)``. The first position-output derivative
    ``v + R [w] c`` depends on ``w`` but not on the higher rate derivatives.
    """
    L = sys.layout
    ga, gw = L.err["gamma_a"], L.err["gamma_w"]
    groups = [
        L.err["p"], L.err["v"], L.err["R"], L.err["c"], L.err["b_a"], L.err["b_w"],
        slice(ga.start, ga.start + 3), slice(ga.start + 3, ga.stop),
        slice(gw.start, gw.start + 3), slice(gw.start + 3, gw.stop),
    ]
    # Nonzero column groups per (output, order); order -1 means "all higher".
    nonzero = {
        (0, 0): "p theta c",
        (0, 1): "v theta c w",
        (0, -1): "theta c a a+ w w+",
        (1, 0): "theta",
        (1, 1): "theta w",
        (1, -1): "theta w w+",
        (2, 0): "b_a a",
        (2, -1): "a+",
        (3, 0): "b_w w",
        (3, -1): "w+",
    }
    names = ["p", "v", "theta", "c", "b_a", "b_w", "a", "a+", "w", "w+"]
    chains = plan.chains()
    rows = row_slices(sys, chains)
    mask = np.zeros((rows[-1].stop, sys.dim), dtype=bool)
    for c, r in zip(chains, rows):
        key = (c.output, c.order) if (c.output, c.order) in nonzero else (c.output, -1)
        keep = set(nonzero[key].split())
        for nm, cs in zip(names, groups):
            if nm not in keep:
                mask[r, cs] = True
    return mask


def os2_block(sys: SystemDescription, O: np.ndarray, plan: StateChainPlan) -> np.ndarray:
    """Gradients of heading orders ``1..n2`` with respect to ``w``."""
    L = sys.layout
    chains = plan.chains()
    rows = row_slices(sys, chains)
    idx = {c: rows[i] for i, c in enumerate(chains)}
    w = slice(L.err["gamma_w"].start, L.err["gamma_w"].start + 3)
    return np.vstack([O[idx[LieChain(1, (0,) * k)], w] for k in range(1, plan.n2 + 1)])


def sample_state_point(sys: SystemDescription, rng: np.random.Generator) -> NominalState:
    return random_point(sys.layout, rng, {"gamma_a": 0, "gamma_w": 0})


def prop2_point(sys: SystemDescription, rng: np.random.Generator, e_ref=E1) -> NominalState:
    """State whose angular-rate derivatives are all parallel to ``R^T e_ref``."""
    x = sample_state_point(sys, rng)
    beta = x["R"].T @ np.asarray(e_ref, dtype=float)
    Nw = sys.orders[1]
    mu = rng.standard_normal(Nw) * 10.0 ** (-np.arange(Nw, dtype=float))
    x["gamma_w"] = np.concatenate([m * beta for m in mu])
    return x


def static_point(sys: SystemDescription, rng: np.random.Generator) -> NominalState:
    """No rotation and constant specific force: the offset is unobservable."""
    x = sample_state_point(sys, rng)
    x["gamma_w"] = np.zeros_like(x["gamma_w"])
    ga = np.zeros_like(x["gamma_a"])
    ga[:3] = rng.standard_normal(3)
    x["gamma_a"] = ga
    return x


def thin_set_probe_state_formulation(
    cfg: ProbeConfig = ProbeConfig(), trials: int = 100
) -> ProbeReport:
    """Random, degenerate and perturbed-degenerate states.

    Sub-probes
    ----------
    random
        Full column rank of the whole matrix (required in 99% of trials).
    parallel
        Angular-rate derivatives parallel to the heading vector; the
        heading-on-rate block must lose rank every time.
    perturbed
        The parallel states moved by ``cfg.perturbation``; both the block
        and the whole matrix must regain full rank every time.
    """
    if cfg.order_a < 2 or cfg.order_w < 2:
        raise ObservabilityError("the thin-set probe needs model orders of at least 2")
    sys = state_system(_unit_model(cfg.order_a), _unit_model(cfg.order_w), cfg.gravity, cfg.e_ref)
    plan = StateChainPlan.default(cfg.order_a, cfg.order_w)
    chains = plan.chains()
    rng = np.random.default_rng(cfg.seed)
    rep = ProbeReport("state", required={"random": 0.99, "parallel": 1.0, "perturbed": 1.0})
    tol = cfg.rank_tol
    for t in range(trials):
        x = sample_state_point(sys, rng)
        res = rank_probe(observability_matrix_nl(sys, x, chains), tol)
        rep.add("random", t, res, sys.dim, res.full)
    for t in range(trials):
        x = prop2_point(sys, rng, cfg.e_ref)
        O = observability_matrix_nl(sys, x, chains)
        res2 = rank_probe(os2_block(sys, O, plan), tol)
        rep.add("parallel", t, res2, 3, res2.deficit >= 1)
        xp = _perturb(sys.layout, x, cfg.perturbation, rng)
        Op = observability_matrix_nl(sys, xp, chains)
        rp2 = rank_probe(os2_block(sys, Op, plan), tol)
        rp = rank_probe(Op, tol)
        rep.add("perturbed", t, rp, sys.dim, rp.full and rp2.full)
    return rep


# ---------------------------------------------------------------------------
# Inter-IMU model


def sample_inter_imu_point(
    sys: SystemDescription, rng: np.random.Generator, c=None
) -> NominalState:
    x = random_point(sys.layout, rng, {"gamma_tau": 1, "gamma_a": 0})
    if c is not None:
        x["c"] = np.asarray(c, dtype=float)
    return x


def appendix_point(
    sys: SystemDescription, rng: np.random.Generator, c=None
) -> NominalState:
    """Sparse excitation meeting the sufficient rank condition exactly.

    Angular rate and its first three derivatives vanish, the fourth
    derivative ``u`` and the sixth ``v`` are non-parallel, the fifth is zero
    and ``v`` is not parallel to ``c``. The accelerations satisfy
    ``a''' = -[u] c`` and ``a^(5) = -[v] c`` while ``a'`` and ``a''`` are
    non-collinear. Needs both model orders to be at least 6.
    """
    Nt, Na = sys.orders
    if Nt < 6 or Na < 6:
        raise ObservabilityError("the constructed point needs model orders >= 6")
    x = sample_inter_imu_point(sys, rng, c)
    c = x["c"]
    if np.linalg.norm(c) == 0.0:
        raise ObservabilityError("the constructed point needs a nonzero offset")
    u = rng.standard_normal(3)
    v = rng.standard_normal(3)
    gt = np.zeros(3 * Nt)
    gt[9:12] = u  # block k holds the (k+1)-th derivative
    gt[15:18] = v
    ga = np.zeros(3 * Na)
    ga[0:9] = rng.standard_normal(9)
    ga[9:12] = -np.cross(u, c)
    ga[12:15] = rng.standard_normal(3)
    ga[15:18] = -np.cross(v, c)
    x["w"] = np.zeros(3)
    x["gamma_tau"] = gt
    x["gamma_a"] = ga
    return x


def thin_set_probe_inter_imu(cfg: ProbeConfig = ProbeConfig(), trials: int = 100) -> ProbeReport:
    """Excited states, zero-offset states and the constructed point.

    Sub-probes
    ----------
    excited
        Random excitation with offset ``cfg.c_inter``: full rank in 99%.
    zero_offset
        Same sampling with ``c = 0``: rank deficit of at least 3 every time.
    constructed
        The point of :func:`appendix_point` with model orders raised to 6:
        full rank.
    """
    sys = inter_imu_system(_unit_model(cfg.order_tau), _unit_model(cfg.order_a))
    chains = inter_imu_chains(cfg.order_tau, cfg.order_a)
    rng = np.random.default_rng(cfg.seed)
    rep = ProbeReport("inter-imu", required={"excited": 0.99, "zero_offset": 1.0, "constructed": 1.0})
    tol = cfg.rank_tol
    for t in range(trials):
        x = sample_inter_imu_point(sys, rng, cfg.c_inter)
        res = rank_probe(observability_matrix_nl(sys, x, chains), tol)
        rep.add("excited", t, res, sys.dim, res.full)
    for t in range(trials):
        x = sample_inter_imu_point(sys, rng, np.zeros(3))
        res = rank_probe(observability_matrix_nl(sys, x, chains), tol)
        rep.add("zero_offset", t, res, sys.dim, res.deficit >= 3)
    Nt, Na = max(cfg.order_tau, 6), max(cfg.order_a, 6)
    big = inter_imu_system(_unit_model(Nt), _unit_model(Na))
    x = appendix_point(big, rng, cfg.c_inter)
    res = rank_probe(observability_matrix_nl(big, x, inter_imu_chains(Nt, Na)), tol)
    rep.add("constructed", 0, res, big.dim, res.full)
    return rep


_EXCITATION_SYSTEMS: dict = {}


def inter_imu_rank_at(
    derivs_w: np.ndarray, derivs_a: np.ndarray, c=None, tol: float = RANK_TOL
) -> tuple[bool, int]:
    """Rank test of the inter-IMU model at measured derivatives.

    Parameters
    ----------
    derivs_w : ndarray, shape (K, 3)
        Angular rate and its first ``K - 1`` derivatives.
    derivs_a : ndarray, shape (K, 3)
        Acceleration and its first ``K - 1`` derivatives.
    c : array_like, optional
        Offset at which to evaluate; a generic nonzero guess by default,
        since the rank does not depend on the biases or the rotation.

    Returns
    -------
    (full, deficit)
    """
    dw = np.atleast_2d(np.asarray(derivs_w, dtype=float))
    da = np.atleast_2d(np.asarray(derivs_a, dtype=float))
    Nt, Na = dw.shape[0] - 1, da.shape[0]
    if Nt < 1 or Na < 1:
        raise ObservabilityError("need at least the rate, one rate derivative and the acceleration")
    key = (Nt, Na)
    if key not in _EXCITATION_SYSTEMS:
        _EXCITATION_SYSTEMS[key] = inter_imu_system(_unit_model(Nt), _unit_model(Na))
    sys = _EXCITATION_SYSTEMS[key]
    x = sys.layout.zero()
    x["c"] = np.asarray((0.05, -0.03, 0.04) if c is None else c, dtype=float)
    x["w"] = dw[0]
    x["gamma_tau"] = dw[1:].ravel()
    x["gamma_a"] = da.ravel()
    # Measured derivatives span many decades; equilibrate before the test.
    res = rank_probe(observability_matrix_nl(sys, x, inter_imu_chains(Nt, Na)), tol, equilibrate=True)
    return res.full, res.deficit


# ---------------------------------------------------------------------------
# Linear systems


MAX_DRAWS = 1000


def random_observable_system(
    rng: np.random.Generator, n: int, m: int, p: int, tol: float = lti.RANK_TOL
) -> lti.LtiSystem:
    """Random ``(A, B, C)`` with ``(C, A)`` observable.

    Raises
    ------
    ObservabilityError
        If no observable draw is found, which signals an unusable ``tol``.
    """
    for _ in range(MAX_DRAWS):
        s = lti.LtiSystem(rng.standard_normal((n, n)), rng.standard_normal((n, m)),
                          rng.standard_normal((p, n)))
        if lti.is_observable(s, tol):
            return s
    raise ObservabilityError(f"no observable draw in {MAX_DRAWS} attempts at rank tolerance {tol:g}")


def lemma1_probe(trials: int = 100, seed: int = 0, tol: float = lti.RANK_TOL) -> ProbeReport:
    """Series concatenation of observable pairs with the driver output exposed."""
    rng = np.random.default_rng(seed)
    rep = ProbeReport("lemma1", required={"pairs": 1.0})
    for t in range(trials):
        ns, ng = rng.integers(1, 6, size=2)
        m = int(rng.integers(1, 4))
        plant = random_observable_system(rng, int(ns), m, int(rng.integers(1, 4)), tol)
        driver = random_observable_system(rng, int(ng), int(rng.integers(1, 4)), m, tol)
        s = lti.series_concat(plant, driver, expose_driver_output=True)
        res = rank_probe(lti.observability_matrix(s), tol)
        rep.add("pairs", t, res, s.n, res.full)
    return rep


# ---------------------------------------------------------------------------
# Analytic reference values


def analytic_input_lie(x: NominalState, gravity=GRAVITY) -> dict:
    """Closed forms of the first position-output derivatives along the drift."""
    R, c = x["R"], x["c"]
    Bw = skew(x["b_w"])
    g = np.asarray(gravity, dtype=float)
    return {
        LieChain(0, ()): x["p"] + R @ c,
        LieChain(0, (0,)): x["v"] - R @ Bw @ c,
        LieChain(0, (0, 0)): g - R @ x["b_a"] + R @ Bw @ Bw @ c,
    }


__all__ = [
    "ObservabilityError", "SystemDescription", "LieChain", "RankResult", "ProbeReport",
    "ProbeConfig", "StateChainPlan", "lie_derivative", "observability_matrix_nl",
    "rank_probe", "drift_chains", "row_slices", "input_system", "input_chains",
    "state_system", "inter_imu_system", "inter_imu_chains", "lti_description",
    "lti_chains", "probe_input", "thin_set_probe_state_formulation",
    "thin_set_probe_inter_imu", "lemma1_probe", "lemma2_reduced_matrix", "os2_block", "structural_zero_mask",
    "inter_imu_rank_at", "random_point", "prop2_point", "static_point", "appendix_point",
    "analytic_input_lie", "jexp", "retract", "exp_so3",
]
