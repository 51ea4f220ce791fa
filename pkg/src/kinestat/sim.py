"""Synthetic trajectories and sensor logs.

The translational motion is analytic: world-frame sinusoidal accelerations
superposed on a smooth vertical takeoff/hover/landing profile, so position,
velocity and acceleration are exact at every sample. Body angular velocity
is a sum of sinusoids and attitude is its per-step exact product integral.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .manifold import exp_so3, log_so3, skew

GRAVITY = np.array([0.0, 0.0, -9.81])
E1 = np.array([1.0, 0.0, 0.0])

# Per-channel RNG streams, in spawn order. Keeping the order fixed makes a
# noise-free twin share the bias realizations of the noisy log.
_STREAMS = ("acc", "gyro", "pos", "mag", "acc2", "bias_acc", "bias_gyro", "bias_acc2")


@dataclass(frozen=True)
class Sine:
    """``amplitude * sin(2 pi freq_hz t + phase)`` on one axis (0, 1, 2)."""

    axis: int
    amplitude: float
    freq_hz: float
    phase: float = 0.0


@dataclass(frozen=True)
class TrajectorySpec:
    """Trajectory parameters.

    ``accel_sines`` are world-frame accelerations in m/s^2 and
    ``gyro_sines`` body angular velocities in rad/s. A hover height of zero
    disables the vertical profile.
    """

    duration: float = 15.0
    rate_hz: float = 1000.0
    takeoff_time: float = 2.0
    takeoff_duration: float = 2.0
    hover_height: float = 5.0
    landing_time: float = 12.0
    landing_duration: float = 3.0
    accel_sines: tuple[Sine, ...] = ()
    gyro_sines: tuple[Sine, ...] = ()
    p0: tuple[float, float, float] = (0.0, 0.0, 0.0)
    R0: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        if self.rate_hz <= 0 or self.duration <= 0:
            raise ValueError("rate and duration must be positive")
        nyq = 0.5 * self.rate_hz
        for s in tuple(self.accel_sines) + tuple(self.gyro_sines):
            if not 0 <= s.axis <= 2:
                raise ValueError(f"sine axis must be 0..2, got {s.axis}")
            if not 0 < s.freq_hz < nyq:
                raise ValueError(f"sine frequency {s.freq_hz} Hz is not below Nyquist {nyq} Hz")


@dataclass(frozen=True)
class SensorSpec:
    """Sensor placement, noise and bias parameters.

    ``c`` is the position sensor offset in the body frame. For dual-IMU logs
    ``c2`` and ``R2`` (rotation vector) place the second IMU relative to the
    first, with ``R2`` mapping first-IMU axes into second-IMU axes.
    """

    c: tuple[float, float, float] = (0.5, 0.5, 0.5)
    noise_pos: float = 0.005
    noise_mag: float = 0.01
    noise_acc: float = 0.05
    noise_gyro: float = 0.005
    noise_acc2: float = 0.05
    bias_acc_rw: float = 1e-6
    bias_gyro_rw: float = 1e-8
    bias_acc0: tuple[float, float, float] = (0.0, 0.0, 0.0)
    bias_gyro0: tuple[float, float, float] = (0.0, 0.0, 0.0)
    bias_acc2_0: tuple[float, float, float] = (0.0, 0.0, 0.0)
    pos_rate_hz: float = 200.0
    dual_imu: bool = False
    c2: tuple[float, float, float] = (0.1, 0.05, -0.02)
    R2: tuple[float, float, float] = (0.0, 0.0, 0.0)
    e_ref: tuple[float, float, float] = (1.0, 0.0, 0.0)
    gravity: tuple[float, float, float] = (0.0, 0.0, -9.81)
    seed: int = 0

    def __post_init__(self) -> None:
        for k in ("noise_pos", "noise_mag", "noise_acc", "noise_gyro", "noise_acc2",
                  "bias_acc_rw", "bias_gyro_rw"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be nonnegative")

    def noiseless(self) -> "SensorSpec":
        """Copy with white measurement noise removed; biases unchanged."""
        from dataclasses import replace

        return replace(self, noise_pos=0.0, noise_mag=0.0, noise_acc=0.0,
                       noise_gyro=0.0, noise_acc2=0.0)


@dataclass
class Truth:
    """Ground-truth series sampled at ``t``. ``R`` is ``(n, 3, 3)``."""

    t: np.ndarray
    p: np.ndarray
    v: np.ndarray
    a_world: np.ndarray
    R: np.ndarray
    w: np.ndarray
    tau: np.ndarray
    acc: np.ndarray  # specific acceleration in the body frame
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())


@dataclass
class SensorLog:
    """Time-stamped measurements plus optional ground-truth columns.

    ``channels`` maps a column group name to an ``(n, k)`` array. Absent
    asynchronous samples are NaN. Measurement groups: ``w_m``, ``a_m``,
    ``p_m``, ``m_m`` and optionally ``a_m2``. Truth groups are prefixed with
    ``true_``. ``extra`` holds unknown columns preserved verbatim.
    """

    t: np.ndarray
    channels: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)
    extra: dict[str, list[str]] = field(default_factory=dict)

    def __getitem__(self, key: str) -> np.ndarray:
        return self.channels[key]

    def __contains__(self, key: str) -> bool:
        return key in self.channels

    @property
    def synthetic(self) -> bool:
        return any(k.startswith("true_") for k in self.channels)

    @property
    def dt(self) -> float:
        return float(np.median(np.diff(self.t)))

    def __len__(self) -> int:
        return self.t.size


def _septic(s: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Smoothstep ``S(s)`` on [0, 1] with three vanishing end derivatives and its first two derivatives."""
    s = np.clip(s, 0.0, 1.0)
    S = s**4 * (35 - 84 * s + 70 * s**2 - 20 * s**3)
    dS = 140 * s**3 * (1 - s) ** 3
    ddS = 420 * s**2 * (1 - s) ** 2 * (1 - 2 * s)
    return S, dS, ddS


def vertical_profile(t: np.ndarray, spec: TrajectorySpec):
    """Height, vertical speed and acceleration of the takeoff/landing profile."""
    z = np.zeros_like(t)
    vz = np.zeros_like(t)
    az = np.zeros_like(t)
    h = spec.hover_height
    if h == 0.0:
        return z, vz, az
    Tu, Td = spec.takeoff_duration, spec.landing_duration
    S, dS, ddS = _septic((t - spec.takeoff_time) / Tu)
    z += h * S
    vz += h * dS / Tu
    az += h * ddS / Tu**2
    S, dS, ddS = _septic((t - spec.landing_time) / Td)
    z -= h * S
    vz -= h * dS / Td
    az -= h * ddS / Td**2
    return z, vz, az


def _sines(t: np.ndarray, sines: Sequence[Sine]):
    """Value, first and second derivative of a per-axis sinusoid sum."""
    y = np.zeros((t.size, 3))
    dy = np.zeros((t.size, 3))
    iy = np.zeros((t.size, 3))  # first antiderivative
    iiy = np.zeros((t.size, 3))  # second antiderivative
    for s in sines:
        om = 2 * np.pi * s.freq_hz
        arg = om * t + s.phase
        y[:, s.axis] += s.amplitude * np.sin(arg)
        dy[:, s.axis] += s.amplitude * om * np.cos(arg)
        iy[:, s.axis] += -s.amplitude / om * np.cos(arg)
        iiy[:, s.axis] += -s.amplitude / om**2 * np.sin(arg)
    return y, dy, iy, iiy


def omega_at(t: np.ndarray, spec: TrajectorySpec) -> np.ndarray:
    """Body angular velocity at arbitrary times."""
    return _sines(np.atleast_1d(np.asarray(t, dtype=float)), spec.gyro_sines)[0]


def generate_trajectory(spec: TrajectorySpec, gravity=GRAVITY) -> Truth:
    """Sample the analytic trajectory on a uniform grid.

    Attitude advances by ``Exp(w(t_k + dt/2) dt)`` per step, so finite
    differences of the logged rotations recover the midpoint angular rate
    exactly.
    """
    g = np.asarray(gravity, dtype=float)
    n = int(round(spec.duration * spec.rate_hz)) + 1
    dt = 1.0 / spec.rate_hz
    t = np.arange(n) * dt
    a_w, _, v_s, p_s = _sines(t, spec.accel_sines)
    z, vz, az = vertical_profile(t, spec)
    p = p_s + np.asarray(spec.p0, dtype=float)
    p[:, 2] += z
    v = v_s.copy()
    v[:, 2] += vz
    a_w = a_w.copy()
    a_w[:, 2] += az
    w, tau, _, _ = _sines(t, spec.gyro_sines)
    w_mid = omega_at(t[:-1] + 0.5 * dt, spec)
    R = np.empty((n, 3, 3))
    R[0] = exp_so3(np.asarray(spec.R0, dtype=float))
    for k in range(n - 1):
        R[k + 1] = R[k] @ exp_so3(w_mid[k] * dt)
    acc = np.einsum("nji,nj->ni", R, a_w - g)
    return Truth(t, p, v, a_w, R, w, tau, acc, g)


def _walk(rng: np.random.Generator, n: int, q: float, dt: float, b0) -> np.ndarray:
    steps = rng.standard_normal((n, 3)) * np.sqrt(q * dt)
    steps[0] = 0.0
    return np.asarray(b0, dtype=float) + np.cumsum(steps, axis=0)


def synthesize_sensors(truth: Truth, spec: SensorSpec) -> SensorLog:
    """Noisy measurements of ``truth`` on seeded per-channel RNG streams.

    IMU channels are produced every sample; position and heading at
    ``pos_rate_hz`` (NaN otherwise). Biases are random walks.
    """
    ss = np.random.SeedSequence(spec.seed)
    rngs = dict(zip(_STREAMS, (np.random.default_rng(s) for s in ss.spawn(len(_STREAMS)))))
    n = truth.t.size
    dt = float(truth.t[1] - truth.t[0]) if n > 1 else 1.0
    c = np.asarray(spec.c, dtype=float)
    e_ref = np.asarray(spec.e_ref, dtype=float)
    b_a = _walk(rngs["bias_acc"], n, spec.bias_acc_rw, dt, spec.bias_acc0)
    b_w = _walk(rngs["bias_gyro"], n, spec.bias_gyro_rw, dt, spec.bias_gyro0)
    noise = {k: rngs[k].standard_normal((n, 3)) for k in ("acc", "gyro", "pos", "mag", "acc2")}
    a_m = truth.acc + b_a + spec.noise_acc * noise["acc"]
    w_m = truth.w + b_w + spec.noise_gyro * noise["gyro"]
    stride = max(int(round((1.0 / spec.pos_rate_hz) / dt)), 1)
    mask = np.zeros(n, dtype=bool)
    mask[::stride] = True
    p_m = truth.p + np.einsum("nij,j->ni", truth.R, c) + spec.noise_pos * noise["pos"]
    m_m = np.einsum("nji,j->ni", truth.R, e_ref) + spec.noise_mag * noise["mag"]
    p_m[~mask] = np.nan
    m_m[~mask] = np.nan
    ch = {
        "w_m": w_m,
        "a_m": a_m,
        "p_m": p_m,
        "m_m": m_m,
        "true_p": truth.p,
        "true_v": truth.v,
        "true_R": np.array([log_so3(R) for R in truth.R]),
        "true_a": truth.acc,
        "true_w": truth.w,
        "true_tau": truth.tau,
        "true_b_a": b_a,
        "true_b_w": b_w,
    }
    meta = {
        "synthetic": True,
        "c": list(map(float, c)),
        "e_ref": list(map(float, e_ref)),
        "gravity": list(map(float, truth.gravity)),
        "seed": int(spec.seed),
        "rate_hz": 1.0 / dt,
        "pos_rate_hz": float(spec.pos_rate_hz),
        "noise": {
            "pos": spec.noise_pos, "mag": spec.noise_mag, "acc": spec.noise_acc,
            "gyro": spec.noise_gyro, "acc2": spec.noise_acc2,
        },
    }
    if spec.dual_imu:
        R2 = exp_so3(np.asarray(spec.R2, dtype=float))
        c2 = np.asarray(spec.c2, dtype=float)
        b_a2 = _walk(rngs["bias_acc2"], n, spec.bias_acc_rw, dt, spec.bias_acc2_0)
        W = np.array([skew(w) for w in truth.w])
        lever = np.einsum("nij,njk,k->ni", W, W, c2) + np.cross(truth.tau, c2)
        a_m2 = (truth.acc + lever) @ R2.T + b_a2 + spec.noise_acc2 * noise["acc2"]
        ch["a_m2"] = a_m2
        ch["true_b_a2"] = b_a2
        meta["dual_imu"] = {"c": list(map(float, c2)), "R": list(map(float, spec.R2))}
    return SensorLog(truth.t.copy(), ch, meta)


def simulate(traj: TrajectorySpec, sensors: SensorSpec) -> SensorLog:
    truth = generate_trajectory(traj, np.asarray(sensors.gravity, dtype=float))
    return synthesize_sensors(truth, sensors)


def reference_uav_trajectory() -> TrajectorySpec:
    """Default 15 s takeoff, hover and landing flight with multi-tone excitation."""
    return TrajectorySpec(
        accel_sines=(
            Sine(0, 1.0, 0.5, 0.0), Sine(0, 0.5, 1.3, 1.0),
            Sine(1, 1.0, 0.4, 0.5), Sine(1, 0.5, 1.1, 2.0),
            Sine(2, 0.5, 0.6, 0.3), Sine(2, 0.3, 1.7, 1.5),
        ),
        gyro_sines=(
            Sine(0, 0.6, 0.7, 0.0), Sine(0, 0.3, 1.9, 0.4),
            Sine(1, 0.6, 0.5, 1.0), Sine(1, 0.3, 2.3, 0.2),
            Sine(2, 0.8, 0.3, 0.7), Sine(2, 0.3, 1.5, 2.5),
        ),
    )


def reference_shake_trajectory(duration: float = 60.0) -> TrajectorySpec:
    """Hand-held six-DOF shaking without a vertical profile."""
    return TrajectorySpec(
        duration=duration,
        hover_height=0.0,
        accel_sines=(
            Sine(0, 3.0, 0.9, 0.0), Sine(0, 1.5, 2.1, 1.0),
            Sine(1, 3.0, 0.8, 0.5), Sine(1, 1.5, 1.7, 2.0),
            Sine(2, 3.0, 1.1, 0.3), Sine(2, 1.5, 2.5, 1.5),
        ),
        gyro_sines=(
            Sine(0, 2.0, 0.7, 0.0), Sine(0, 1.0, 1.9, 0.4),
            Sine(1, 2.0, 0.6, 1.0), Sine(1, 1.0, 2.3, 0.2),
            Sine(2, 2.0, 0.5, 0.7), Sine(2, 1.0, 1.5, 2.5),
        ),
    )
