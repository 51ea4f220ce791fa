"""Batch runners tying simulation, filters and metrics together."""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import lti, metrics
from .eskf import ErrorStateEKF, EskfError, NominalState
from .manifold import exp_so3, geodesic_distance, log_so3
from .models import (
    InterImuModel,
    NoiseSpec,
    PosImuInputModel,
    PosImuStateModel,
    initial_covariance,
)
from .motion_model import StatModel, make_integrator_model
from .sim import SensorLog

STATE = "state"
INPUT = "input"
INTER_IMU = "inter-imu"


@dataclass
class FilterSettings:
    """Knobs shared by the runners (a subset of the full config)."""

    order_a: int = 4
    q_a: tuple = (1.0, 1.0, 1.0, 1.0)
    order_w: int = 4
    q_w: tuple = (1.0, 1.0, 1.0, 1.0)
    order_tau: int = 4
    q_tau: tuple = (1.0, 1.0, 1.0, 1.0)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    init_cov: dict = field(default_factory=dict)
    joseph: bool = False
    integrator: str = "rk4"
    burn_in: float = 3.0
    gravity: tuple = (0.0, 0.0, -9.81)
    e_ref: tuple = (1.0, 0.0, 0.0)

    def model_a(self) -> StatModel:
        return make_integrator_model(self.order_a, self.q_a)

    def model_w(self) -> StatModel:
        return make_integrator_model(self.order_w, self.q_w)

    def model_tau(self) -> StatModel:
        return make_integrator_model(self.order_tau, self.q_tau)


@dataclass
class EstimateResult:
    """Per-sample filter output."""

    formulation: str
    t: np.ndarray
    states: dict[str, np.ndarray]
    sigma: np.ndarray
    sigma_labels: list[str]
    timer: dict
    wall_s: float
    error: Optional[str] = None

    def rotations(self) -> np.ndarray:
        return self.states["R"]


def triad(a_m: np.ndarray, m_m: np.ndarray, gravity, e_ref) -> np.ndarray:
    """Attitude from one accelerometer and one heading sample.

    The accelerometer is taken as the up direction ``-g`` expressed in the
    body frame; the heading fixes the remaining rotation about it.
    """
    up_w = -np.asarray(gravity, dtype=float)
    up_w /= np.linalg.norm(up_w)
    e_w = np.asarray(e_ref, dtype=float)
    up_b = a_m / np.linalg.norm(a_m)
    e_b = m_m / np.linalg.norm(m_m)

    def frame(u, e):
        x = np.cross(u, e)
        x /= np.linalg.norm(x)
        return np.column_stack([u, x, np.cross(u, x)])

    # R maps body to world: R frame_b = frame_w.
    return frame(up_w, e_w) @ frame(up_b, e_b).T


def _first_valid(arr: np.ndarray) -> int:
    ok = np.nonzero(np.all(np.isfinite(arr), axis=1))[0]
    if ok.size == 0:
        raise ValueError("channel has no valid samples")
    return int(ok[0])


def _check_schema(log: SensorLog, formulation: str) -> None:
    need = {"w_m", "a_m"}
    if formulation in (STATE, INPUT):
        need |= {"p_m", "m_m"}
    else:
        need |= {"a_m2"}
    missing = sorted(need - set(log.channels))
    if missing:
        raise ValueError(f"log lacks channels {missing} required by the {formulation} formulation")


def _initial_nominal(plugin, log: SensorLog, settings: FilterSettings) -> NominalState:
    x = plugin.layout.zero()
    i = _first_valid(log["p_m"])
    a0, w0 = log["a_m"][0], log["w_m"][0]
    x["p"] = log["p_m"][i]
    x["R"] = triad(a0, log["m_m"][i], settings.gravity, settings.e_ref)
    if isinstance(plugin, PosImuStateModel):
        ga = np.zeros(3 * plugin.model_a.order)
        ga[:3] = a0
        gw = np.zeros(3 * plugin.model_w.order)
        gw[:3] = w0
        x["gamma_a"] = ga
        x["gamma_w"] = gw
    return x


def build_plugin(formulation: str, settings: FilterSettings, imu_dt: float):
    g = np.asarray(settings.gravity, dtype=float)
    e = np.asarray(settings.e_ref, dtype=float)
    if formulation == STATE:
        return PosImuStateModel(settings.model_a(), settings.model_w(), settings.noise, g, e)
    if formulation == INPUT:
        return PosImuInputModel(settings.noise, imu_dt, g, e)
    if formulation == INTER_IMU:
        return InterImuModel(settings.model_tau(), settings.model_a(), settings.noise)
    raise ValueError(f"unknown formulation {formulation!r}")


def run_filter(
    log: SensorLog,
    formulation: str,
    settings: FilterSettings,
    x0: Optional[NominalState] = None,
    P0: Optional[np.ndarray] = None,
) -> EstimateResult:
    """Run one error-state filter over a log.

    Every row is a propagation target. IMU samples are measurements in the
    state and inter-IMU formulations and inputs in the input formulation.
    Position and heading samples update whenever present. On divergence the
    partial result is returned with ``error`` set.
    """
    _check_schema(log, formulation)
    t = log.t
    n = t.size
    imu_dt = log.dt
    plugin = build_plugin(formulation, settings, imu_dt)
    lay = plugin.layout
    if x0 is None:
        if formulation == INTER_IMU:
            x0 = inter_imu_initial_state(plugin, log)
        else:
            x0 = _initial_nominal(plugin, log, settings)
    if P0 is None:
        P0 = initial_covariance(lay, settings.init_cov)
    ekf = ErrorStateEKF(plugin, x0.copy(), P0.copy(), settings.joseph, settings.integrator)
    a_m, w_m = log["a_m"], log["w_m"]
    p_m = log["p_m"] if "p_m" in log else None
    m_m = log["m_m"] if "m_m" in log else None
    a_m2 = log["a_m2"] if "a_m2" in log else None
    has_p = np.all(np.isfinite(p_m), axis=1) if p_m is not None else np.zeros(n, bool)
    has_m = np.all(np.isfinite(m_m), axis=1) if m_m is not None else np.zeros(n, bool)
    data = np.empty((n, lay.n_amb))
    sig = np.empty((n, lay.n_err))
    error = None
    t0 = time.perf_counter()
    last = n
    try:
        for k in range(n):
            if k > 0:
                u = (a_m[k - 1], w_m[k - 1]) if formulation == INPUT else None
                ekf.predict(t[k] - t[k - 1], u)
            if formulation == STATE:
                ekf.correct("imu", np.concatenate((a_m[k], w_m[k])))
            elif formulation == INTER_IMU:
                ekf.correct("imu", np.concatenate((w_m[k], a_m[k], a_m2[k])))
            if formulation != INTER_IMU:
                if has_p[k]:
                    ekf.correct("pos", p_m[k])
                if has_m[k]:
                    ekf.correct("mag", m_m[k])
            data[k] = ekf.x.data
            sig[k] = ekf.sigma()
    except EskfError as exc:
        error = str(exc)
        last = k
    wall = time.perf_counter() - t0
    data, sig, tt = data[:last], sig[:last], t[:last]
    states = {}
    for b in lay.blocks:
        s = lay.amb[b.name]
        states[b.name] = data[:, s].reshape(-1, 3, 3) if b.kind == "rotation" else data[:, s]
    if formulation == STATE:
        states["a_hat"] = states["gamma_a"][:, :3]
        states["w_hat"] = states["gamma_w"][:, :3]
    elif formulation == INPUT:
        states["a_hat"] = a_m[:last] - states["b_a"]
        states["w_hat"] = w_m[:last] - states["b_w"]
    else:
        states["a_hat"] = states["gamma_a"][:, :3]
        states["tau_hat"] = states["gamma_tau"][:, :3]
    labels = []
    for b in lay.blocks:
        labels += [f"sigma_{b.name}_{i}" for i in range(b.dim)]
    timer = {
        "mean_predict_ms": ekf.timer.mean_predict_ms,
        "mean_update_ms": ekf.timer.mean_update_ms,
        "predict_calls": ekf.timer.predict_n,
        "update_calls": ekf.timer.update_n,
        "per_step_ms": 1e3 * (ekf.timer.predict_s + ekf.timer.update_s) / max(ekf.timer.predict_n, 1),
    }
    return EstimateResult(formulation, tt, states, sig, labels, timer, wall, error)


def kinematic_rmse(result: EstimateResult, log: SensorLog, burn_in: float) -> dict[str, np.ndarray]:
    """Per-axis RMSE of position, velocity and yaw/pitch/roll after ``burn_in``."""
    m = result.t >= result.t[0] + burn_in
    out = {
        "p": metrics.rmse(result.states["p"][m], log["true_p"][: result.t.size][m]),
        "v": metrics.rmse(result.states["v"][m], log["true_v"][: result.t.size][m]),
    }
    R_true = np.array([exp_so3(r) for r in log["true_R"][: result.t.size][m]])
    out["att"] = metrics.rmse(result.states["R"][m], R_true, block="rotation")
    return out


def evaluate(result: EstimateResult, log: SensorLog, settings: FilterSettings) -> dict:
    """Flat metrics report against ground-truth columns when present."""
    rep: dict = {
        "formulation": result.formulation,
        "samples": int(result.t.size),
        "wall_s": result.wall_s,
        **{k: v for k, v in result.timer.items()},
    }
    if result.error:
        rep["error"] = result.error
    if "c" in result.states:
        rep["c_final"] = result.states["c"][-1].tolist()
    if not log.synthetic:
        return rep
    if result.formulation in (STATE, INPUT):
        for k, v in kinematic_rmse(result, log, settings.burn_in).items():
            rep[f"rmse_{k}"] = v.tolist()
        c_true = np.asarray(log.meta.get("c", [np.nan] * 3))
        rep["c_error"] = (result.states["c"][-1] - c_true).tolist()
        rep["c_convergence_s"] = metrics.convergence_time(
            result.t, result.states["c"], c_true, 0.01
        )
    return rep


# ---------------------------------------------------------------------------
# Filter comparison

# channel -> (measurement, truth, bias truth, filter estimate)
CHANNELS = {
    "w": ("w_m", "true_w", "true_b_w", "w_hat"),
    "a": ("a_m", "true_a", "true_b_a", "a_hat"),
}


def channel_system(settings: FilterSettings, channel: str, rate_hz: float) -> lti.LtiSystem:
    """Single-axis motion model observed by its IMU sensor, for gain analysis."""
    if channel == "w":
        m, sd = settings.model_w(), settings.noise.gyro
    elif channel == "a":
        m, sd = settings.model_a(), settings.noise.acc
    else:
        raise ValueError(f"unknown channel {channel!r}")
    return lti.LtiSystem(m.A, m.B, m.C, m.Q, np.array([[sd**2 / rate_hz]]))


def gyro_channel_system(settings: FilterSettings, rate_hz: float) -> lti.LtiSystem:
    return channel_system(settings, "w", rate_hz)


def matched_butterworth_k(
    settings: FilterSettings, rate_hz: float, channel: str = "w"
) -> tuple[float, float]:
    """Time constant of the low-pass filter matching the filter's noise gain.

    Returns ``(k, sigma_ratio)`` where ``sigma_ratio`` is the H2 norm of the
    stationary measurement-to-estimate response of the channel.
    """
    sysc = channel_system(settings, channel, rate_hz)
    L = lti.stationary_kalman_gain(sysc, dt=1.0 / rate_hz)
    (G,) = lti.transfer_functions(sysc, L, 0)
    ratio = lti.h2_norm(G)
    return lti.match_butterworth(ratio), ratio


@dataclass
class ChannelComparison:
    k: float
    k_zero_phase: float
    delays: dict[str, float]
    noise_rms: dict[str, float]
    raw_noise_rms: float

    def as_dict(self) -> dict:
        return {
            "butterworth_k_s": self.k,
            "zero_phase_k_s": self.k_zero_phase,
            **{f"delay_{m}_s": d for m, d in self.delays.items()},
            **{f"noise_rms_{m}": r for m, r in self.noise_rms.items()},
            "noise_rms_raw": self.raw_noise_rms,
        }


@dataclass
class ComparisonReport:
    channels: dict[str, ChannelComparison]
    dt: float

    def __getitem__(self, channel: str) -> ChannelComparison:
        return self.channels[channel]

    def as_dict(self) -> dict:
        return {"dt_s": self.dt, **{c: r.as_dict() for c, r in self.channels.items()}}


def noise_twin(log: SensorLog, channel: str) -> SensorLog:
    """Copy of a synthetic log with one IMU channel's white noise removed.

    IMU readings are truth plus bias plus white noise, so the noise-free
    reading follows from the truth columns; every other channel is shared.
    """
    if not log.synthetic:
        raise ValueError("noise twin needs ground-truth columns")
    meas, truth, bias, _ = CHANNELS[channel]
    ch = dict(log.channels)
    ch[meas] = log[truth] + log[bias]
    return SensorLog(log.t, ch, log.meta, log.extra)


def gyro_twin(log: SensorLog) -> SensorLog:
    return noise_twin(log, "w")


def compare_filters(
    log: SensorLog,
    settings: FilterSettings,
    channels: Sequence[str] = ("w", "a"),
    max_lag_s: float = 0.2,
    state_result: Optional[EstimateResult] = None,
) -> ComparisonReport:
    """Delay and noise attenuation of the filter versus low-pass baselines.

    Per IMU channel, the causal low-pass is matched to the filter's
    stationary noise gain and the zero-phase variant uses half that time
    constant so its forward-backward response has the same H2 norm. Biases
    are removed with the true bias. Noise RMS is the difference between a
    method's output on ``log`` and on :func:`noise_twin`, which drops only
    that channel's noise: the baselines see no other noise, and keeping it
    in the twin isolates the filter's response to the same input.
    """
    if not log.synthetic:
        raise ValueError("filter comparison needs ground-truth columns")
    dt = log.dt
    res = state_result or run_filter(log, STATE, settings)
    m = res.t >= res.t[0] + settings.burn_in
    lag = int(round(max_lag_s / dt))
    out = {}
    for c in channels:
        meas_key, truth_key, bias_key, est_key = CHANNELS[c]
        twin = noise_twin(log, c)
        k, _ = matched_butterworth_k(settings, 1.0 / dt, c)
        k_zp = 0.5 * k
        meas = log[meas_key] - log[bias_key]
        meas_clean = twin[meas_key] - twin[bias_key]
        res_clean = run_filter(twin, STATE, settings)
        outs = {
            "ekf": (res.states[est_key], res_clean.states[est_key]),
            "butterworth": (
                lti.filter_butterworth1(meas, k, dt), lti.filter_butterworth1(meas_clean, k, dt)
            ),
            "zero_phase": (
                lti.filter_zero_phase(meas, k_zp, dt), lti.filter_zero_phase(meas_clean, k_zp, dt)
            ),
        }
        truth = log[truth_key]
        delays, rms = {}, {}
        for name, (noisy, clean) in outs.items():
            delays[name] = metrics.estimate_delay(noisy[m], truth[m], dt, lag)
            rms[name] = metrics.noise_rms(noisy[m], clean[m])
        raw = metrics.noise_rms(meas[m], meas_clean[m])
        out[c] = ChannelComparison(k, k_zp, delays, rms, raw)
    return ComparisonReport(out, dt)


# ---------------------------------------------------------------------------
# Inter-IMU calibration


def inter_imu_initial_state(plugin: InterImuModel, log: SensorLog) -> NominalState:
    """Zero extrinsics, measured rate and acceleration, everything else zero."""
    x = plugin.layout.zero()
    x["w"] = log["w_m"][0]
    ga = np.zeros(3 * plugin.model_a.order)
    ga[:3] = log["a_m"][0]
    x["gamma_a"] = ga
    return x


@dataclass
class CalibrationReport:
    c_hat: np.ndarray
    R_hat: np.ndarray
    c_error: Optional[float]
    R_error_deg: Optional[float]
    c_convergence_s: Optional[float]
    R_convergence_s: Optional[float]
    excitation_ok: bool
    warnings: list[str]
    result: EstimateResult = field(repr=False)

    def as_dict(self) -> dict:
        d = {
            "c_hat": self.c_hat.tolist(),
            "R_hat_rotvec": log_so3(self.R_hat).tolist(),
            "excitation_ok": self.excitation_ok,
            "mean_predict_ms": self.result.timer["mean_predict_ms"],
            "mean_update_ms": self.result.timer["mean_update_ms"],
        }
        if self.c_error is not None:
            d.update(
                c_error_m=self.c_error,
                R_error_deg=self.R_error_deg,
                c_convergence_s=self.c_convergence_s,
                R_convergence_s=self.R_convergence_s,
            )
        if self.warnings:
            d["warnings"] = list(self.warnings)
        return d


def excitation_check(log: SensorLog, window_s: float = 1.0, tol: float = 1e-9) -> tuple[bool, str]:
    """Rank test of the inter-IMU observability matrix on smoothed log data.

    Angular rate and acceleration derivatives are estimated from the gyro
    and first accelerometer through a zero-phase low-pass followed by finite
    differences, at the sample with the largest rotation rate.
    """
    from .observability import inter_imu_rank_at

    dt = log.dt
    w = lti.filter_zero_phase(log["w_m"], 0.02, dt)
    a = lti.filter_zero_phase(log["a_m"], 0.02, dt)
    mag = np.linalg.norm(w - np.median(w, axis=0), axis=1)
    i = int(np.argmax(mag))
    span = max(int(window_s / dt), 8)
    i = int(np.clip(i, span, len(log) - span - 1))
    derivs_w = [w[i]]
    derivs_a = [a[i]]
    cw, ca = w, a
    for _ in range(4):
        cw = np.gradient(cw, dt, axis=0)
        ca = np.gradient(ca, dt, axis=0)
        derivs_w.append(cw[i])
        derivs_a.append(ca[i])
    moving = np.max(np.std(w, axis=0)) > 10 * log.meta.get("noise", {}).get("gyro", 1e-3) + 1e-3
    if not moving:
        return False, "angular rate shows no excitation; extrinsics are not trustworthy"
    full, deficit = inter_imu_rank_at(np.array(derivs_w), np.array(derivs_a), tol=tol)
    if not full:
        return False, f"observability rank deficit {deficit} at the most excited sample"
    return True, ""


def calibrate_imu(
    log: SensorLog, settings: FilterSettings, check_excitation: bool = True
) -> CalibrationReport:
    """Run the inter-IMU filter and report extrinsics."""
    res = run_filter(log, INTER_IMU, settings)
    c_hat = res.states["c"][-1]
    R_hat = res.states["R"][-1]
    warnings = []
    ok = True
    if check_excitation:
        ok, msg = excitation_check(log)
        if not ok:
            warnings.append(msg)
    if res.error:
        warnings.append(res.error)
    c_err = R_err = c_conv = R_conv = None
    truth = log.meta.get("dual_imu")
    if truth is not None:
        c_true = np.asarray(truth["c"], dtype=float)
        R_true = exp_so3(np.asarray(truth["R"], dtype=float))
        c_err = float(np.linalg.norm(c_hat - c_true))
        R_err = float(np.degrees(geodesic_distance(R_hat, R_true)))
        c_conv = metrics.convergence_time(res.t, res.states["c"], c_true, 0.005)
        ang = np.array([geodesic_distance(R, R_true) for R in res.states["R"]])
        R_conv = metrics.convergence_time(res.t, ang, 0.0, np.radians(1.0))
    return CalibrationReport(c_hat, R_hat, c_err, R_err, c_conv, R_conv, ok, warnings, res)


# ---------------------------------------------------------------------------
# Tuning


def grid_search_q(
    log: SensorLog,
    settings: FilterSettings,
    scales_a: Iterable[float],
    scales_w: Iterable[float],
) -> tuple[tuple[float, float], dict]:
    """Scale the motion-model intensities over a grid and keep the best.

    The score is the sum over axes of position, velocity and attitude RMSE
    of the state formulation, each normalized by the input formulation's
    RMSE on the same log.
    """
    from dataclasses import replace

    ref = kinematic_rmse(run_filter(log, INPUT, settings), log, settings.burn_in)
    scores = {}
    for sa, sw in itertools.product(scales_a, scales_w):
        s = replace(
            settings,
            q_a=tuple(sa * np.asarray(settings.q_a)),
            q_w=tuple(sw * np.asarray(settings.q_w)),
        )
        try:
            r = kinematic_rmse(run_filter(log, STATE, s), log, settings.burn_in)
            scores[(sa, sw)] = float(sum(np.sum(r[k] / ref[k]) for k in r))
        except (EskfError, FloatingPointError):
            scores[(sa, sw)] = np.inf
    best = min(scores, key=scores.get)
    return best, scores
