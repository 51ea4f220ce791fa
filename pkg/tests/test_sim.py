"""Synthetic trajectories and sensor logs."""

from __future__ import annotations

import numpy as np
import pytest

from kinestat import sim
from kinestat.manifold import exp_so3, log_so3
from kinestat.models import inter_imu_accel2


def static_spec(**kw) -> sim.TrajectorySpec:
    return sim.TrajectorySpec(hover_height=0.0, **kw)


@pytest.fixture(scope="module")
def uav_truth():
    return sim.generate_trajectory(sim.reference_uav_trajectory())


def test_static_trajectory():
    tr = sim.generate_trajectory(static_spec(duration=2.0, p0=(1.0, 2.0, 3.0), R0=(0.1, 0.2, 0.3)))
    assert np.all(tr.p == np.array([1.0, 2.0, 3.0]))
    assert np.all(tr.v == 0.0)
    np.testing.assert_allclose(tr.R, np.broadcast_to(exp_so3([0.1, 0.2, 0.3]), tr.R.shape), atol=1e-15)
    np.testing.assert_allclose(tr.acc, np.broadcast_to(-tr.R[0].T @ sim.GRAVITY, tr.acc.shape), atol=1e-14)


def test_attitude_differences_recover_angular_rate():
    spec = static_spec(duration=5.0, gyro_sines=(sim.Sine(1, 0.8, 1.5, 0.3),))
    tr = sim.generate_trajectory(spec)
    dt = 1.0 / spec.rate_hz
    rates = np.array([log_so3(tr.R[k].T @ tr.R[k + 1]) / dt for k in range(len(tr.t) - 1)])
    mid = sim.omega_at(tr.t[:-1] + 0.5 * dt, spec)
    assert np.abs(rates - mid).max() < 1e-6
    # Against the sampled rate the midpoint offset costs O(dt^2).
    avg = 0.5 * (tr.w[:-1] + tr.w[1:])
    assert np.abs(rates - avg).max() < 1e-5


def test_hover_height():
    tr = sim.generate_trajectory(sim.TrajectorySpec())
    hover = (tr.t >= 4.0) & (tr.t <= 12.0)
    assert abs(tr.p[hover, 2].mean() - 5.0) < 1e-9
    assert np.abs(tr.p[hover, 2] - 5.0).max() < 1e-9
    assert abs(tr.p[-1, 2]) < 1e-9


def test_kinematic_consistency(uav_truth):
    tr = uav_truth
    dt = tr.t[1] - tr.t[0]

    def simpson_residual(y, dy):
        # Over two steps Simpson's rule is exact to O(dt^5).
        return y[2:] - y[:-2] - dt / 3.0 * (dy[:-2] + 4.0 * dy[1:-1] + dy[2:])

    dp = simpson_residual(tr.p, tr.v)
    dv = simpson_residual(tr.v, tr.a_world)
    assert np.abs(dp).max() < 1e-8
    assert np.abs(dv).max() < 1e-8
    spec_force = np.einsum("nji,nj->ni", tr.R, tr.a_world - tr.gravity)
    np.testing.assert_allclose(tr.acc, spec_force, atol=1e-12)


def test_trajectory_validation():
    with pytest.raises(ValueError):
        sim.TrajectorySpec(rate_hz=0.0)
    with pytest.raises(ValueError):
        sim.TrajectorySpec(rate_hz=100.0, accel_sines=(sim.Sine(0, 1.0, 60.0),))
    with pytest.raises(ValueError):
        sim.TrajectorySpec(gyro_sines=(sim.Sine(3, 1.0, 1.0),))
    with pytest.raises(ValueError):
        sim.SensorSpec(noise_acc=-1.0)


def test_noise_free_position_output():
    spec = sim.SensorSpec(c=(0.0, 0.0, 0.0), pos_rate_hz=1000.0).noiseless()
    log = sim.simulate(sim.reference_uav_trajectory(), spec)
    np.testing.assert_array_equal(log["p_m"], log["true_p"])


def test_static_offset():
    spec = sim.SensorSpec(c=(0.5, 0.5, 0.5)).noiseless()
    log = sim.simulate(static_spec(duration=1.0), spec)
    rows = ~np.isnan(log["p_m"][:, 0])
    np.testing.assert_allclose(log["p_m"][rows] - log["true_p"][rows], 0.5, atol=1e-15)


def test_position_rate_and_nan_pattern():
    log = sim.simulate(static_spec(duration=1.0), sim.SensorSpec(pos_rate_hz=200.0))
    have = ~np.isnan(log["p_m"][:, 0])
    assert have.sum() == 201
    assert np.array_equal(have, ~np.isnan(log["m_m"][:, 0]))
    assert np.all(np.diff(np.nonzero(have)[0]) == 5)
    assert not np.isnan(log["a_m"]).any()


def test_same_seed_is_bit_identical():
    traj = sim.TrajectorySpec(duration=2.0)
    a = sim.simulate(traj, sim.SensorSpec(seed=3))
    b = sim.simulate(traj, sim.SensorSpec(seed=3))
    c = sim.simulate(traj, sim.SensorSpec(seed=4))
    for k in a.channels:
        assert np.array_equal(a[k], b[k], equal_nan=True)
    assert not np.array_equal(a["a_m"], c["a_m"])


def test_noiseless_twin_shares_biases():
    traj = sim.TrajectorySpec(duration=2.0)
    spec = sim.SensorSpec(seed=5, bias_acc_rw=1e-3, bias_gyro_rw=1e-4)
    a = sim.simulate(traj, spec)
    b = sim.simulate(traj, spec.noiseless())
    np.testing.assert_array_equal(a["true_b_a"], b["true_b_a"])
    np.testing.assert_array_equal(b["a_m"], b["true_a"] + b["true_b_a"])


def test_empirical_noise_levels():
    spec = sim.SensorSpec(seed=1, pos_rate_hz=1000.0, bias_acc_rw=0.0, bias_gyro_rw=0.0)
    log = sim.simulate(static_spec(duration=40.0), spec)
    assert log["a_m"].size >= 1e5
    checks = {
        "a_m": (log["a_m"] - log["true_a"], spec.noise_acc),
        "w_m": (log["w_m"] - log["true_w"], spec.noise_gyro),
        "p_m": (log["p_m"] - log["true_p"] - np.array(spec.c), spec.noise_pos),
    }
    for name, (err, sd) in checks.items():
        assert abs(err.std() / sd - 1.0) < 0.02, name


def test_dual_imu_matches_lever_arm_formula():
    spec = sim.SensorSpec(dual_imu=True, R2=(0.2, -0.1, 0.4), c2=(0.1, 0.05, -0.02)).noiseless()
    log = sim.simulate(sim.reference_shake_trajectory(duration=2.0), spec)
    R2 = exp_so3(spec.R2)
    for k in range(0, len(log), 101):
        ref = inter_imu_accel2(R2, log["true_a"][k], log["true_w"][k], log["true_tau"][k],
                               np.array(spec.c2), log["true_b_a2"][k])
        np.testing.assert_allclose(log["a_m2"][k], ref, atol=1e-12)
    assert log.meta["dual_imu"]["c"] == list(spec.c2)


def test_pure_spin_centripetal():
    w, f = 2.0, 0.25
    # A slow sine about z evaluated at its crest gives w with zero tau.
    spec = static_spec(duration=1.0, gyro_sines=(sim.Sine(2, w, f, 0.0),))
    sens = sim.SensorSpec(dual_imu=True, c2=(0.3, 0.0, 0.0), R2=(0.0, 0.0, 0.0),
                          bias_acc_rw=0.0).noiseless()
    log = sim.simulate(spec, sens)
    k = 1000  # t = 1 s, quarter period
    assert log["true_tau"][k, 2] == pytest.approx(0.0, abs=1e-12)
    lever = log["a_m2"][k] - log["a_m"][k]
    np.testing.assert_allclose(lever, [-w * w * 0.3, 0.0, 0.0], atol=1e-12)


def test_log_properties():
    log = sim.simulate(static_spec(duration=1.0), sim.SensorSpec())
    assert log.synthetic and len(log) == 1001
    assert log.dt == pytest.approx(1e-3)
    assert np.all(np.diff(log.t) > 0)
