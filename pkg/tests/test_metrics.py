"""RMSE, delay and convergence metrics."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import signal

from kinestat import lti, metrics
from kinestat.manifold import exp_so3


def test_rmse_examples(rng):
    x = rng.standard_normal((100, 3))
    np.testing.assert_array_equal(metrics.rmse(x, x), 0.0)
    d = np.array([0.1, -0.2, 0.3])
    np.testing.assert_allclose(metrics.rmse(x + d, x), np.abs(d), atol=1e-15)
    e = rng.normal(0.0, 0.7, (10_000, 3))
    np.testing.assert_allclose(metrics.rmse(x[:1] + e, np.repeat(x[:1], 10_000, 0)), 0.7, rtol=0.05)
    with pytest.raises(metrics.MetricError):
        metrics.rmse(x, x[:-1])
    with pytest.raises(metrics.MetricError):
        metrics.rmse(x, x, block="quaternion")


def test_rmse_invariant_to_common_time_shift(rng):
    t = np.arange(2000) * 1e-3
    truth = np.sin(2 * np.pi * 3 * t)[:, None]
    est = truth + rng.normal(0.0, 0.1, truth.shape)
    shift = 137
    r0 = metrics.rmse(est[shift:], truth[shift:])
    r1 = metrics.rmse(np.roll(est, -shift, 0)[:-shift], np.roll(truth, -shift, 0)[:-shift])
    np.testing.assert_array_equal(r0, r1)


def test_rotation_rmse_uses_wrapped_euler_angles():
    yaw = np.linspace(-3.0, 3.0, 50)
    truth = np.array([exp_so3([0.0, 0.0, a]) for a in yaw])
    est = np.array([exp_so3([0.0, 0.0, a + 0.2]) for a in yaw])
    np.testing.assert_allclose(metrics.rmse(est, truth, "rotation"), [0.2, 0.0, 0.0], atol=1e-12)


def test_euler_zyx_order():
    R = exp_so3([0.0, 0.0, 0.3]) @ exp_so3([0.0, 0.2, 0.0]) @ exp_so3([0.1, 0.0, 0.0])
    np.testing.assert_allclose(metrics.euler_zyx(R), [0.3, 0.2, 0.1], atol=1e-12)


def smooth_noise(rng, n, dt, f_hz):
    b, a = signal.butter(4, f_hz * 2 * dt)
    return signal.filtfilt(b, a, rng.standard_normal(n))


def test_delay_of_self_and_shift(rng):
    dt = 1e-3
    x = smooth_noise(rng, 20_000, dt, 5.0)
    assert metrics.estimate_delay(x, x, dt, 100) == pytest.approx(0.0, abs=1e-12)
    lagged = np.concatenate([np.zeros(40), x[:-40]])
    assert abs(metrics.estimate_delay(lagged, x, dt, 100) - 0.040) <= 0.5 * dt


@given(st.integers(-60, 60), st.integers(0, 1000))
def test_delay_antisymmetric(shift, seed):
    rng = np.random.default_rng(seed)
    dt = 1e-3
    x = smooth_noise(rng, 4000, dt, 8.0)
    y = np.roll(x, shift)
    d1 = metrics.estimate_delay(y, x, dt, 100)
    d2 = metrics.estimate_delay(x, y, dt, 100)
    assert d1 == pytest.approx(-d2, abs=1e-12)
    assert abs(d1 - shift * dt) <= 0.5 * dt


def test_butterworth_delay_matches_time_constant(rng):
    dt = 1e-3
    k = 0.02
    x = smooth_noise(rng, 60_000, dt, 0.5)
    y = lti.filter_butterworth1(x, k, dt)
    d = metrics.estimate_delay(y[2000:], x[2000:], dt, 200)
    assert abs(d / k - 1.0) < 0.2


def test_delay_rejects_flat_and_misaligned():
    with pytest.raises(metrics.MetricError):
        metrics.estimate_delay(np.ones(100), np.arange(100.0), 1e-3, 10)
    with pytest.raises(metrics.MetricError):
        metrics.estimate_delay(np.ones(100), np.ones(99), 1e-3, 10)


def test_convergence_time():
    t = np.linspace(0.0, 10.0, 100_001)
    assert metrics.convergence_time(t, np.full_like(t, 2.0), 2.0, 0.1) == 0.0
    tau = 0.5
    decay = 1.0 + np.exp(-t / tau)
    got = metrics.convergence_time(t, decay, 1.0, 0.05)
    assert got == pytest.approx(tau * np.log(20.0), abs=1e-3)
    assert metrics.convergence_time(t, np.exp(t), 1.0, 0.1) == metrics.NOT_CONVERGED


def test_convergence_time_multi_column():
    t = np.arange(5.0)
    s = np.array([[0, 5], [0, 0.5], [3, 0], [0, 0], [0, 0]], dtype=float)
    assert metrics.convergence_time(t, s, 0.0, 1.0) == 3.0


def test_noise_rms():
    assert metrics.noise_rms(np.array([1.0, -1.0]), np.zeros(2)) == 1.0
