"""Batch runners on short synthetic logs."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from kinestat import lti, pipeline, sim
from kinestat.manifold import exp_so3, geodesic_distance

SETTINGS = pipeline.FilterSettings(q_a=(0.0, 0.0, 0.0, 1e4), q_w=(0.0, 0.0, 0.0, 1e6))


@pytest.fixture(scope="module")
def short_log():
    traj = replace(sim.reference_uav_trajectory(), duration=4.0, takeoff_time=0.5,
                   takeoff_duration=1.0, landing_time=10.0)
    return sim.simulate(traj, sim.SensorSpec(seed=1))


@pytest.fixture(scope="module")
def state_run(short_log):
    return pipeline.run_filter(short_log, pipeline.STATE, SETTINGS)


def test_triad_recovers_attitude(rng):
    g = np.array([0.0, 0.0, -9.81])
    e = np.array([1.0, 0.0, 0.0])
    for _ in range(20):
        R = exp_so3(rng.uniform(-1.0, 1.0, 3))
        got = pipeline.triad(-R.T @ g, R.T @ e, g, e)
        assert geodesic_distance(got, R) < 1e-12


def test_state_run_shapes_and_accuracy(short_log, state_run):
    r = state_run
    assert r.error is None
    assert r.t.size == len(short_log)
    assert r.sigma.shape == (len(short_log), 18 + 24)
    assert r.sigma_labels[0] == "sigma_p_0"
    assert r.timer["predict_calls"] == len(short_log) - 1
    tail = slice(-500, None)
    assert np.abs(r.states["p"][tail] - short_log["true_p"][tail]).max() < 0.05
    assert np.abs(r.states["w_hat"][tail] - short_log["true_w"][tail]).max() < 0.05


def test_input_run(short_log):
    r = pipeline.run_filter(short_log, pipeline.INPUT, SETTINGS)
    assert r.error is None and "gamma_a" not in r.states
    np.testing.assert_allclose(r.states["w_hat"], short_log["w_m"] - r.states["b_w"])
    rep = pipeline.evaluate(r, short_log, replace(SETTINGS, burn_in=1.0))
    assert set(rep) >= {"rmse_p", "rmse_v", "rmse_att", "c_error", "mean_predict_ms"}
    assert max(rep["rmse_p"]) < 0.05


def test_missing_channels_rejected(short_log):
    with pytest.raises(ValueError, match="a_m2"):
        pipeline.run_filter(short_log, pipeline.INTER_IMU, SETTINGS)
    with pytest.raises(ValueError):
        pipeline.run_filter(short_log, "batch", SETTINGS)


def test_divergence_is_reported_not_raised(short_log):
    ch = dict(short_log.channels)
    a = ch["a_m"].copy()
    a[100] = np.inf
    ch["a_m"] = a
    bad = sim.SensorLog(short_log.t, ch, short_log.meta)
    r = pipeline.run_filter(bad, pipeline.STATE, SETTINGS)
    assert r.error is not None
    assert r.t.size == 100


def test_matched_butterworth_has_filter_noise_gain():
    k, ratio = pipeline.matched_butterworth_k(SETTINGS, 1000.0, "w")
    assert lti.h2_norm(lti.butterworth_tf(k)) == pytest.approx(ratio, rel=1e-9)
    assert 1e-3 < k < 0.05


def test_noise_twin_changes_one_channel(short_log):
    tw = pipeline.noise_twin(short_log, "w")
    np.testing.assert_array_equal(tw["w_m"], short_log["true_w"] + short_log["true_b_w"])
    np.testing.assert_array_equal(tw["a_m"], short_log["a_m"])
    np.testing.assert_array_equal(tw["p_m"], short_log["p_m"])


def test_compare_filters_smoke(short_log, state_run):
    rep = pipeline.compare_filters(short_log, replace(SETTINGS, burn_in=1.0), channels=("w",),
                                   state_result=state_run)
    d = rep.as_dict()
    assert set(d["w"]) >= {"butterworth_k_s", "delay_ekf_s", "delay_butterworth_s",
                           "delay_zero_phase_s", "noise_rms_ekf", "noise_rms_raw"}
    w = rep["w"]
    assert w.delays["butterworth"] > 0.5 * w.k
    assert abs(w.delays["zero_phase"]) < rep.dt
    assert w.noise_rms["butterworth"] < w.raw_noise_rms


def test_excitation_check():
    spec = sim.SensorSpec(dual_imu=True, seed=3)
    still = sim.simulate(sim.TrajectorySpec(duration=3.0, hover_height=0.0), spec)
    ok, msg = pipeline.excitation_check(still)
    assert not ok and "excitation" in msg
    shake = sim.simulate(sim.reference_shake_trajectory(duration=3.0), spec)
    assert pipeline.excitation_check(shake)[0]


def test_grid_search_prefers_finite_scores(short_log):
    best, scores = pipeline.grid_search_q(short_log, replace(SETTINGS, burn_in=1.0), [1.0, 100.0], [1.0])
    assert best in scores and len(scores) == 2
    assert np.isfinite(scores[best])
