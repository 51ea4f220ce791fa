"""Concrete plugins: outputs, Jacobians, cross-formulation consistency and minimality."""

from __future__ import annotations

import numpy as np
import pytest

from kinestat import sim
from kinestat.eskf import propagate, validate_jacobians
from kinestat.manifold import exp_so3, log_so3
from kinestat.models import (
    GRAVITY,
    InterImuModel,
    ModelError,
    NonMinimalInterImu,
    PosImuInputModel,
    check_minimal_invariance,
    inter_imu_accel2,
    random_state,
    reduced_accel_subsystem,
    reduced_invariant_directions,
    state_model_from_orders,
)
from kinestat.motion_model import make_integrator_model

QUARTER_Z = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


@pytest.fixture(scope="module")
def state_model():
    return state_model_from_orders(4, [0.5, 1.0, 2.0, 3.0], 3, [1.0, 0.2, 4.0])


@pytest.fixture(scope="module")
def inter_model():
    return InterImuModel(make_integrator_model(2, [1.0, 2.0]), make_integrator_model(3, [1.0, 1.0, 1.0]))


# ---------------------------------------------------------------------------
# Outputs


def test_hover_position_output(state_model):
    x = state_model.layout.zero()
    x["p"] = [1.0, -2.0, 3.0]
    x["c"] = [0.5, 0.5, 0.5]
    np.testing.assert_allclose(state_model.h(x, "pos"), [1.5, -1.5, 3.5])


def test_heading_output_at_quarter_turn(state_model):
    x = state_model.layout.zero()
    x["R"] = QUARTER_Z
    np.testing.assert_allclose(state_model.h(x, "mag"), [0.0, -1.0, 0.0], atol=1e-15)


def test_imu_outputs_read_top_of_chain(state_model, rng):
    x = random_state(state_model.layout, rng)
    np.testing.assert_allclose(state_model.h(x, "acc"), x["gamma_a"][:3] + x["b_a"])
    np.testing.assert_allclose(state_model.h(x, "gyro"), x["gamma_w"][:3] + x["b_w"])
    with pytest.raises(ModelError):
        state_model.h(x, "baro")


def test_input_model_hover_has_zero_velocity_rate(rng):
    m = PosImuInputModel()
    x = random_state(m.layout, rng)
    x["b_a"] = 0.0
    x["b_w"] = 0.0
    u = (-x["R"].T @ GRAVITY, np.zeros(3))
    d = m.f(x, u)
    np.testing.assert_allclose(d[m.layout.err["v"]], 0.0, atol=1e-14)
    np.testing.assert_allclose(d[m.layout.err["R"]], 0.0)


def test_input_model_full_spin_returns_to_start(rng):
    m = PosImuInputModel()
    x = random_state(m.layout, rng)
    x["b_w"] = 0.0
    R0 = x["R"].copy()
    n = 6283
    dt = 2.0 * np.pi / n
    P = np.eye(m.layout.n_err)
    u = (np.zeros(3), np.array([0.0, 0.0, 1.0]))
    for _ in range(n):
        x, P = propagate(x, P, m, dt, u)
    assert np.linalg.norm(log_so3(R0.T @ x["R"])) < 1e-6


def test_input_model_missing_input():
    m = PosImuInputModel()
    x = m.layout.zero()
    with pytest.raises(ModelError):
        m.f(x, None)
    with pytest.raises(ModelError):
        m.F_x(x, (np.array([0.0, np.nan, 0.0]), np.zeros(3)))


def test_inter_imu_static_output(inter_model, rng):
    x = random_state(inter_model.layout, rng)
    x["w"] = 0.0
    x["gamma_tau"] = 0.0
    a = inter_model.accel(x)
    np.testing.assert_allclose(inter_model.h(x, "acc2"), x["R"] @ a + x["b_a"], atol=1e-14)


def test_inter_imu_centripetal_term(inter_model):
    w, r = 3.0, 0.2
    x = inter_model.layout.zero()
    x["w"] = [0.0, 0.0, w]
    x["c"] = [r, 0.0, 0.0]
    np.testing.assert_allclose(inter_model.h(x, "acc2"), [-w * w * r, 0.0, 0.0], atol=1e-15)


def test_second_accelerometer_matches_rigid_body_kinematics():
    # Differentiate the world position of the second sensor twice along a
    # smooth rotating trajectory and express the result in its own axes.
    g = GRAVITY
    c = np.array([0.1, -0.2, 0.15])
    Rrel = exp_so3([0.3, -0.1, 0.7])

    def pose(t):
        p = np.array([np.sin(t), 0.5 * t * t, np.cos(2 * t)])
        R = exp_so3([0.4 * np.sin(1.3 * t), 0.7 * t, -0.2 * t * t])
        return p, R

    def second_pos(t):
        p, R = pose(t)
        return p + R @ c

    t0, h = 0.8, 1e-3
    _, R1 = pose(t0)
    dd = lambda f: (f(t0 + h) - 2 * f(t0) + f(t0 - h)) / h**2  # noqa: E731
    p1dd = dd(lambda t: pose(t)[0])
    p2dd = dd(second_pos)

    def omega(t, hh=1e-5):
        Rp, Rm = pose(t + hh)[1], pose(t - hh)[1]
        return log_so3(Rm.T @ Rp) / (2 * hh)

    w = omega(t0)
    tau = (omega(t0 + h) - omega(t0 - h)) / (2 * h)
    a1 = R1.T @ (p1dd - g)
    expected = Rrel @ R1.T @ (p2dd - g)
    got = inter_imu_accel2(Rrel, a1, w, tau, c, np.zeros(3))
    np.testing.assert_allclose(got, expected, atol=1e-4)


def test_inter_imu_noiseless_residuals_vanish(inter_model):
    traj = sim.reference_shake_trajectory(duration=2.0)
    spec = sim.SensorSpec(dual_imu=True, R2=(0.1, -0.2, 0.3), bias_acc0=(0.1, 0.0, -0.1),
                          bias_acc2_0=(0.0, 0.2, 0.0), bias_gyro0=(0.01, 0.0, 0.0)).noiseless()
    log = sim.simulate(traj, spec)
    R2 = exp_so3(spec.R2)
    worst = 0.0
    for k in range(0, len(log), 97):
        x = inter_model.layout.zero()
        x["R"] = R2
        x["c"] = spec.c2
        x["w"] = log["true_w"][k]
        x["b_w"] = log["true_b_w"][k]
        x["b_a"] = log["true_b_a2"][k] - R2 @ log["true_b_a"][k]
        g_tau = np.zeros(x["gamma_tau"].size)
        g_tau[:3] = log["true_tau"][k]
        x["gamma_tau"] = g_tau
        g_a = np.zeros(x["gamma_a"].size)
        g_a[:3] = log["true_a"][k] + log["true_b_a"][k]
        x["gamma_a"] = g_a
        for ch, col in (("gyro", "w_m"), ("acc", "a_m"), ("acc2", "a_m2")):
            r = inter_model.residual(log[col][k], inter_model.h(x, ch), ch)
            worst = max(worst, float(np.abs(r).max()))
    assert worst < 1e-12


# ---------------------------------------------------------------------------
# Jacobians


def test_state_model_jacobians(state_model, rng):
    for _ in range(50):
        rep = validate_jacobians(state_model, random_state(state_model.layout, rng), tol=1e-4)
        assert rep.passed, rep.errors


def test_input_model_jacobians(rng):
    m = PosImuInputModel()
    for _ in range(50):
        u = (rng.normal(0.0, 5.0, 3), rng.normal(0.0, 1.0, 3))
        rep = validate_jacobians(m, random_state(m.layout, rng), tol=1e-4, u=u)
        assert rep.passed, rep.errors


def test_inter_imu_jacobians(inter_model, rng):
    for _ in range(50):
        rep = validate_jacobians(inter_model, random_state(inter_model.layout, rng), tol=1e-4)
        assert rep.passed, rep.errors


# ---------------------------------------------------------------------------
# Formulation cross-check


def test_frozen_chain_reduces_to_input_formulation(rng):
    sm = state_model_from_orders(2, [1.0, 1.0], 2, [1.0, 1.0])
    im = PosImuInputModel()
    xs = random_state(sm.layout, rng)
    a = rng.normal(0.0, 3.0, 3)
    w = rng.normal(0.0, 1.0, 3)
    xs["gamma_a"] = np.concatenate([a, np.zeros(3)])
    xs["gamma_w"] = np.concatenate([w, np.zeros(3)])
    xi = im.layout.zero()
    for k in ("p", "v", "R", "c", "b_a", "b_w"):
        xi[k] = xs[k]
    u = (a + xi["b_a"], w + xi["b_w"])
    dt = 1e-3
    ys, _ = propagate(xs, np.eye(sm.layout.n_err), sm, dt)
    yi, _ = propagate(xi, np.eye(im.layout.n_err), im, dt, u)
    for k in ("p", "v", "R", "c", "b_a", "b_w"):
        np.testing.assert_allclose(ys[k], yi[k], rtol=0, atol=1e-10)


# ---------------------------------------------------------------------------
# Minimal realization


@pytest.fixture(scope="module")
def non_minimal():
    return NonMinimalInterImu(
        make_integrator_model(1, [1.0]), make_integrator_model(2, [1.0, 1.0]), exp_so3([0.1, 0.2, 0.3])
    )


def test_non_minimal_model_has_invariant_offset(non_minimal):
    rep = check_minimal_invariance(non_minimal, duration=10.0)
    assert not rep.minimal
    assert rep.nullity == 3
    assert rep.xbar_norm > 0.1
    assert rep.max_output_diff < 1e-9


def test_zero_offset_is_trivially_invariant(non_minimal, rng):
    x0 = 0.1 * rng.standard_normal(non_minimal.n)
    y = non_minimal.simulate_outputs(x0, duration=1.0)
    np.testing.assert_array_equal(y, non_minimal.simulate_outputs(x0 + 0.0, duration=1.0))


def test_offset_outside_nullspace_changes_outputs(non_minimal, rng):
    x0 = 0.1 * rng.standard_normal(non_minimal.n)
    bump = np.zeros(non_minimal.n)
    bump[non_minimal.sl["b_a2"]] = [0.1, 0.0, 0.0]
    y0 = non_minimal.simulate_outputs(x0, duration=1.0)
    y1 = non_minimal.simulate_outputs(x0 + bump, duration=1.0)
    assert np.abs(y1 - y0).max() > 0.05


def test_reduction_removes_invariant_offsets(non_minimal):
    red, dropped = reduced_accel_subsystem(non_minimal)
    assert dropped == 3
    assert red.n == 3
    assert reduced_invariant_directions(non_minimal).shape[1] == 0


def test_higher_order_acceleration_model_also_non_minimal():
    m = NonMinimalInterImu(make_integrator_model(3, [1.0] * 3), make_integrator_model(1, [1.0]), np.eye(3))
    rep = check_minimal_invariance(m, duration=2.0)
    assert rep.nullity == 3 and rep.max_output_diff < 1e-9
    assert reduced_invariant_directions(m).shape[1] == 0

