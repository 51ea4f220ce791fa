import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from kinestat.manifold import (
    chart_gradient,
    exp_so3,
    geodesic_distance,
    log_so3,
    orthonormalize,
    random_rotation,
    right_jacobian,
    right_jacobian_inv,
    skew,
    unskew,
)

vec3 = st.lists(st.floats(-10, 10, allow_nan=False), min_size=3, max_size=3).map(np.array)


def ball(max_norm):
    return vec3.map(lambda v: v if np.linalg.norm(v) < max_norm else v / np.linalg.norm(v) * max_norm * 0.999)


def test_skew_examples():
    assert np.array_equal(skew([0, 0, 0]), np.zeros((3, 3)))
    assert np.allclose(skew([1, 0, 0]) @ [0, 1, 0], [0, 0, 1])
    S = skew([1, 2, 3])
    assert np.array_equal(S.T, -S)


@given(vec3, vec3)
def test_skew_is_cross_product(v, w):
    assert np.allclose(skew(v) @ w, np.cross(v, w), atol=1e-12)
    assert np.allclose(unskew(skew(v)), v)


def test_exp_examples():
    assert np.array_equal(exp_so3([0, 0, 0]), np.eye(3))
    Rx = exp_so3([np.pi / 2, 0, 0])
    assert np.allclose(Rx, [[1, 0, 0], [0, 0, -1], [0, 1, 0]], atol=1e-15)


@given(vec3)
def test_exp_matches_scipy(v):
    assert np.allclose(exp_so3(v), Rotation.from_rotvec(v).as_matrix(), atol=1e-12)


def test_exp_small_angle_branch():
    v = np.array([3e-9, -1e-9, 2e-9])
    R = exp_so3(v)
    assert np.allclose(R, np.eye(3) + skew(v), atol=1e-16)
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-15)


def test_log_examples():
    assert np.array_equal(log_so3(np.eye(3)), np.zeros(3))
    v = log_so3(np.diag([1.0, -1.0, -1.0]))
    assert np.isclose(np.linalg.norm(v), np.pi)
    assert np.allclose(np.abs(v), [np.pi, 0, 0])


def test_log_half_turn_is_deterministic():
    R = exp_so3([0, 0, np.pi])
    a, b = log_so3(R), log_so3(R.copy())
    assert np.array_equal(a, b)
    assert np.allclose(exp_so3(a), R, atol=1e-9)


def test_round_trip_1000(rng):
    v = rng.standard_normal((1000, 3))
    v *= (rng.uniform(0, np.pi - 1e-6, 1000) / np.linalg.norm(v, axis=1))[:, None]
    err = max(np.max(np.abs(log_so3(exp_so3(x)) - x)) for x in v)
    assert err < 1e-9


@given(ball(np.pi - 1e-6))
def test_log_exp_identity(v):
    assert np.allclose(log_so3(exp_so3(v)), v, atol=1e-9)


def test_exp_log_near_pi(rng):
    for _ in range(200):
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        R = exp_so3(axis * (np.pi - rng.uniform(0, 1e-7)))
        assert np.allclose(exp_so3(log_so3(R)), R, atol=1e-9)


@given(vec3)
def test_rotation_invariants(v):
    R = exp_so3(v)
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-9)
    assert abs(np.linalg.det(R) - 1.0) < 1e-9


@given(ball(1.5), st.floats(-2, 2))
def test_collinear_composition(v, s):
    assert np.allclose(exp_so3(v) @ exp_so3(s * v), exp_so3((1 + s) * v), atol=1e-12)


def test_orthonormalize_restores_invariants(rng):
    R = np.eye(3)
    for _ in range(10000):
        R = R @ exp_so3(0.01 * rng.standard_normal(3))
    R = orthonormalize(R + 1e-7 * rng.standard_normal((3, 3)))
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert abs(np.linalg.det(R) - 1.0) < 1e-12


def test_geodesic_examples():
    R = exp_so3([0.3, -0.2, 0.5])
    assert geodesic_distance(R, R) == pytest.approx(0.0, abs=1e-12)
    assert geodesic_distance(np.eye(3), exp_so3([np.pi / 2, 0, 0])) == pytest.approx(np.pi / 2)


def test_geodesic_metric_properties(rng):
    for _ in range(100):
        A, B, C = (random_rotation(rng) for _ in range(3))
        dab = geodesic_distance(A, B)
        assert dab == pytest.approx(geodesic_distance(B, A), abs=1e-12)
        assert dab <= np.pi + 1e-12
        assert dab <= geodesic_distance(A, C) + geodesic_distance(C, B) + 1e-12


def test_random_rotation_valid(rng):
    R = random_rotation(rng)
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-12)


def test_chart_gradient_heading():
    e1 = np.array([1.0, 0.0, 0.0])
    J = chart_gradient(lambda R: R.T @ e1, np.eye(3))
    assert np.allclose(J, skew(e1), atol=1e-9)


def test_chart_gradient_euclidean_identity():
    J = chart_gradient(lambda x: x, np.array([1.0, 2.0, 3.0]))
    assert np.allclose(J, np.eye(3), atol=1e-9)


def test_chart_gradient_log_matches_right_jacobian_inverse(rng):
    for _ in range(20):
        v = rng.standard_normal(3)
        v *= rng.uniform(0.1, 2.5) / np.linalg.norm(v)
        J = chart_gradient(log_so3, exp_so3(v), h=1e-5)
        assert np.allclose(J, right_jacobian_inv(v), atol=1e-5)


def test_chart_gradient_second_order_in_h():
    # Error drops about 100x when h drops 10x.
    v = np.array([0.4, -0.7, 0.2])
    R = exp_so3(v)
    ref = right_jacobian_inv(v)
    e1 = np.max(np.abs(chart_gradient(log_so3, R, h=1e-2) - ref))
    e2 = np.max(np.abs(chart_gradient(log_so3, R, h=1e-3) - ref))
    assert e2 < e1 / 50


@given(ball(2.5))
def test_right_jacobian_inverse_pair(v):
    assert np.allclose(right_jacobian(v) @ right_jacobian_inv(v), np.eye(3), atol=1e-9)


def test_right_jacobian_first_order(rng):
    v = np.array([0.3, 0.2, -0.4])
    d = 1e-6 * rng.standard_normal(3)
    lhs = exp_so3(v + d)
    rhs = exp_so3(v) @ exp_so3(right_jacobian(v) @ d)
    assert np.allclose(lhs, rhs, atol=1e-11)


def test_chart_gradient_rejects_bad_step():
    with pytest.raises(ValueError):
        chart_gradient(lambda x: x, np.zeros(3), h=0.0)
