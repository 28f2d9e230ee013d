"""
Tests for the rotation method: slow/fast classification, cone geometry,
the algebraic rotations and the dynamic rotation certificates.
"""

import math

import numpy as np
import pytest
from hypothesis import given, seed, settings
from hypothesis import strategies as st

from src.errors import AntipodalPair, NotSlow, WindowDegenerate
from src.instances import random_lyapunov
from src.millionshikov import (
    Cone,
    Speed,
    algebraic_backward,
    algebraic_forward,
    angle_between,
    backward_rotation_perturbation,
    classify_vector,
    cone_step,
    fast_in_cone,
    forward_rotation_perturbation,
    maximal_vector,
    rotation_between,
)


def test_classify_slow_and_fast():
    F = np.diag([1.0, 0.01])
    assert classify_vector(F, [0.0, 1.0], 0.3).speed == Speed.SLOW
    assert classify_vector(F, [1.0, 0.0], 0.3).speed == Speed.FAST


def test_classify_rejects_bad_angle():
    with pytest.raises(ValueError):
        classify_vector(np.eye(2), [1.0, 0.0], 0.0)
    with pytest.raises(ValueError):
        classify_vector(np.eye(2), [1.0, 0.0], math.pi / 2)


def test_maximal_vector():
    np.testing.assert_allclose(maximal_vector(np.diag([1.0, 3.0])), [0.0, 1.0], atol=1e-12)
    # Degenerate top singular value resolves to the first axis
    np.testing.assert_allclose(maximal_vector(np.eye(3)), [1.0, 0.0, 0.0], atol=1e-12)


def test_rotation_between_is_proper_rotation():
    x = np.array([1.0, 2.0, -0.5])
    y = np.array([-0.3, 1.0, 2.0])
    V = rotation_between(x, y)
    np.testing.assert_allclose(V.T @ V, np.eye(3), atol=1e-12)
    assert np.linalg.det(V) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(V @ (x / np.linalg.norm(x)), y / np.linalg.norm(y), atol=1e-12)
    # Identity on the complement of the rotation plane
    normal = np.cross(x, y)
    np.testing.assert_allclose(V @ normal, normal, atol=1e-10)


def test_antipodal_rotation_rejected():
    with pytest.raises(AntipodalPair):
        rotation_between([1.0, 0.0], [-1.0, 0.0])


def test_cone_step_lands_in_cone():
    F = np.array([[2.0, 0.0], [0.0, 0.01]])
    eps = 0.2
    x = np.array([0.05, 1.0])
    step = cone_step(F, x, eps)
    assert Cone(tuple(x), eps).contains(step.vector, tolerance=1e-12)
    assert classify_vector(F, step.vector, eps).speed == Speed.FAST
    assert np.linalg.norm(step.vector) == pytest.approx(1.0)


def test_cone_step_requires_slow_vector():
    with pytest.raises(NotSlow):
        cone_step(np.diag([1.0, 0.01]), [1.0, 0.0], 0.3)


def test_fast_in_cone_orthogonal_slow_vector():
    F = np.diag([8.0, 1.0 / 8.0])
    vector = fast_in_cone(F, [0.0, 1.0], 0.1)
    assert abs(vector[0]) == pytest.approx(math.sin(0.1), abs=1e-12)
    assert vector[1] == pytest.approx(math.cos(0.1), abs=1e-12)
    assert np.linalg.norm(F @ vector) >= 0.0499 * 8.0


@seed(7)
@settings(max_examples=40, deadline=None)
@given(
    st.floats(min_value=4.0, max_value=16.0),
    st.floats(min_value=-0.01, max_value=0.01),
    st.floats(min_value=0.2, max_value=0.5),
)
def test_fast_in_cone_postconditions(scale, tilt, eps):
    """The returned vector is unit, eps-fast and within angle eps of x."""
    F = np.diag([scale, 1.0 / scale])
    x = np.array([tilt, 1.0])
    vector = fast_in_cone(F, x, eps)
    assert np.linalg.norm(vector) == pytest.approx(1.0, abs=1e-12)
    assert angle_between(x, vector) <= eps + 1e-12
    assert classify_vector(F, vector, eps).speed == Speed.FAST


def test_algebraic_forward_guarantees():
    rng = np.random.default_rng(5)
    matrices = [np.eye(2) + 0.3 * rng.standard_normal((2, 2)) for _ in range(6)]
    v = rng.standard_normal(2)
    eps = 0.25
    R = algebraic_forward(matrices, v, eps)
    first = matrices[0]
    assert np.linalg.norm(R, 2) <= eps * np.linalg.norm(first, 2) * (1 + 1e-9)
    assert np.linalg.norm((first + R) @ v) == pytest.approx(np.linalg.norm(first @ v), rel=1e-12)
    tail = np.eye(2)
    for matrix in matrices[1:]:
        tail = matrix @ tail
    grown = np.linalg.norm(tail @ (first + R) @ v)
    bound = math.sin(eps) / 2 * np.linalg.norm(tail, 2) * np.linalg.norm(first @ v)
    assert grown >= bound * (1 - 1e-12)


def test_algebraic_backward_preserves_norm():
    rng = np.random.default_rng(6)
    matrices = [np.eye(2) + 0.3 * rng.standard_normal((2, 2)) for _ in range(6)]
    v = rng.standard_normal(2)
    R = algebraic_backward(matrices, v, 0.25)
    last = matrices[-1]
    before = np.linalg.norm(np.linalg.solve(last, v))
    after = np.linalg.norm(np.linalg.solve(last + R, v))
    assert after == pytest.approx(before, rel=1e-10)


def test_slice_needs_two_matrices():
    with pytest.raises(WindowDegenerate):
        algebraic_forward([np.eye(2)], [1.0, 0.0], 0.2)


@pytest.mark.parametrize("seed", range(6))
def test_rotation_certificates_hold(seed):
    sys = random_lyapunov(2 + seed % 2, 64, 100 + seed, spread=0.5)
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal(sys.dimension)
    eps = float(rng.uniform(0.05, 1.0))
    for rotate, index in ((forward_rotation_perturbation, 9), (backward_rotation_perturbation, 40)):
        plan, certificate = rotate(sys, 10, 40, x0, eps)
        assert certificate.holds
        assert set(plan.support) <= {index}
        assert plan.sup_norm <= eps * np.linalg.norm(sys.coefficient(index), 2) * (1 + 1e-9)


def test_angle_between_clamps():
    assert angle_between([1.0, 0.0], [2.0, 0.0]) == 0.0
    assert angle_between([1.0, 0.0], [0.0, 3.0]) == pytest.approx(math.pi / 2)
