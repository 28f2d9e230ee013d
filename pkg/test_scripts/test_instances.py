"""
Tests for the demo and test-input generators.
"""

import math

import numpy as np
import pytest

from src.instances import (
    bd_not_ed_system,
    non_closedness_family,
    nu_growth_instance,
    nu_instance,
    random_lyapunov,
    validate_nu_instance,
)
from src.system_core import RuleKind


def test_random_lyapunov_singular_values():
    sys = random_lyapunov(3, 64, 2, spread=0.3)
    for n in (0, 31, 64):
        singular = np.linalg.svd(sys.coefficient(n), compute_uv=False)
        assert singular[0] <= 1.3 + 1e-12
        assert singular[-1] >= 0.7 - 1e-12


def test_random_lyapunov_is_seeded():
    first = random_lyapunov(2, 16, 5)
    second = random_lyapunov(2, 16, 5)
    np.testing.assert_array_equal(first.coefficient(7), second.coefficient(7))
    with pytest.raises(ValueError):
        random_lyapunov(2, 16, 5, spread=1.0)


def test_nu_instance_blocks():
    sys = nu_instance(64)
    assert sys.kind == RuleKind.BLOCK_SCHEDULE
    # Decay block of length 2, then growth block of length 2
    assert sys.coefficient(0)[1, 1] == pytest.approx(math.exp(-0.6))
    assert sys.coefficient(2)[1, 1] == pytest.approx(math.exp(0.1))
    assert sys.coefficient(4)[1, 1] == pytest.approx(math.exp(-0.6))
    assert sys.coefficient(12)[1, 1] == pytest.approx(math.exp(0.1))


def test_nu_instance_has_strict_gap():
    report = validate_nu_instance(nu_instance(2048))
    assert report.valid
    assert report.space_estimate >= 0.0
    assert report.vector_extremum < -0.05
    assert report.samples == 64


def test_nu_growth_instance_has_strict_gap():
    report = validate_nu_instance(nu_growth_instance(2048), dual=True)
    assert report.valid
    assert report.space_estimate <= 0.0
    assert report.vector_extremum > 0.05


def test_constant_system_fails_validation():
    report = validate_nu_instance(non_closedness_family(None, 2, 256), n_samples=8)
    assert not report.valid


def test_non_closedness_family():
    sys = non_closedness_family(4, 3, 128)
    np.testing.assert_allclose(sys.coefficient(10), math.exp(0.25) * np.eye(3))
    np.testing.assert_array_equal(non_closedness_family(0, 2, 16).coefficient(3), np.eye(2))


def test_bd_not_ed_structure():
    sys, splitting = bd_not_ed_system(256)
    assert sys.dimension == 3
    np.testing.assert_allclose(sys.coefficient(0)[:2, 2], [0.0, 0.0])
    assert sys.coefficient(0)[2, 2] == pytest.approx(math.exp(0.5))
    assert len(splitting.basis1) == 2
    assert len(splitting.basis2) == 1
