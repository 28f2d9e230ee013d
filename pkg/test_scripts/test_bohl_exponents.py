"""
Tests for the Bohl exponent estimators.
Covers exact values on constant systems, the scaling shift and the
ordering properties every window scan must respect.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.bohl_exponents import (
    Enumeration,
    EstimateKind,
    WindowSpec,
    bohl_on_subspace,
    estimate_from_log_norms,
    estimates_to_rows,
    lower_bohl_space,
    lower_bohl_vector,
    space_estimates,
    upper_bohl_space,
    upper_bohl_vector,
    vector_estimates,
)
from src.errors import HorizonExceeded, ZeroVector
from src.instances import random_lyapunov
from src.system_core import MatrixSequence


def test_window_spec_validation():
    with pytest.raises(ValueError):
        WindowSpec((8, 4), 64)
    with pytest.raises(ValueError):
        WindowSpec((4, 32), 64)
    with pytest.raises(ValueError):
        WindowSpec((), 64)
    spec = WindowSpec((4, 8), 64)
    assert spec.enumeration == Enumeration.ALL_PAIRS
    assert spec.stride == 1


def test_default_spec_drops_large_thresholds():
    spec = WindowSpec.default(64)
    assert spec.thresholds == (4, 8, 16)
    assert spec.horizon == 64


def test_dyadic_subsampling_above_limit():
    spec = WindowSpec.default(8192)
    assert spec.enumeration == Enumeration.DYADIC_SUBSAMPLE
    assert spec.stride > 1
    assert len(spec.grid()) <= 2048


def test_constant_scalar_estimates_are_exact():
    c = 0.37
    sys = MatrixSequence.constant([[math.exp(c)]], 256)
    upper, lower = vector_estimates(sys, [2.0])
    space_upper, space_lower = space_estimates(sys)
    estimates = (upper, lower, space_upper, space_lower)
    assert all(value == math.log(math.exp(c)) for e in estimates for value in e.values.values())
    assert upper.reported == pytest.approx(c, abs=1e-15)
    assert upper.kind == EstimateKind.UPPER
    assert lower.kind == EstimateKind.LOWER


def test_diagonal_space_estimates():
    sys = MatrixSequence.constant(np.diag([math.exp(-1.0), math.e]), 128)
    assert upper_bohl_space(sys).reported == pytest.approx(1.0, abs=1e-9)
    assert lower_bohl_space(sys).reported == pytest.approx(-1.0, abs=1e-9)
    assert upper_bohl_vector(sys, [1.0, 0.0]).reported == pytest.approx(-1.0, abs=1e-9)
    assert lower_bohl_vector(sys, [0.0, 1.0]).reported == pytest.approx(1.0, abs=1e-9)


def test_subspace_estimates():
    sys = MatrixSequence.constant(np.diag([math.exp(-1.0), math.e]), 128)
    upper, lower = bohl_on_subspace(sys, [[1.0, 0.0]])
    assert upper.reported == pytest.approx(-1.0, abs=1e-9)
    assert lower.reported == pytest.approx(-1.0, abs=1e-9)


def test_scaling_shift_is_exact():
    base = random_lyapunov(2, 128, 7)
    shifted = MatrixSequence.scaled(base, 0.25)
    upper, lower = space_estimates(base)
    upper_s, lower_s = space_estimates(shifted)
    assert upper_s.reported - upper.reported == pytest.approx(0.25, abs=1e-12)
    assert lower_s.reported - lower.reported == pytest.approx(0.25, abs=1e-12)
    assert upper_s.windows == upper.windows


def test_estimates_are_cached_on_root():
    base = random_lyapunov(2, 64, 2)
    vector_estimates(base, [1.0, 0.0])
    size = len(base.estimate_cache)
    vector_estimates(MatrixSequence.scaled(base, -0.4), [1.0, 0.0])
    assert len(base.estimate_cache) == size


def test_zero_vector_rejected():
    sys = MatrixSequence.identity(2, 32)
    with pytest.raises(ZeroVector):
        upper_bohl_vector(sys, [0.0, 0.0])


def test_window_beyond_horizon_rejected():
    sys = MatrixSequence.identity(2, 32)
    with pytest.raises(HorizonExceeded):
        upper_bohl_space(sys, WindowSpec((4,), 64))


def test_achieving_window_respects_threshold():
    sys = random_lyapunov(2, 128, 11)
    estimate = upper_bohl_space(sys)
    for n, (start, end) in estimate.windows.items():
        assert start > n
        assert end - start > n


def test_rows_flatten_every_threshold():
    sys = MatrixSequence.identity(1, 64)
    rows = estimates_to_rows([("space", upper_bohl_space(sys))])
    assert [row["N"] for row in rows] == [4, 8, 16]
    assert all(row["value"] == 0.0 for row in rows)


@settings(max_examples=20, deadline=None)
@given(st.floats(min_value=-2.0, max_value=2.0, allow_nan=False))
def test_constant_rate_recovered(c):
    """Upper and lower estimates of e^c agree with c."""
    sys = MatrixSequence.constant([[math.exp(c)]], 64)
    upper, lower = vector_estimates(sys, [1.0])
    assert upper.reported == pytest.approx(c, abs=1e-10)
    assert lower.reported == pytest.approx(c, abs=1e-10)


@settings(max_examples=15, deadline=None)
@given(
    st.integers(min_value=0, max_value=10_000),
    st.lists(st.floats(min_value=-1.0, max_value=1.0), min_size=2, max_size=2).filter(
        lambda v: abs(v[0]) + abs(v[1]) > 1e-3
    ),
)
def test_vector_estimates_within_space_estimates(seed, x0):
    """lower space <= lower vector <= upper vector <= upper space."""
    sys = random_lyapunov(2, 64, seed, spread=0.5)
    w = WindowSpec((4, 8), 64)
    upper_v, lower_v = vector_estimates(sys, x0, w)
    upper_s, lower_s = space_estimates(sys, w)
    assert lower_v.reported <= upper_v.reported
    assert upper_v.reported <= upper_s.reported + 1e-9
    assert lower_s.reported <= lower_v.reported + 1e-9


def test_estimate_from_precomputed_log_norms():
    logs = 0.3 * np.arange(65)
    w = WindowSpec.default(64)
    upper = estimate_from_log_norms(logs, w, EstimateKind.UPPER)
    lower = estimate_from_log_norms(logs, w, "lower")
    assert upper.kind == EstimateKind.UPPER
    assert lower.kind == EstimateKind.LOWER
    for value in list(upper.values.values()) + list(lower.values.values()):
        assert value == pytest.approx(0.3, abs=1e-12)
