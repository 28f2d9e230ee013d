"""
Tests for splittings and the exponential / Bohl dichotomy checks.
"""

import math

import numpy as np
import pytest

from src.dichotomy import (
    Splitting,
    VerdictState,
    check_bd,
    check_ed,
    classify_margins,
    default_samples,
    find_no_bd_witness,
    flag_splittings,
    search_splitting,
    trivial_ed_uniformity,
    verdict_rows,
)
from src.errors import DegenerateSplitting, EmptySampleSet, ZeroVector
from src.instances import bd_not_ed_system, non_closedness_family
from src.system_core import MatrixSequence

E1 = [1.0, 0.0]
E2 = [0.0, 1.0]


def saddle(horizon: int = 256) -> MatrixSequence:
    return MatrixSequence.constant(np.diag([math.exp(-1.0), math.e]), horizon)


def test_splitting_validation():
    with pytest.raises(DegenerateSplitting):
        Splitting([E1], [[2.0, 0.0]])
    with pytest.raises(DegenerateSplitting):
        Splitting([E1], [])
    with pytest.raises(DegenerateSplitting):
        Splitting([], [])
    splitting = Splitting([E1], [E2])
    assert splitting.dimension == 2


def test_splitting_membership():
    splitting = Splitting([E1], [[1.0, 1.0]])
    assert splitting.member([3.0, 0.0]) == 1
    assert splitting.member([-2.0, -2.0]) == 2
    assert splitting.member([0.0, 1.0]) is None
    with pytest.raises(ZeroVector):
        splitting.member([0.0, 0.0])
    x1, x2 = splitting.decompose([0.0, 1.0])
    np.testing.assert_allclose(x1 + x2, [0.0, 1.0], atol=1e-14)
    np.testing.assert_allclose(x2, [1.0, 1.0], atol=1e-14)


def test_classify_margins():
    assert classify_margins((0.5, 0.2), 1e-3) == VerdictState.HOLDS
    assert classify_margins((0.0005, 1.0), 1e-3) == VerdictState.INCONCLUSIVE
    assert classify_margins((-1.0, 1.0), 1e-3) == VerdictState.FAILS


def test_default_samples_are_unit_and_seeded():
    samples = default_samples([E1, [1.0, 1.0]], count=6, seed=3)
    assert len(samples) == 6
    for sample in samples:
        assert np.linalg.norm(sample) == pytest.approx(1.0)
    np.testing.assert_allclose(samples[0], E1)
    again = default_samples([E1, [1.0, 1.0]], count=6, seed=3)
    np.testing.assert_array_equal(samples[-1], again[-1])


def test_saddle_is_exponential_dichotomy():
    verdict = check_ed(saddle(), Splitting([E1], [E2]))
    assert verdict.holds
    assert verdict.state == VerdictState.HOLDS
    assert verdict.alpha == pytest.approx(1.0, abs=1e-9)
    assert verdict.K == pytest.approx(1.0, abs=1e-6)


def test_swapped_saddle_fails():
    verdict = check_ed(saddle(), Splitting([E2], [E1]))
    assert not verdict.holds
    assert verdict.state == VerdictState.FAILS
    assert verdict.K == math.inf


def test_saddle_is_bohl_dichotomy():
    verdict = check_bd(saddle(), Splitting([E1], [E2]))
    assert verdict.holds
    assert verdict.skipped == 0
    assert verdict.c1_samples and verdict.c2_samples
    assert verdict.notes == ("sample design: per-subspace, 32 vectors drawn from L1 and L2",)


def test_bd_skips_mixed_samples():
    splitting = Splitting([E1], [E2])
    verdict = check_bd(saddle(), splitting, samples=[E1, [1.0, 1.0], E2])
    assert verdict.skipped == 1
    assert verdict.notes == (
        "sample design: 3 caller vectors",
        "skipped 1 samples lying in neither subspace",
    )
    with pytest.raises(EmptySampleSet):
        check_bd(saddle(), splitting, samples=[[1.0, 1.0]])


def test_dimension_mismatch_rejected():
    with pytest.raises(DegenerateSplitting):
        check_ed(saddle(), Splitting([[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))


def test_bohl_but_not_exponential():
    sys, splitting = bd_not_ed_system(2048)
    assert check_bd(sys, splitting).holds
    assert not check_ed(sys, splitting).holds


def test_non_closedness_rates():
    """e^{1/k} I is an exponential dichotomy (R^d unstable) with rate 1/k."""
    for k in (1, 2, 4):
        sys = non_closedness_family(k, 2, 1024)
        verdict = check_ed(sys, Splitting([], [E1, E2]))
        assert verdict.holds
        assert verdict.alpha == pytest.approx(1.0 / k, abs=1e-3)


def test_identity_has_witness():
    witness = find_no_bd_witness(non_closedness_family(None, 2, 1024), [E1])
    assert witness is not None
    assert witness.lower == 0.0
    assert witness.upper == 0.0
    assert witness.x0 == (1.0, 0.0)


def test_contracting_system_has_no_witness():
    sys = MatrixSequence.constant(0.5 * np.eye(2), 128)
    assert find_no_bd_witness(sys, [E1, E2]) is None


def test_search_finds_saddle_splitting():
    splitting = search_splitting(saddle())
    assert splitting is not None
    assert len(splitting.basis1) == 1
    assert len(splitting.basis2) == 1
    np.testing.assert_allclose(np.abs(splitting.basis1[0]), E1, atol=1e-12)


def test_search_fails_on_identity():
    assert search_splitting(MatrixSequence.identity(2, 128)) is None


def test_flag_splittings_cover_every_dimension():
    candidates = flag_splittings(saddle())
    assert [len(c.basis1) for c in candidates] == [2, 1, 0]


def test_trivial_ed_uniformity():
    report = trivial_ed_uniformity(MatrixSequence.constant(0.5 * np.eye(2), 128))
    assert report.ed_holds
    assert report.space_upper == pytest.approx(math.log(0.5), abs=1e-9)
    assert report.consistent


def test_verdict_rows():
    sys = saddle()
    splitting = Splitting([E1], [E2])
    rows = verdict_rows("saddle", check_ed(sys, splitting), check_bd(sys, splitting))
    assert rows[0]["target"] == "saddle"
    assert {row["test"] for row in rows} == {"ED", "BD:C1", "BD:C2"}
