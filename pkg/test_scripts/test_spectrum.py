"""
Tests for the sampled dichotomy spectra and the perturbed-spectrum approximation.
"""

import math

import numpy as np
import pytest

from src.bohl_exponents import WindowSpec
from src.spectrum import (
    INNER_LABEL,
    Membership,
    bd_approximation_demo,
    default_grid,
    interval_rows,
    merge_intervals,
    sample_bd_spectrum,
    sample_ed_spectrum,
    spectrum_rows,
)
from src.system_core import MatrixSequence

GRID = (-2.0, -1.0, 0.0, 1.0, 2.0)


@pytest.fixture(scope="module")
def saddle():
    return MatrixSequence.constant(np.diag([math.exp(-1.0), math.e]), 256)


def test_default_grid():
    grid = default_grid()
    assert grid[0] == -3.0
    assert grid[-1] == 3.0
    assert len(grid) == 121
    assert 0.0 in grid


def test_merge_intervals():
    states = [Membership.IN, Membership.IN, Membership.OUT, Membership.IN, Membership.INCONCLUSIVE]
    assert merge_intervals([0.0, 0.1, 0.2, 0.3, 0.4], states, Membership.IN) == [(0.0, 0.1), (0.3, 0.3)]
    assert merge_intervals([0.0], [Membership.OUT], Membership.IN) == []


def test_grid_must_increase(saddle):
    with pytest.raises(ValueError):
        sample_ed_spectrum(saddle, [0.0, 0.0])
    with pytest.raises(ValueError):
        sample_ed_spectrum(saddle, [])


def test_saddle_spectra(saddle):
    ed = sample_ed_spectrum(saddle, GRID)
    bd = sample_bd_spectrum(saddle, GRID)
    assert ed.members() == [-1.0, 1.0]
    assert bd.members() == [-1.0, 1.0]
    assert ed.state_at(0.0) == Membership.OUT
    assert ed.intervals == [(-1.0, -1.0), (1.0, 1.0)]


def test_bd_sample_inside_ed_sample(saddle):
    grid = tuple(np.round(np.arange(-2.0, 2.0001, 0.5), 12))
    ed = sample_ed_spectrum(saddle, grid)
    bd = sample_bd_spectrum(saddle, grid)
    for e, b in zip(ed.states, bd.states):
        if b == Membership.IN:
            assert e == Membership.IN


def test_identity_spectrum():
    sys = MatrixSequence.identity(2, 128)
    ed = sample_ed_spectrum(sys, (-0.5, 0.0, 0.5))
    assert ed.members() == [0.0]
    rates, codes = ed.series()
    np.testing.assert_array_equal(rates, [-0.5, 0.0, 0.5])
    np.testing.assert_array_equal(codes, [0, 1, 0])


def test_threaded_sampling_matches(saddle):
    serial = sample_ed_spectrum(saddle, GRID, workers=1)
    threaded = sample_ed_spectrum(saddle, GRID, workers=3)
    assert serial.states == threaded.states


def test_rows(saddle):
    ed = sample_ed_spectrum(saddle, GRID)
    bd = sample_bd_spectrum(saddle, GRID)
    rows = spectrum_rows(ed, bd)
    assert [row["gamma"] for row in rows] == list(GRID)
    assert rows[1]["ed_code"] == 1
    assert len(interval_rows(ed, bd)) == 4
    with pytest.raises(ValueError):
        spectrum_rows(ed, sample_bd_spectrum(saddle, GRID[:3]))


def test_approximation_nesting():
    sys = MatrixSequence.constant(np.diag([math.exp(-1.0), math.e]), 128)
    grid = (-1.5, -1.0, 0.0, 1.0, 1.5)
    report = bd_approximation_demo(
        sys, grid, eps_list=(0.05, 0.1), n_perturbations=2, seed=4, w=WindowSpec.default(128), pipeline=False
    )
    assert report.eps_list == (0.1, 0.05)
    assert report.plan_counts == {0.05: 2, 0.1: 4}
    assert report.label == INNER_LABEL
    for small, large, bd in zip(report.unions[0.05], report.unions[0.1], report.bd.states):
        if bd == Membership.IN:
            assert small == Membership.IN
        if small == Membership.IN:
            assert large == Membership.IN
    for inner, outer in zip(report.intersections[0.05], report.intersections[0.1]):
        if inner == Membership.IN:
            assert outer == Membership.IN
    assert len(report.to_rows()) == 2 * len(grid)
    assert set(report.difference_counts()) == {0.1, 0.05}


def test_approximation_arguments_validated(saddle):
    with pytest.raises(ValueError):
        bd_approximation_demo(saddle, GRID, n_perturbations=0)
    with pytest.raises(ValueError):
        bd_approximation_demo(saddle, GRID, eps_list=(0.1, -0.1))
