"""
Sampled exponential and Bohl dichotomy spectra.

A rate gamma belongs to a spectrum when e^{-gamma} A lacks the respective
dichotomy. Every grid point is judged on MatrixSequence.scaled(sys, -gamma)
with one WindowSpec, so estimates are shared through the scaling root and
shift exactly with gamma.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.bohl_exponents import WindowSpec
from src.dichotomy import (
    Splitting,
    VerdictState,
    check_bd,
    check_ed,
    default_samples,
    find_no_bd_witness,
    flag_splittings,
)
from src.errors import SurrogateError
from src.perturbations.pipeline import no_bd_pipeline
from src.perturbations.plans import PerturbationPlan, apply_plan
from src.settings import get_settings
from src.system_core import MatrixSequence, invertibility_margin, map_ordered

logger = logging.getLogger(__name__)

INNER_LABEL = "sampled inner approximation"


class Membership(str, Enum):
    IN = "in"
    OUT = "out"
    INCONCLUSIVE = "inconclusive"

    @property
    def code(self) -> int:
        return {"in": 1, "out": 0, "inconclusive": -1}[self.value]


# ============================================================================
# SAMPLES
# ============================================================================


def default_grid() -> np.ndarray:
    """Rate grid from the settings (grid_start..grid_stop, grid_step)."""
    settings = get_settings()
    count = int(round((settings.grid_stop - settings.grid_start) / settings.grid_step)) + 1
    return np.round(np.linspace(settings.grid_start, settings.grid_stop, count), 12)


def _check_grid(grid: Optional[Sequence[float]]) -> Tuple[float, ...]:
    values = tuple(float(g) for g in (default_grid() if grid is None else grid))
    if not values:
        raise ValueError("Rate grid must be nonempty")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ValueError("Rate grid must be strictly increasing")
    return values


def merge_intervals(grid: Sequence[float], states: Sequence[Membership], target: Membership) -> List[Tuple[float, float]]:
    """Maximal runs of consecutive grid points in the target state as (first, last) pairs."""
    intervals: List[Tuple[float, float]] = []
    start: Optional[float] = None
    previous: Optional[float] = None
    for gamma, state in zip(grid, states):
        if state == target:
            start = gamma if start is None else start
            previous = gamma
        elif start is not None:
            intervals.append((start, previous))
            start = None
    if start is not None:
        intervals.append((start, previous))
    return intervals


@dataclass(frozen=True)
class SpectrumSample:
    """Per-rate membership of one sampled spectrum."""

    kind: str
    grid: Tuple[float, ...]
    states: Tuple[Membership, ...]

    @property
    def intervals(self) -> List[Tuple[float, float]]:
        return merge_intervals(self.grid, self.states, Membership.IN)

    @property
    def inconclusive(self) -> List[float]:
        return [g for g, s in zip(self.grid, self.states) if s == Membership.INCONCLUSIVE]

    def members(self) -> List[float]:
        return [g for g, s in zip(self.grid, self.states) if s == Membership.IN]

    def state_at(self, gamma: float) -> Membership:
        return self.states[self.grid.index(float(gamma))]

    def series(self) -> Tuple[np.ndarray, np.ndarray]:
        """Plot data: rates and state codes (1 in, 0 out, -1 inconclusive)."""
        return np.array(self.grid), np.array([s.code for s in self.states])


def _membership(
    scaled: MatrixSequence,
    w: WindowSpec,
    test,
) -> Membership:
    """
    Witness first, then the best verdict over the flag splittings.

    A witness (both estimates within tol_margin of 0) puts the rate in the
    spectrum; a splitting whose verdict holds puts it in the resolvent.
    """
    tol = get_settings().tol_margin
    directions = default_samples(np.eye(scaled.dimension))
    if find_no_bd_witness(scaled, directions, w, tol=tol) is not None:
        return Membership.IN
    states = [test(scaled, candidate).state for candidate in flag_splittings(scaled, w)]
    if VerdictState.HOLDS in states:
        return Membership.OUT
    if VerdictState.INCONCLUSIVE in states:
        return Membership.INCONCLUSIVE
    return Membership.IN


def _sample(
    sys: MatrixSequence,
    kind: str,
    grid: Optional[Sequence[float]],
    w: Optional[WindowSpec],
    workers: Optional[int],
) -> SpectrumSample:
    values = _check_grid(grid)
    w = w or WindowSpec.default(sys.horizon)
    if kind == "ED":
        test = lambda scaled, splitting: check_ed(scaled, splitting, w)  # noqa: E731
    else:
        test = lambda scaled, splitting: check_bd(scaled, splitting, w=w)  # noqa: E731

    states = map_ordered(
        lambda gamma: _membership(MatrixSequence.scaled(sys, -gamma), w, test), list(values), workers
    )
    sample = SpectrumSample(kind, values, tuple(states))
    logger.info(f"Sampled {kind} spectrum over {len(values)} rates: intervals {sample.intervals}")
    return sample


def sample_ed_spectrum(
    sys: MatrixSequence,
    grid: Optional[Sequence[float]] = None,
    w: Optional[WindowSpec] = None,
    workers: Optional[int] = None,
) -> SpectrumSample:
    """
    Sampled exponential dichotomy spectrum.

    Args:
        sys: Coefficient sequence
        grid: Strictly increasing rates (settings grid if omitted)
        w: Window specification shared by every rate
        workers: Thread count for the per-rate loop

    Returns:
        SpectrumSample of kind "ED"
    """
    return _sample(sys, "ED", grid, w, workers)


def sample_bd_spectrum(
    sys: MatrixSequence,
    grid: Optional[Sequence[float]] = None,
    w: Optional[WindowSpec] = None,
    workers: Optional[int] = None,
) -> SpectrumSample:
    """Sampled Bohl dichotomy spectrum; "in" points are a subset of the ED sample's."""
    return _sample(sys, "BD", grid, w, workers)


def spectrum_rows(ed: SpectrumSample, bd: SpectrumSample) -> List[dict]:
    """CSV rows (gamma, ed_state, bd_state, codes) for matching grids."""
    if ed.grid != bd.grid:
        raise ValueError("ED and BD samples use different grids")
    return [
        {
            "gamma": gamma,
            "ed_state": e.value,
            "bd_state": b.value,
            "ed_code": e.code,
            "bd_code": b.code,
        }
        for gamma, e, b in zip(ed.grid, ed.states, bd.states)
    ]


def interval_rows(*samples: SpectrumSample) -> List[dict]:
    rows = []
    for sample in samples:
        rows.extend(
            {"spectrum": sample.kind, "first": first, "last": last} for first, last in sample.intervals
        )
    return rows


# ============================================================================
# APPROXIMATION BY PERTURBED BOHL SPECTRA
# ============================================================================


def _union(samples: Sequence[Tuple[Membership, ...]]) -> Tuple[Membership, ...]:
    merged = []
    for column in zip(*samples):
        if Membership.IN in column:
            merged.append(Membership.IN)
        elif Membership.INCONCLUSIVE in column:
            merged.append(Membership.INCONCLUSIVE)
        else:
            merged.append(Membership.OUT)
    return tuple(merged)


def _intersection(first: Tuple[Membership, ...], second: Tuple[Membership, ...]) -> Tuple[Membership, ...]:
    merged = []
    for a, b in zip(first, second):
        if Membership.OUT in (a, b):
            merged.append(Membership.OUT)
        elif Membership.INCONCLUSIVE in (a, b):
            merged.append(Membership.INCONCLUSIVE)
        else:
            merged.append(Membership.IN)
    return tuple(merged)


def _difference_count(first: Sequence[Membership], second: Sequence[Membership]) -> int:
    """Points in first but out of second; inconclusive points on either side are excluded."""
    return sum(1 for a, b in zip(first, second) if a == Membership.IN and b == Membership.OUT)


def _random_plan(
    rng: np.random.Generator, dimension: int, horizon: int, cap: float, multi: bool
) -> PerturbationPlan:
    count = int(rng.integers(2, 6)) if multi else 1
    indices = sorted(set(int(i) for i in rng.integers(0, horizon + 1, size=count)))
    support = {}
    for index in indices:
        g = rng.standard_normal((dimension, dimension))
        scale = cap * float(rng.uniform(0.5, 1.0)) * (1.0 - 1e-9)
        support[index] = scale * g / np.linalg.norm(g, 2)
    return PerturbationPlan(dimension, support)


def _pipeline_plans(
    sys: MatrixSequence,
    gaps: Sequence[float],
    eps: float,
    w: WindowSpec,
    notes: List[str],
) -> List[PerturbationPlan]:
    """Plans of norm < eps that remove the Bohl dichotomy of e^{-gamma} A at the given rates."""
    plans = []
    for gamma in gaps:
        scaled = MatrixSequence.scaled(sys, -gamma)
        splitting: Optional[Splitting] = next(
            (s for s in flag_splittings(scaled, w) if check_bd(scaled, s, w=w).holds), None
        )
        if splitting is None:
            notes.append(f"gamma={gamma:g}: no sampled Bohl splitting for the pipeline")
            continue
        # A plan P for e^{-gamma} A is the plan e^{gamma} P for A
        factor = float(np.exp(gamma))
        try:
            result = no_bd_pipeline(scaled, splitting, eps / factor, w)
        except SurrogateError as e:
            notes.append(f"gamma={gamma:g}, eps={eps:g}: pipeline stopped with {e.name}")
            continue
        plans.append(
            PerturbationPlan(
                sys.dimension, {n: factor * m for n, m in result.plan.support.items()}
            )
        )
    return plans


@dataclass
class ApproximationReport:
    """Nested unions of perturbed Bohl spectra against the exponential one."""

    grid: Tuple[float, ...]
    ed: SpectrumSample
    bd: SpectrumSample
    eps_list: Tuple[float, ...]
    unions: Dict[float, Tuple[Membership, ...]] = field(default_factory=dict)
    intersections: Dict[float, Tuple[Membership, ...]] = field(default_factory=dict)
    plan_counts: Dict[float, int] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)
    label: str = INNER_LABEL

    def members(self, states: Tuple[Membership, ...]) -> List[float]:
        return [g for g, s in zip(self.grid, states) if s == Membership.IN]

    def difference_counts(self) -> Dict[float, Dict[str, int]]:
        """Per eps: points of the intersection outside the ED sample and vice versa."""
        return {
            eps: {
                "intersection_minus_ed": _difference_count(self.intersections[eps], self.ed.states),
                "ed_minus_intersection": _difference_count(self.ed.states, self.intersections[eps]),
                "union_minus_ed": _difference_count(self.unions[eps], self.ed.states),
            }
            for eps in self.eps_list
        }

    def to_rows(self) -> List[dict]:
        rows = []
        counts = self.difference_counts()
        for eps in self.eps_list:
            for gamma, union, inter in zip(self.grid, self.unions[eps], self.intersections[eps]):
                rows.append(
                    {
                        "label": self.label,
                        "eps": eps,
                        "gamma": gamma,
                        "union_state": union.value,
                        "intersection_state": inter.value,
                        "plans": self.plan_counts[eps],
                        **counts[eps],
                    }
                )
        return rows


def bd_approximation_demo(
    sys: MatrixSequence,
    grid: Optional[Sequence[float]] = None,
    eps_list: Sequence[float] = (0.2, 0.1, 0.05),
    n_perturbations: int = 4,
    seed: Optional[int] = None,
    w: Optional[WindowSpec] = None,
    pipeline: bool = True,
    workers: Optional[int] = None,
) -> ApproximationReport:
    """
    Sampled version of "intersection over eps of the union over ||Q|| < eps of
    the Bohl spectra of A + Q equals the exponential spectrum of A".

    Plan sets are nested: the set for a smaller eps is reused inside the set
    of every larger eps, so unions grow with eps. Each level adds
    n_perturbations seeded random plans (single and multi support) and, when
    pipeline is set, the pipeline plans at the rates where the unperturbed
    system has a Bohl but no exponential dichotomy.

    Returns:
        ApproximationReport with unions, cumulative intersections (largest
        eps first) and per-eps difference counts
    """
    if n_perturbations < 1:
        raise ValueError("n_perturbations must be at least 1")
    values = _check_grid(grid)
    levels = sorted({float(e) for e in eps_list})
    if not levels or levels[0] <= 0:
        raise ValueError("eps_list must hold positive values")
    seed = get_settings().default_seed if seed is None else seed
    w = w or WindowSpec.default(sys.horizon)
    rng = np.random.default_rng(seed)

    ed = sample_ed_spectrum(sys, values, w, workers)
    bd = sample_bd_spectrum(sys, values, w, workers)
    gaps = [
        g for g, e, b in zip(values, ed.states, bd.states) if e == Membership.IN and b == Membership.OUT
    ]
    margin = invertibility_margin(sys)
    report = ApproximationReport(values, ed, bd, tuple(sorted(levels, reverse=True)))

    plans: List[PerturbationPlan] = []
    union = bd.states
    for eps in levels:
        cap = min(eps, 0.5 * margin)
        fresh = [
            _random_plan(rng, sys.dimension, w.horizon, cap, multi=bool(i % 2))
            for i in range(n_perturbations)
        ]
        if pipeline and gaps:
            fresh.extend(_pipeline_plans(sys, gaps, eps, w, report.notes))
        plans.extend(fresh)
        perturbed = map_ordered(
            lambda plan: sample_bd_spectrum(apply_plan(sys, plan), values, w).states, fresh, workers
        )
        union = _union([union] + perturbed)
        report.unions[eps] = union
        report.plan_counts[eps] = len(plans)
        logger.info(f"eps={eps:g}: {len(plans)} plans, union members {report.members(union)}")

    current: Optional[Tuple[Membership, ...]] = None
    for eps in report.eps_list:
        current = report.unions[eps] if current is None else _intersection(current, report.unions[eps])
        report.intersections[eps] = current
    return report
