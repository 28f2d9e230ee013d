"""
Finitely supported perturbation plans Q(n) and their algebra.

A plan maps time indices to d x d matrices. Plans compose by index-wise
sums, truncate by norm, and apply to a MatrixSequence as the perturbed rule
A(n) + Q(n).
"""

import logging
import math
from typing import Dict, Mapping, Optional

import numpy as np

from src.errors import NonInvertibleCoefficient, NonInvertiblePerturbed, SupportExceedsHorizon
from src.system_core import MatrixSequence, freeze

logger = logging.getLogger(__name__)


class PerturbationPlan:
    """
    Sorted map index -> matrix with its sup norm and optional decay schedule.

    Plans are immutable; every operation returns a new plan.
    """

    def __init__(
        self,
        dimension: int,
        support: Optional[Mapping[int, np.ndarray]] = None,
        decay_schedule: Optional[Mapping[int, float]] = None,
        scaling_rate: Optional[float] = None,
    ):
        self.dimension = int(dimension)
        entries = {}
        for index, matrix in sorted((support or {}).items()):
            frozen = freeze(np.atleast_2d(matrix))
            if frozen.shape != (self.dimension, self.dimension):
                raise ValueError(f"Plan entry at {index} has shape {frozen.shape}")
            if index < 0:
                raise SupportExceedsHorizon("Negative support index", index=index)
            entries[int(index)] = frozen
        self.support: Dict[int, np.ndarray] = entries
        self.decay_schedule: Optional[Dict[int, float]] = (
            {int(k): float(v) for k, v in sorted(decay_schedule.items())}
            if decay_schedule is not None
            else None
        )
        self.scaling_rate = scaling_rate
        self._norms = {index: float(np.linalg.norm(m, 2)) for index, m in entries.items()}

    @classmethod
    def zero(cls, dimension: int) -> "PerturbationPlan":
        return cls(dimension, {})

    @property
    def sup_norm(self) -> float:
        return max(self._norms.values(), default=0.0)

    @property
    def last_index(self) -> Optional[int]:
        return max(self.support, default=None)

    def norms(self) -> Dict[int, float]:
        return dict(self._norms)

    def is_zero(self) -> bool:
        return all(not np.any(m) for m in self.support.values())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PerturbationPlan):
            return NotImplemented
        return (
            self.dimension == other.dimension
            and self.support.keys() == other.support.keys()
            and all(np.array_equal(self.support[i], other.support[i]) for i in self.support)
            and self.decay_schedule == other.decay_schedule
            and self.scaling_rate == other.scaling_rate
        )

    def __repr__(self) -> str:
        return (
            f"PerturbationPlan(d={self.dimension}, support={list(self.support)[:8]}"
            f"{'...' if len(self.support) > 8 else ''}, sup_norm={self.sup_norm:.3e})"
        )


def apply_plan(sys: MatrixSequence, plan: PerturbationPlan) -> MatrixSequence:
    """
    Perturbed sequence A + Q.

    Args:
        sys: Base sequence
        plan: Plan with matching dimension and support inside [0, H]

    Returns:
        MatrixSequence of kind perturbed
    """
    if plan.dimension != sys.dimension:
        raise ValueError(f"Plan dimension {plan.dimension} does not match d={sys.dimension}")
    if not plan.support:
        return MatrixSequence.perturbed(sys, plan)
    if plan.last_index > sys.horizon:
        raise SupportExceedsHorizon(f"Plan support beyond H={sys.horizon}", index=plan.last_index)

    perturbed = MatrixSequence.perturbed(sys, plan)
    norms = plan.norms()
    for index in plan.support:
        base_singular = np.linalg.svd(sys.coefficient(index), compute_uv=False)
        # ||Q|| below the smallest singular value keeps A + Q invertible
        margin = base_singular[-1] - norms[index]
        if margin > 0 and margin / (base_singular[0] + norms[index]) >= sys.condition_floor:
            continue
        try:
            perturbed.coefficient(index)
        except NonInvertibleCoefficient as e:
            raise NonInvertiblePerturbed(
                "Perturbed coefficient fails the condition floor", index=index
            ) from e
    return perturbed


def compose_plans(first: PerturbationPlan, second: PerturbationPlan) -> PerturbationPlan:
    """Index-wise sum of two plans; overlapping schedule bounds add up."""
    if first.dimension != second.dimension:
        raise ValueError("Cannot compose plans of different dimensions")
    if not second.support and second.decay_schedule is None:
        return first
    if not first.support and first.decay_schedule is None:
        return second
    support: Dict[int, np.ndarray] = {i: np.array(m) for i, m in first.support.items()}
    for index, matrix in second.support.items():
        support[index] = support[index] + matrix if index in support else np.array(matrix)

    schedule = None
    if first.decay_schedule is not None or second.decay_schedule is not None:
        schedule = dict(first.decay_schedule or {})
        for index, bound in (second.decay_schedule or {}).items():
            schedule[index] = schedule.get(index, 0.0) + bound
    return PerturbationPlan(first.dimension, support, decay_schedule=schedule)


def truncate_plan(plan: PerturbationPlan, eps: float) -> PerturbationPlan:
    """Drop every support entry with norm above eps."""
    norms = plan.norms()
    kept = {i: m for i, m in plan.support.items() if norms[i] <= eps}
    if len(kept) == len(plan.support):
        return plan
    schedule = None
    if plan.decay_schedule is not None:
        schedule = {i: b for i, b in plan.decay_schedule.items() if i not in plan.support or i in kept}
    dropped = sorted(set(plan.support) - set(kept))
    logger.debug(f"Truncated {len(dropped)} entries above {eps:g}; last dropped index {dropped[-1]}")
    return PerturbationPlan(plan.dimension, kept, decay_schedule=schedule)


def restrict_plan(plan: PerturbationPlan, stop: int) -> PerturbationPlan:
    """Entries with index < stop; the scaling rate survives only if nothing was cut."""
    kept = {i: m for i, m in plan.support.items() if i < stop}
    if len(kept) == len(plan.support):
        return plan
    schedule = None
    if plan.decay_schedule is not None:
        schedule = {i: b for i, b in plan.decay_schedule.items() if i < stop}
    return PerturbationPlan(plan.dimension, kept, decay_schedule=schedule)


def truncated_indices(plan: PerturbationPlan, eps: float) -> list:
    """Indices whose entries truncate_plan(plan, eps) removes."""
    return sorted(i for i, value in plan.norms().items() if value > eps)


def scaling_plan(sys: MatrixSequence, delta: float) -> PerturbationPlan:
    """
    Dense plan Q(n) = A(n)(e^{-delta} - 1) on [0, H].

    Applied to `sys` it acts as the scaled rule e^{-delta} A, so every Bohl
    estimate of the perturbed system is the base estimate minus delta.
    """
    if delta == 0.0:
        return PerturbationPlan.zero(sys.dimension)
    factor = math.exp(-delta) - 1.0
    support = {n: factor * sys.coefficient(n) for n in range(sys.horizon + 1)}
    return PerturbationPlan(sys.dimension, support, scaling_rate=-float(delta))


def plan_norm_report(plan: PerturbationPlan) -> list:
    """Per-index norm and schedule slack rows."""
    rows = []
    for index, value in plan.norms().items():
        bound = (plan.decay_schedule or {}).get(index)
        rows.append(
            {
                "index": index,
                "norm": value,
                "bound": bound,
                "slack": None if bound is None else bound - value,
            }
        )
    return rows
