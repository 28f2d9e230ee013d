"""
End-to-end perturbation of a Bohl-but-not-exponential dichotomy.

Given a splitting L1 (+) L2 that passes check_bd but not check_ed, the
pipeline builds a plan of sup norm below eps after which a designated
solution has lower estimate <= tol_witness and upper estimate >= -tol_witness:

- L1 branch (upper estimate of L1 nonnegative): destroy the dichotomy on the
  L1-subsystem and lift.
- L2 branch: scale the L2-subsystem (eps/3) and build a slow solution (eps/3).
  Stop if the slow solution is already a verified witness; a slow solution
  cut short by the horizon is rejected otherwise. Else run the weak destroy
  construction (eps/3) or descend into a splitting of the perturbed subsystem.
"""

import logging
import math
from typing import List, NamedTuple, Optional

import numpy as np

from src.bohl_exponents import WindowSpec, bohl_on_subspace, lower_bohl_space, vector_estimates
from src.dichotomy import (
    Splitting,
    Witness,
    check_bd,
    check_ed,
    default_samples,
    find_no_bd_witness,
    search_splitting,
)
from src.errors import SurrogateHypothesisFailed
from src.models.certificates import BudgetEntry, PlanCertificate, StageRecord
from src.perturbations.constructions import destroy_bd_plan, slow_solution_plan
from src.perturbations.plans import (
    PerturbationPlan,
    apply_plan,
    compose_plans,
    restrict_plan,
    scaling_plan,
)
from src.settings import get_settings
from src.system_core import MatrixSequence, lyapunov_bounds, map_ordered
from src.triangular import TriangularForm, lift_perturbation, subsystem, triangularize

logger = logging.getLogger(__name__)

BUDGET_SHRINK = 1.0 - 1e-9


class PipelineResult(NamedTuple):
    plan: PerturbationPlan
    witness: Witness
    certificate: PlanCertificate


class _Branch(NamedTuple):
    """Subsystem plan, designated subsystem vector and its certificate pieces."""

    plan: PerturbationPlan
    y0: np.ndarray
    stages: List[StageRecord]
    budget: List[BudgetEntry]
    notes: List[str]


def _lift(form: TriangularForm, plan: PerturbationPlan, y0: np.ndarray):
    """Lift a subsystem plan and vector to the full system."""
    restricted = restrict_plan(plan, form.horizon)
    lifted = lift_perturbation(form, restricted)
    x0 = form.U(0)[:, : form.k] @ y0
    return lifted, x0


def _prefix(records: List[StageRecord], label: str) -> List[StageRecord]:
    return [record.model_copy(update={"kind": f"{label}:{record.kind}"}) for record in records]


def _l1_branch(
    sys: MatrixSequence, splitting: Splitting, eps: float, w: WindowSpec
) -> _Branch:
    form = triangularize(sys, list(splitting.basis1), w.horizon)
    if form.k < 2:
        raise SurrogateHypothesisFailed("L1 branch needs dim L1 >= 2", index="l1_dimension")
    sub = subsystem(form)
    budget = eps * BUDGET_SHRINK
    z0 = np.eye(form.k)[0]
    result = destroy_bd_plan(sub, z0, "strict", w, budget=budget)
    lifted, x0 = _lift(form, result.plan, result.initial)
    entry = BudgetEntry(step="L1:destroy_strict", budget=budget, achieved=lifted.sup_norm)
    return _Branch(
        lifted, x0, _prefix(result.certificate.stages, "L1"), [entry], list(result.certificate.notes)
    )


def _l2_branch(
    sys: MatrixSequence, splitting: Splitting, eps: float, w: WindowSpec, depth: int
) -> _Branch:
    form = triangularize(sys, list(splitting.basis2), w.horizon)
    branch = _l2_subsystem(subsystem(form), eps, w, depth)
    lifted, x0 = _lift(form, branch.plan, branch.y0)
    return branch._replace(plan=lifted, y0=x0)


def _l2_subsystem(sub: MatrixSequence, eps: float, w: WindowSpec, depth: int) -> _Branch:
    settings = get_settings()
    tol = settings.tol_margin
    k = sub.dimension
    third = eps / 3 * BUDGET_SHRINK
    stages: List[StageRecord] = []
    ledger: List[BudgetEntry] = []
    notes: List[str] = []

    samples = default_samples(np.eye(k))
    nu = min(map_ordered(lambda x: vector_estimates(sub, x, w)[1].reported, samples))
    if not nu > tol:
        raise SurrogateHypothesisFailed(f"Sampled lower estimates of L2 reach {nu:.4g}", index="l2_lower")
    sup_norm = lyapunov_bounds(sub)[0]
    ratio = third / sup_norm
    cap = -math.log(1.0 - ratio) if ratio < 1 else math.inf
    delta = 0.5 * min(nu, cap)

    q4 = scaling_plan(sub, delta)
    b4 = apply_plan(sub, q4)
    ledger.append(BudgetEntry(step="L2:scaling", budget=third, achieved=q4.sup_norm))
    lower4 = lower_bohl_space(b4, w).reported
    if not lower4 < -tol:
        raise SurrogateHypothesisFailed(
            f"Scaled L2 lower space estimate {lower4:.4g} >= -{tol:g}", index="l2_scaling"
        )

    slow = slow_solution_plan(b4, -lower4 / 2, settings.stage_budget, w, budget=third)
    stages.extend(_prefix(slow.certificate.stages, "L2:slow"))
    ledger.append(BudgetEntry(step="L2:slow_solution", budget=third, achieved=slow.plan.sup_norm))
    b45 = apply_plan(b4, slow.plan)
    y02 = slow.initial
    total = compose_plans(q4, slow.plan)

    branch = _Branch(total, y02, stages, ledger, notes)
    return _finish_l2(b45, branch, slow.certificate.horizon_exhausted, eps, w, depth)


def _finish_l2(
    b45: MatrixSequence, branch: _Branch, slow_exhausted: bool, eps: float, w: WindowSpec, depth: int
) -> _Branch:
    """
    Decision after the slow solution: stop on a verified witness, else weak
    destroy or descent. An incomplete slow construction without a witness fails.
    """
    settings = get_settings()
    tol = settings.tol_margin
    third = eps / 3 * BUDGET_SHRINK
    total, y02 = branch.plan, branch.y0
    stages, ledger, notes = list(branch.stages), list(branch.budget), list(branch.notes)

    if find_no_bd_witness(b45, [y02], w) is not None:
        notes.append("slow solution already witnesses the missing dichotomy")
        return _Branch(total, y02, stages, ledger, notes)
    if slow_exhausted:
        upper, lower = vector_estimates(b45, y02, w)
        raise SurrogateHypothesisFailed(
            f"Slow solution construction stopped early without a witness: "
            f"lower={lower.reported:.4g}, upper={upper.reported:.4g}",
            index="l2_slow",
        )

    samples = default_samples(np.eye(b45.dimension))
    sup_upper = max(map_ordered(lambda x: vector_estimates(b45, x, w)[0].reported, samples))
    if sup_upper <= tol:
        weak = destroy_bd_plan(b45, y02, "weak", w, budget=third)
        stages.extend(_prefix(weak.certificate.stages, "L2:weak"))
        ledger.append(BudgetEntry(step="L2:destroy_weak", budget=third, achieved=weak.plan.sup_norm))
        return _Branch(compose_plans(total, weak.plan), y02, stages, ledger, notes)

    inner = search_splitting(b45, w)
    if inner is None:
        witness = find_no_bd_witness(b45, samples, w)
        if witness is None:
            raise SurrogateHypothesisFailed(
                "Perturbed L2-subsystem has neither a splitting nor a witness", index="l2_descent"
            )
        notes.append("perturbed L2-subsystem has no sampled Bohl dichotomy")
        return _Branch(total, np.array(witness.x0), stages, ledger, notes)

    nested = no_bd_pipeline(b45, inner, eps / 3, w, depth + 1)
    stages.extend(_prefix(nested.certificate.stages, "L2:descent"))
    ledger.extend(
        BudgetEntry(step=f"L2:descent:{entry.step}", budget=entry.budget, achieved=entry.achieved)
        for entry in nested.certificate.budget
    )
    return _Branch(compose_plans(total, nested.plan), np.array(nested.witness.x0), stages, ledger, notes)


def no_bd_pipeline(
    sys: MatrixSequence,
    splitting: Splitting,
    eps: float,
    w: Optional[WindowSpec] = None,
    depth: int = 0,
) -> PipelineResult:
    """
    Perturbation of sup norm < eps destroying the Bohl dichotomy of `splitting`.

    Args:
        sys: Coefficient sequence
        splitting: Splitting passing check_bd and failing check_ed
        eps: Norm budget
        w: Window specification
        depth: Recursion depth of the descent (bounded by the dimension)

    Returns:
        PipelineResult (plan, verified witness, certificate with the budget ledger)
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if depth > sys.dimension:
        raise SurrogateHypothesisFailed("Descent deeper than the dimension", index="depth")
    settings = get_settings()
    tol = settings.tol_margin
    w = w or WindowSpec.default(sys.horizon)

    if not check_bd(sys, splitting, w=w).holds:
        raise SurrogateHypothesisFailed("Splitting is not a sampled Bohl dichotomy", index="check_bd")
    if check_ed(sys, splitting, w).holds:
        raise SurrogateHypothesisFailed("Splitting is an exponential dichotomy", index="check_ed")

    upper1 = -math.inf
    if splitting.basis1:
        upper1 = bohl_on_subspace(sys, list(splitting.basis1), w)[0].reported
    if upper1 >= -tol:
        logger.info(f"no_bd_pipeline depth {depth}: L1 branch (upper estimate of L1 {upper1:.4g})")
        branch = _l1_branch(sys, splitting, eps, w)
    else:
        logger.info(f"no_bd_pipeline depth {depth}: L2 branch")
        branch = _l2_branch(sys, splitting, eps, w, depth)

    plan = branch.plan
    perturbed = apply_plan(sys, plan)
    witness = find_no_bd_witness(perturbed, [branch.y0], w)
    certificate = PlanCertificate(
        construction=f"no_bd_pipeline:depth={depth}",
        stages=branch.stages,
        budget=branch.budget + [BudgetEntry(step="total", budget=eps, achieved=plan.sup_norm)],
        designated_x0=[float(c) for c in branch.y0],
        horizon_exhausted=False,
        notes=branch.notes,
    )
    if plan.sup_norm >= eps:
        raise SurrogateHypothesisFailed(
            f"Plan sup norm {plan.sup_norm:.4g} exceeds the budget {eps:g}", index="budget", payload=certificate
        )
    if witness is None:
        upper, lower = vector_estimates(perturbed, branch.y0, w)
        raise SurrogateHypothesisFailed(
            f"Designated solution is not a witness: lower={lower.reported:.4g}, upper={upper.reported:.4g}",
            index="witness",
            payload=certificate,
        )
    logger.info(
        f"no_bd_pipeline: sup norm {plan.sup_norm:.4g} < {eps:g}, "
        f"witness lower={witness.lower:.4g}, upper={witness.upper:.4g}"
    )
    return PipelineResult(plan, witness, certificate)
