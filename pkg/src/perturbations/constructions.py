"""
Multi-stage perturbation constructions built from rotations.

destroy_bd_plan alternates decay stages (no perturbation, a certified
contraction window of the designated solution) with forward rotations that
steer the designated solution onto a growth window. slow_solution_plan
composes backward rotations at the ends of decay windows so one solution
follows the fastest backward growth on every window. Both stop at the
horizon or the stage budget; certificates list exactly the verified windows.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from src.bohl_exponents import (
    WindowSpec,
    lower_bohl_space,
    space_estimates,
    upper_bohl_space,
    upper_bohl_vector,
    vector_estimates,
)
from src.dichotomy import default_samples
from src.errors import StageExhausted, SurrogateHypothesisFailed, ZeroVector
from src.millionshikov import backward_rotation_at, forward_rotation_at
from src.models.certificates import BudgetEntry, InequalityCheck, PlanCertificate, StageRecord
from src.perturbations.plans import (
    PerturbationPlan,
    apply_plan,
    compose_plans,
    truncate_plan,
    truncated_indices,
)
from src.perturbations.subsequences import decay_subsequence, growth_subsequence
from src.settings import get_settings
from src.system_core import (
    MatrixSequence,
    invertibility_margin,
    log_norm_path,
    map_ordered,
    sup_inf_norm_bound,
)

logger = logging.getLogger(__name__)

# Stage tolerances handed to the subsequence finders
GROWTH_STAGES = 64
BUDGET_SHRINK = 1.0 - 1e-9


class ConstructionResult(NamedTuple):
    plan: PerturbationPlan
    initial: np.ndarray
    certificate: PlanCertificate


def _unit(x) -> np.ndarray:
    vector = np.array(x, dtype=np.float64).reshape(-1)
    size = np.linalg.norm(vector)
    if size == 0.0:
        raise ZeroVector("Designated vector must be nonzero")
    return vector / size


def stage_tolerances(
    sys: MatrixSequence, budget: Optional[float], count: int
) -> Tuple[float, float, List[float]]:
    """
    Norm scale b, admissible sup norm eps' and stage tolerances eps_l = min(1/(l+1), eps'/b).

    eps' stays below both the caller's budget and half the invertibility
    margin of the coefficients, so every emitted plan keeps A + Q invertible.
    """
    b = sup_inf_norm_bound(sys)
    margin = invertibility_margin(sys)
    eps_prime = margin / 2 if budget is None else min(budget, margin / 2)
    eps_prime *= BUDGET_SHRINK
    if eps_prime <= 0:
        raise ValueError("Perturbation budget must be positive")
    return b, eps_prime, [min(1.0 / (l + 1), eps_prime / b) for l in range(count)]


def _require_pair_dimension(sys: MatrixSequence, construction: str) -> None:
    if sys.dimension < 2:
        # On one-dimensional systems Bohl and exponential dichotomy coincide
        raise SurrogateHypothesisFailed(f"{construction} needs dimension >= 2", index="dimension")


# ============================================================================
# DESTROYING A BOHL DICHOTOMY
# ============================================================================


def destroy_bd_plan(
    sys: MatrixSequence,
    z0,
    variant: str = "strict",
    w: Optional[WindowSpec] = None,
    budget: Optional[float] = None,
) -> ConstructionResult:
    """
    Decaying perturbation after which the solution through z0 has a
    nonpositive lower and a nonnegative upper exponent estimate.

    Args:
        sys: k x k coefficient sequence, k >= 2
        z0: Designated initial vector
        variant: "strict" (sampled upper vector estimates < -tol) or "weak" (<= tol)
        w: Window specification
        budget: Upper bound on the plan's sup norm

    Returns:
        ConstructionResult (plan, designated x0 = z0, certificate)
    """
    if variant not in ("strict", "weak"):
        raise ValueError(f"Unknown variant '{variant}'")
    _require_pair_dimension(sys, "destroy_bd_plan")
    z = _unit(z0)
    settings = get_settings()
    tol = settings.tol_margin
    w = w or WindowSpec.default(sys.horizon)
    horizon = w.horizon

    samples = default_samples(np.eye(sys.dimension))
    sup_upper = max(map_ordered(lambda x: upper_bohl_vector(sys, x, w).reported, samples))
    if variant == "strict" and not sup_upper < -tol:
        raise SurrogateHypothesisFailed(
            f"Sampled upper vector estimates reach {sup_upper:.4g} >= -{tol:g}", index="vector_upper"
        )
    if variant == "weak" and sup_upper > tol:
        raise SurrogateHypothesisFailed(
            f"Sampled upper vector estimates reach {sup_upper:.4g} > {tol:g}", index="vector_upper"
        )
    space_upper = upper_bohl_space(sys, w).reported
    if space_upper < -tol:
        raise SurrogateHypothesisFailed(
            f"Upper space estimate {space_upper:.4g} < -{tol:g}", index="space_upper"
        )

    alpha = -sup_upper / 2 if variant == "strict" else 0.0
    b, eps_prime, eps = stage_tolerances(sys, budget, GROWTH_STAGES)
    growth = growth_subsequence(sys, eps, w)
    logger.info(
        f"destroy_bd_plan ({variant}): alpha={alpha:.4g}, b={b:.4g}, eps'={eps_prime:.4g}, "
        f"{len(growth)} growth windows"
    )

    plan = PerturbationPlan.zero(sys.dimension)
    schedule = {}
    stages: List[StageRecord] = []
    T = 1
    state = _unit(sys.coefficient(0) @ z)
    even_done = 0
    exhausted = False
    j = 1
    while j <= settings.stage_budget:
        e_j = min(1.0 / (j + 1), eps_prime / b)
        if j % 2 == 1:
            logs, _ = log_norm_path(sys, state, T, horizon)
            rate = -alpha + e_j
            g = logs - rate * np.arange(logs.shape[0])
            prefix = np.maximum.accumulate(g)
            candidates = np.arange(j + 1, g.shape[0])
            hits = np.flatnonzero(g[candidates] <= prefix[candidates - j - 1])
            if not hits.size:
                exhausted = True
                break
            rho = int(candidates[hits[0]])
            sigma = int(np.argmax(g[: rho - j]))
            window = (T + sigma, T + rho)
            check = InequalityCheck.build_log(
                "odd_decay", rate * (rho - sigma), logs[rho] - logs[sigma], window=window
            )
            stages.append(
                StageRecord(stage=j, kind="odd", window=window, epsilon=e_j, rate=rate, checks=[check])
            )
            _, state = log_norm_path(sys, state, T, T + rho)
            logger.debug(f"Odd stage {j}: decay window {window}")
            T = T + rho
        else:
            sine = math.log(math.sin(e_j) / 2)
            choice = None
            for index, (tau, s) in enumerate(growth.pairs):
                if tau >= T + 2 and sine >= -e_j * (s - tau):
                    choice = index
                    break
            if choice is None:
                exhausted = True
                break
            tau, s = growth.pairs[choice]
            e_pair = growth.epsilons[choice]
            _, before = log_norm_path(sys, state, T, tau - 1)
            step = forward_rotation_at(sys, tau, s, before, e_j)
            logs, state = log_norm_path(sys, step.state, tau, s)
            rate = -(e_j + e_pair)
            checks = list(step.certificate.checks)
            checks.append(InequalityCheck.build_log("sine_slack", sine, -e_j * (s - tau), window=(tau, s)))
            checks.append(
                InequalityCheck.build_log("even_growth", logs[-1], rate * (s - tau), window=(tau, s))
            )
            plan = compose_plans(plan, step.plan)
            schedule[tau - 1] = e_j * b
            stages.append(
                StageRecord(
                    stage=j,
                    kind="even",
                    window=(tau, s),
                    epsilon=e_j,
                    rate=rate,
                    support=list(step.plan.support),
                    norm=step.plan.sup_norm,
                    checks=checks,
                )
            )
            logger.debug(f"Even stage {j}: rotation at {tau - 1} over ({tau}, {s}), angle={step.certificate.angle:.3e}")
            T = s
            even_done += 1
        j += 1

    plan = PerturbationPlan(sys.dimension, plan.support, decay_schedule=schedule)
    certificate = PlanCertificate(
        construction=f"destroy_bd_plan:{variant}",
        stages=stages,
        budget=[BudgetEntry(step="destroy_bd_plan", budget=eps_prime, achieved=plan.sup_norm)],
        designated_x0=[float(c) for c in z],
        horizon_exhausted=exhausted,
        notes=[f"alpha={alpha!r}", f"b={b!r}", f"sampled sup upper={sup_upper!r}"],
    )
    result = ConstructionResult(plan, z, certificate)
    if even_done == 0:
        raise StageExhausted("No growth window fits before the horizon", index=j, payload=result)
    if exhausted:
        logger.warning(f"destroy_bd_plan stopped at stage {j}: horizon {horizon} exhausted")
    return result


def reverify_destroy_certificate(
    sys: MatrixSequence, plan: PerturbationPlan, certificate: PlanCertificate, eps: float
) -> PlanCertificate:
    """
    Re-check a destroy_bd_plan certificate after truncate_plan(plan, eps).

    The designated solution is re-pinned so that it coincides with the
    original one after the last truncated index; stages whose window starts
    past that index are re-checked, earlier ones are reported as dropped.
    """
    truncated = truncate_plan(plan, eps)
    dropped = truncated_indices(plan, eps)
    cut = apply_plan(sys, truncated)
    x0 = _unit(certificate.designated_x0)
    last = -1
    if dropped:
        last = dropped[-1]
        _, pinned = log_norm_path(apply_plan(sys, plan), x0, 0, last + 1)
        _, x0 = log_norm_path(cut, pinned, last + 1, 0)

    windows = [stage.window for stage in certificate.stages if stage.window is not None]
    stop = max((end for _, end in windows), default=0)
    logs, _ = log_norm_path(cut, x0, 0, stop)

    stages: List[StageRecord] = []
    for stage in certificate.stages:
        if stage.window is None or stage.rate is None or stage.window[0] <= last:
            stages.append(stage.model_copy(update={"kind": "dropped", "checks": []}))
            continue
        start, end = stage.window
        value = logs[end] - logs[start]
        bound = stage.rate * (end - start)
        if stage.kind == "odd":
            check = InequalityCheck.build_log("odd_decay", bound, value, window=stage.window)
        else:
            check = InequalityCheck.build_log("even_growth", value, bound, window=stage.window)
        stages.append(stage.model_copy(update={"checks": [check]}))

    logger.info(f"Re-verified certificate after truncation at {eps:g}: last truncated index {last}")
    return PlanCertificate(
        construction=f"{certificate.construction}:truncated",
        stages=stages,
        budget=[BudgetEntry(step="truncate_plan", budget=eps, achieved=truncated.sup_norm)],
        designated_x0=[float(c) for c in x0],
        horizon_exhausted=certificate.horizon_exhausted,
        notes=[f"last truncated index={last}"],
    )


@dataclass(frozen=True)
class TailAgreement:
    """Estimates of B+Q against B+truncate(Q) on windows past the last truncated index."""

    last_index: int
    space_difference: float
    vector_difference: float

    @property
    def agree(self) -> bool:
        return self.space_difference <= 1e-12 and self.vector_difference <= 1e-12


def decaying_tail_agreement(
    sys: MatrixSequence,
    plan: PerturbationPlan,
    eps_prime: float,
    w: Optional[WindowSpec] = None,
    samples: Optional[Sequence] = None,
) -> TailAgreement:
    """
    Compare estimates of B+Q and B+truncate_plan(Q, eps') over windows starting
    after the last index where ||Q(n)|| > eps'.

    Vector estimates compare solutions that coincide after that index.
    """
    w = w or WindowSpec.default(sys.horizon)
    truncated = truncate_plan(plan, eps_prime)
    dropped = truncated_indices(plan, eps_prime)
    last = dropped[-1] if dropped else -1
    past = w.past(last)
    full = apply_plan(sys, plan)
    cut = apply_plan(sys, truncated)

    full_space = space_estimates(full, past)
    cut_space = space_estimates(cut, past)
    space_difference = max(
        abs(full_space[0].reported - cut_space[0].reported),
        abs(full_space[1].reported - cut_space[1].reported),
    )

    if samples is None:
        samples = default_samples(np.eye(sys.dimension), count=4)
    vector_difference = 0.0
    for x in samples:
        x_cut = _unit(x)
        if last >= 0:
            _, pinned = log_norm_path(full, x_cut, 0, last + 1)
            _, x_cut = log_norm_path(cut, pinned, last + 1, 0)
        full_vector = vector_estimates(full, x, past)
        cut_vector = vector_estimates(cut, x_cut, past)
        vector_difference = max(
            vector_difference,
            abs(full_vector[0].reported - cut_vector[0].reported),
            abs(full_vector[1].reported - cut_vector[1].reported),
        )

    logger.info(
        f"Tail agreement past index {last}: space diff={space_difference:.3e}, "
        f"vector diff={vector_difference:.3e}"
    )
    return TailAgreement(last, float(space_difference), float(vector_difference))


# ============================================================================
# SLOW SOLUTIONS
# ============================================================================


def slow_solution_plan(
    sys: MatrixSequence,
    delta: float,
    stages: int,
    w: Optional[WindowSpec] = None,
    budget: Optional[float] = None,
) -> ConstructionResult:
    """
    Stage-l plan of backward rotations at s_1..s_l making one solution decay at rate about -delta.

    Args:
        sys: k x k coefficient sequence, k >= 2, with negative lower space estimate
        delta: Target decay rate, lower space estimate <= -delta
        stages: Number of rotation stages l
        w: Window specification
        budget: Upper bound on the plan's sup norm

    Returns:
        ConstructionResult (plan supported on {s_1..s_l}, unit initial vector, certificate)
    """
    _require_pair_dimension(sys, "slow_solution_plan")
    if stages < 0:
        raise ValueError("Stage count must be nonnegative")
    tol = get_settings().tol_margin
    w = w or WindowSpec.default(sys.horizon)
    space_lower = lower_bohl_space(sys, w).reported
    if not space_lower < -tol:
        raise SurrogateHypothesisFailed(
            f"Lower space estimate {space_lower:.4g} >= -{tol:g}", index="space_lower"
        )

    unit = np.eye(sys.dimension)[0]
    if stages == 0:
        certificate = PlanCertificate(
            construction="slow_solution_plan", designated_x0=[float(c) for c in unit], notes=["zero stages"]
        )
        return ConstructionResult(PerturbationPlan.zero(sys.dimension), unit, certificate)

    b, eps_prime, eps = stage_tolerances(sys, budget, stages + 1)
    decay = decay_subsequence(sys, delta, eps, w)
    available = len(decay) - 1
    if available < 1:
        raise StageExhausted("Decay subsequence has no window past stage 0", index=1, payload=decay)
    count = min(stages, available)
    exhausted = count < stages

    current = sys
    support = {}
    schedule = {}
    records = {}
    state = unit
    for j in range(count, 0, -1):
        tau, s = decay.pairs[j]
        e_j = decay.epsilons[j]
        step = backward_rotation_at(current, tau, s, state, e_j)
        support[s] = step.plan.support.get(s, np.zeros((sys.dimension, sys.dimension)))
        schedule[s] = e_j * b
        if step.plan.support:
            current = apply_plan(current, step.plan)
        target = decay.pairs[j - 1][1] if j > 1 else 0
        logs, state = log_norm_path(current, step.state, s, target)

        gap = s - tau
        grown = logs[gap]
        checks = list(step.certificate.checks)
        checks.append(
            InequalityCheck.build_log(
                "stage_growth", grown, math.log(math.sin(e_j) / 2) + decay.log_norms[j], window=(tau, s)
            )
        )
        checks.append(
            InequalityCheck.build_log("slow_rate", (-delta + 2 * e_j) * gap, -grown, window=(tau, s))
        )
        records[j] = StageRecord(
            stage=j,
            kind="slow",
            window=(tau, s),
            epsilon=e_j,
            rate=-delta + 2 * e_j,
            support=[s],
            norm=float(np.linalg.norm(support[s], 2)),
            checks=checks,
        )
        logger.debug(f"Slow stage {j}: backward rotation at {s} over ({tau}, {s})")

    plan = PerturbationPlan(sys.dimension, support, decay_schedule=schedule)
    certificate = PlanCertificate(
        construction="slow_solution_plan",
        stages=[records[q] for q in range(1, count + 1)],
        budget=[BudgetEntry(step="slow_solution_plan", budget=eps_prime, achieved=plan.sup_norm)],
        designated_x0=[float(c) for c in state],
        horizon_exhausted=exhausted,
        notes=[f"delta={delta!r}", f"b={b!r}"],
    )
    if exhausted:
        logger.warning(f"slow_solution_plan built {count} of {stages} stages before H={w.horizon}")
    logger.info(f"slow_solution_plan: {count} stages, sup norm {plan.sup_norm:.4g}")
    return ConstructionResult(plan, state, certificate)
