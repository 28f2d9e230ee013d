"""Acceptance harness for the Bohl dichotomy toolkit (the `verify` subcommand)."""

import logging
import math
from typing import Callable, List, Optional, Tuple

import numpy as np
from rich.console import Console

from src.bohl_exponents import WindowSpec, space_estimates, upper_bohl_vector, vector_estimates
from src.dichotomy import Splitting, check_ed, find_no_bd_witness
from src.errors import BohlToolkitError, CertificateFailed
from src.instances import bd_not_ed_system, non_closedness_family, random_lyapunov
from src.millionshikov import backward_rotation_perturbation, forward_rotation_perturbation
from src.perturbations.pipeline import no_bd_pipeline
from src.perturbations.plans import PerturbationPlan, apply_plan, scaling_plan, truncate_plan
from src.serialization import plan_from_record, plan_to_record
from src.settings import get_settings, load_settings
from src.spectrum import Membership, sample_bd_spectrum, sample_ed_spectrum
from src.system_core import MatrixSequence, transition
from src.triangular import subsystem, triangularize, verify_equivalence

logger = logging.getLogger(__name__)


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise CertificateFailed(message)


# ============================================================================
# STEPS
# ============================================================================


def step_settings() -> List[str]:
    settings = load_settings()
    return [
        f"Horizon: {settings.default_horizon}",
        f"Thresholds: {settings.window_thresholds}",
        f"Tolerances: margin={settings.tol_margin:g}, witness={settings.tol_witness:g}",
    ]


def step_cocycle() -> List[str]:
    count = get_settings().verify_cocycle_systems
    worst = 0.0
    for seed in range(count):
        d = 1 + seed % 4
        sys = random_lyapunov(d, 256, seed)
        for n, k, m in ((200, 120, 7), (256, 3, 0), (64, 64, 10)):
            left = transition(sys, n, m)
            right = transition(sys, n, k) @ transition(sys, k, m)
            worst = max(worst, np.linalg.norm(left - right, 2) / max(1.0, np.linalg.norm(left, 2)))
        inverse = transition(sys, 0, 200) @ transition(sys, 200, 0)
        worst = max(worst, np.linalg.norm(inverse - np.eye(d), 2))
    _require(worst <= 1e-9, f"Cocycle residual {worst:.3e}")
    return [f"{count} systems, worst relative residual {worst:.3e}"]


def step_estimators() -> List[str]:
    c = 0.37
    sys = MatrixSequence.constant([[math.exp(c)]], 512)
    estimate = upper_bohl_vector(sys, [1.0])
    exact = math.log(math.exp(c))
    _require(all(v == exact for v in estimate.values.values()), "Scalar estimate is not exact")
    base = random_lyapunov(2, 256, 7)
    shifted = MatrixSequence.scaled(base, 0.25)
    upper, _ = space_estimates(base)
    upper_shifted, _ = space_estimates(shifted)
    _require(abs(upper_shifted.reported - upper.reported - 0.25) <= 1e-12, "Scaling shift is not exact")
    return [f"Scalar estimate {exact!r} at every threshold; scaling shift exact"]


def step_rotations() -> List[str]:
    rng = np.random.default_rng(11)
    checked = 0
    for seed in range(get_settings().verify_rotation_seeds):
        sys = random_lyapunov(2 + seed % 2, 64, 100 + seed, spread=0.5)
        x0 = rng.standard_normal(sys.dimension)
        eps = float(rng.uniform(0.05, 1.0))
        for rotate in (forward_rotation_perturbation, backward_rotation_perturbation):
            plan, certificate = rotate(sys, 10, 40, x0, eps)
            _require(certificate.holds, f"{certificate.direction} rotation certificate fails (seed {seed})")
            checked += 1
    return [f"{checked} rotation certificates hold"]


def step_triangular() -> List[str]:
    sys = MatrixSequence.constant([[1.0, 1.0], [0.0, 1.0]], 64)
    form = triangularize(sys, [[0.0, 1.0]])
    value = float(subsystem(form).coefficient(0)[0, 0])
    _require(abs(value - math.sqrt(2.0)) <= 1e-12, f"A_L(0) = {value!r}")
    random = random_lyapunov(3, 256, 5)
    report = verify_equivalence(random, triangularize(random, [[1.0, 0.0, 0.0]]))
    _require(report.passed, f"Equivalence residual {report.equivalence_residual:.3e}")
    return [f"A_L(0) = {value:.15f}", f"Equivalence residual {report.equivalence_residual:.3e}"]


def step_non_closedness() -> List[str]:
    lines = []
    for k in (1, 2, 4, 8):
        sys = non_closedness_family(k, 2, 1024)
        verdict = check_ed(sys, Splitting([], list(np.eye(2))))
        _require(verdict.holds and abs(verdict.alpha - 1.0 / k) <= 1e-3, f"k={k}: alpha {verdict.alpha:.6g}")
        lines.append(f"k={k}: alpha={verdict.alpha:.6g}")
    witness = find_no_bd_witness(non_closedness_family(None, 2, 1024), [np.eye(2)[0]])
    _require(witness is not None and witness.lower == 0.0 and witness.upper == 0.0, "Identity limit has no witness")
    lines.append("Identity limit: witness with both estimates 0")
    return lines


def step_plans() -> List[str]:
    sys = random_lyapunov(2, 128, 3)
    plan = PerturbationPlan(2, {5: 0.1 * np.eye(2), 9: 0.01 * np.eye(2)})
    once = truncate_plan(plan, 0.05)
    _require(truncate_plan(once, 0.05) == once, "Truncation is not idempotent")
    _require(plan_from_record(plan_to_record(plan)) == plan, "Plan does not round-trip")
    shifted = apply_plan(sys, scaling_plan(sys, 0.3))
    base_upper, _ = vector_estimates(sys, [1.0, 0.0])
    new_upper, _ = vector_estimates(shifted, [1.0, 0.0])
    _require(abs(new_upper.reported - base_upper.reported + 0.3) <= 1e-12, "Scaling plan shift is not exact")
    return ["Truncation idempotent, round-trip exact, scaling shift exact"]


def step_pipeline() -> List[str]:
    sys, splitting = bd_not_ed_system(2048)
    w = WindowSpec.default(2048)
    result = no_bd_pipeline(sys, splitting, 0.2, w)
    _require(result.plan.sup_norm < 0.2, f"Plan sup norm {result.plan.sup_norm:.4g}")
    _require(result.certificate.holds, "Pipeline certificate has failing checks")
    return [
        f"sup norm {result.plan.sup_norm:.4g} < 0.2",
        f"witness lower={result.witness.lower:.4g}, upper={result.witness.upper:.4g}",
    ]


def step_spectrum() -> List[str]:
    sys = MatrixSequence.constant(np.diag([math.exp(-1.0), math.e]), 256)
    grid = np.round(np.arange(-2.0, 2.0001, 0.25), 12)
    ed = sample_ed_spectrum(sys, grid)
    bd = sample_bd_spectrum(sys, grid)
    for gamma, e, b in zip(ed.grid, ed.states, bd.states):
        if e != Membership.OUT:
            _require(min(abs(gamma + 1.0), abs(gamma - 1.0)) <= 0.25, f"ED point {gamma} far from the exponents")
        if b == Membership.IN:
            _require(e == Membership.IN, f"BD point {gamma} outside the ED sample")
    return [f"ED intervals {ed.intervals}", f"BD intervals {bd.intervals}"]


STEPS: List[Tuple[str, Callable[[], List[str]]]] = [
    ("Loading settings", step_settings),
    ("Cocycle and inverse identities", step_cocycle),
    ("Bohl estimators", step_estimators),
    ("Rotation certificates", step_rotations),
    ("Triangularization", step_triangular),
    ("Non-closedness family", step_non_closedness),
    ("Perturbation plans", step_plans),
    ("No-Bohl-dichotomy pipeline", step_pipeline),
    ("Sampled spectra", step_spectrum),
]


# ============================================================================
# HARNESS
# ============================================================================


def run_verification(console: Optional[Console] = None) -> bool:
    """
    Run every step and report [OK]/[FAIL] lines.

    Returns:
        True if every step passed, False otherwise
    """
    console = console or Console()

    def say(text: str = "") -> None:
        console.print(text, markup=False, highlight=False)

    say("=" * 60)
    say("Bohl Dichotomy Toolkit - Verification")
    say("=" * 60)
    say()

    failures = 0
    total = len(STEPS)
    for i, (title, step) in enumerate(STEPS, start=1):
        say(f"[{i}/{total}] {title}...")
        try:
            for line in step():
                say(f"  {line}")
            say(f"[OK] {title}")
        except (BohlToolkitError, ValueError) as e:
            failures += 1
            logger.error(f"Verification step '{title}' failed: {e}")
            say(f"[FAIL] {title}: {e}")
        say()

    say("=" * 60)
    if failures:
        say(f"[FAIL] {failures} OF {total} STEPS FAILED")
    else:
        say("[OK] ALL VERIFICATION STEPS PASSED")
    say("=" * 60)
    return failures == 0
