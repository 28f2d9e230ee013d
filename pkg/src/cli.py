#!/usr/bin/env python3
"""Scenario-driven command line interface for the Bohl dichotomy toolkit."""

import argparse
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from dotenv import load_dotenv
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from src.bohl_exponents import WindowSpec, estimates_to_rows, space_estimates, vector_estimates
from src.dichotomy import (
    Splitting,
    check_bd,
    check_ed,
    default_samples,
    find_no_bd_witness,
    search_splitting,
    verdict_rows,
)
from src.errors import BohlToolkitError, ScenarioInvalid
from src.instances import bd_not_ed_system
from src.millionshikov import backward_rotation_perturbation, forward_rotation_perturbation
from src.models import PlanCertificate, RunSummary, Scenario
from src.perturbations.constructions import destroy_bd_plan, slow_solution_plan
from src.perturbations.pipeline import no_bd_pipeline
from src.perturbations.plans import plan_norm_report, scaling_plan
from src.serialization import (
    decode_vector,
    estimate_to_record,
    load_scenario,
    plan_to_record,
    system_from_spec,
    verdict_to_record,
    witness_to_record,
    write_csv,
    write_json,
)
from src.settings import get_settings
from src.spectrum import bd_approximation_demo, interval_rows, sample_bd_spectrum, sample_ed_spectrum, spectrum_rows
from src.system_core import MatrixSequence, log_norm_path
from src.triangular import form_rows, subsystem, triangularize, verify_equivalence

# Load environment variables
load_dotenv()

console = Console()
logger = logging.getLogger(__name__)

COMMANDS = ("simulate", "exponents", "dichotomy", "triangularize", "perturb", "spectrum", "verify")


@dataclass
class TaskOutcome:
    """Artifacts and summary pieces produced by one task."""

    tables: Dict[str, List[dict]] = field(default_factory=dict)
    documents: Dict[str, Any] = field(default_factory=dict)
    summary: Dict[str, Any] = field(default_factory=dict)
    lines: List[str] = field(default_factory=list)
    status: int = 0


# ============================================================================
# HELPERS
# ============================================================================


def _window(scenario: Scenario, system: MatrixSequence) -> WindowSpec:
    return WindowSpec.default(system.horizon, scenario.params.thresholds)


def _x0(scenario: Scenario, system: MatrixSequence) -> np.ndarray:
    if scenario.params.x0 is not None:
        return decode_vector(scenario.params.x0)
    return np.eye(system.dimension)[0]


def _splitting(scenario: Scenario, system: MatrixSequence, w: WindowSpec) -> Optional[Splitting]:
    """Splitting from the scenario, the bd_not_ed instance, or the heuristic search."""
    params = scenario.params
    if params.basis1 or params.basis2:
        return Splitting(
            [decode_vector(v) for v in params.basis1], [decode_vector(v) for v in params.basis2]
        )
    if scenario.system.kind == "bd_not_ed" and not scenario.system.rate:
        return bd_not_ed_system(system.horizon, **scenario.system.parameters)[1]
    return search_splitting(system, w)


# ============================================================================
# TASKS
# ============================================================================


def run_simulate(scenario: Scenario, system: MatrixSequence) -> TaskOutcome:
    x0 = _x0(scenario, system)
    logs, unit = log_norm_path(system, x0, 0, system.horizon)
    scale = float(np.linalg.norm(x0))
    rows = [
        {"n": n, "log_norm": float(value) + np.log(scale), "norm": scale * float(np.exp(value))}
        for n, value in enumerate(logs)
    ]
    outcome = TaskOutcome(tables={"norms": rows})
    outcome.lines.append(f"Simulated {system.horizon} steps; ln||x(H)|| = {rows[-1]['log_norm']:.6g}")
    outcome.summary["notes"] = [f"final direction {[float(c) for c in unit]}"]
    return outcome


def run_exponents(scenario: Scenario, system: MatrixSequence) -> TaskOutcome:
    w = _window(scenario, system)
    upper, lower = space_estimates(system, w)
    labelled = [("space", upper), ("space", lower)]
    vectors = [decode_vector(v) for v in scenario.params.vectors] or [_x0(scenario, system)]
    for i, x in enumerate(vectors):
        vu, vl = vector_estimates(system, x, w)
        labelled.extend([(f"vector{i}", vu), (f"vector{i}", vl)])
    outcome = TaskOutcome(tables={"estimates": estimates_to_rows(labelled)})
    outcome.summary["estimates"] = [estimate_to_record(e, target) for target, e in labelled]
    outcome.lines.extend(
        f"{target:>8} {e.kind.value:>5}: {e.reported:.6g} (window {e.achieving_window})"
        for target, e in labelled
    )
    return outcome


def run_dichotomy(scenario: Scenario, system: MatrixSequence) -> TaskOutcome:
    w = _window(scenario, system)
    splitting = _splitting(scenario, system, w)
    outcome = TaskOutcome()
    if splitting is None:
        witness = find_no_bd_witness(system, default_samples(np.eye(system.dimension)), w)
        outcome.lines.append("No splitting found")
        if witness is not None:
            outcome.summary["witness"] = witness_to_record(witness)
            outcome.lines.append(f"No-BD witness: lower={witness.lower:.4g}, upper={witness.upper:.4g}")
        outcome.tables["verdicts"] = []
        return outcome

    ed = check_ed(system, splitting, w)
    bd = check_bd(system, splitting, w=w)
    outcome.tables["verdicts"] = verdict_rows(scenario.name, ed, bd)
    outcome.documents["splitting"] = splitting.to_record()
    outcome.summary["verdicts"] = [verdict_to_record(ed), verdict_to_record(bd)]
    outcome.lines.append(f"ED: {ed.state.value} (alpha={ed.alpha:.4g}, K={ed.K:.4g})")
    outcome.lines.append(f"BD: {bd.state.value} (alpha={bd.alpha:.4g})")
    return outcome


def run_triangularize(scenario: Scenario, system: MatrixSequence) -> TaskOutcome:
    w = _window(scenario, system)
    basis = [decode_vector(v) for v in scenario.params.basis]
    form = triangularize(system, basis, system.horizon)
    report = verify_equivalence(system, form)
    upper, lower = space_estimates(subsystem(form), w)
    labelled = [("subsystem", upper), ("subsystem", lower)]
    outcome = TaskOutcome(
        tables={"triangular": form_rows(form), "subsystem_estimates": estimates_to_rows(labelled)}
    )
    outcome.summary["estimates"] = [estimate_to_record(e, target) for target, e in labelled]
    outcome.lines.append(
        f"k={form.k}, equivalence residual {report.equivalence_residual:.3e}, "
        f"invariance residual {report.invariance_residual:.3e}"
    )
    if not report.passed:
        outcome.status = 4
        outcome.lines.append("Equivalence check failed")
    return outcome


def _plan_outcome(plan, certificate: Optional[PlanCertificate]) -> TaskOutcome:
    outcome = TaskOutcome(tables={"plan_norms": plan_norm_report(plan)})
    outcome.documents["plan"] = plan_to_record(plan)
    outcome.summary["plan"] = plan_to_record(plan)
    if certificate is not None:
        outcome.documents["certificate"] = certificate
        outcome.summary["certificate"] = certificate
    outcome.lines.append(f"Plan: {len(plan.support)} entries, sup norm {plan.sup_norm:.6g}")
    return outcome


def run_perturb(scenario: Scenario, system: MatrixSequence) -> TaskOutcome:
    params = scenario.params
    w = _window(scenario, system)
    construction = params.construction
    if construction == "pipeline":
        splitting = _splitting(scenario, system, w)
        if splitting is None:
            raise ScenarioInvalid("The pipeline needs a Bohl dichotomy splitting; none was given or found")
        result = no_bd_pipeline(system, splitting, params.eps, w)
        outcome = _plan_outcome(result.plan, result.certificate)
        outcome.summary["witness"] = witness_to_record(result.witness)
        outcome.lines.append(
            f"Witness: lower={result.witness.lower:.4g}, upper={result.witness.upper:.4g}"
        )
        return outcome
    if construction in ("destroy_strict", "destroy_weak"):
        variant = construction.split("_")[1]
        result = destroy_bd_plan(system, _x0(scenario, system), variant, w, budget=params.eps)
        return _plan_outcome(result.plan, result.certificate)
    if construction == "slow_solution":
        if params.delta is None:
            raise ScenarioInvalid("slow_solution needs delta")
        stages = get_settings().stage_budget if params.stages is None else params.stages
        result = slow_solution_plan(system, params.delta, stages, w, budget=params.eps)
        return _plan_outcome(result.plan, result.certificate)
    if construction == "scaling":
        if params.delta is None:
            raise ScenarioInvalid("scaling needs delta")
        return _plan_outcome(scaling_plan(system, params.delta), None)

    if params.k is None or params.m is None:
        raise ScenarioInvalid(f"{construction} needs k and m")
    rotate = forward_rotation_perturbation if construction == "forward_rotation" else backward_rotation_perturbation
    plan, certificate = rotate(system, params.k, params.m, _x0(scenario, system), params.eps)
    outcome = _plan_outcome(plan, None)
    outcome.documents["rotation_certificate"] = certificate
    outcome.lines.append(f"Rotation certificate {'holds' if certificate.holds else 'FAILS'}")
    if not certificate.holds:
        outcome.status = 4
    return outcome


def run_spectrum(scenario: Scenario, system: MatrixSequence) -> TaskOutcome:
    params = scenario.params
    settings = get_settings()
    w = _window(scenario, system)
    start = settings.grid_start if params.grid_start is None else params.grid_start
    stop = settings.grid_stop if params.grid_stop is None else params.grid_stop
    step = settings.grid_step if params.grid_step is None else params.grid_step
    grid = np.round(np.linspace(start, stop, int(round((stop - start) / step)) + 1), 12)

    ed = sample_ed_spectrum(system, grid, w)
    bd = sample_bd_spectrum(system, grid, w)
    outcome = TaskOutcome(tables={"spectrum": spectrum_rows(ed, bd), "intervals": interval_rows(ed, bd)})
    outcome.lines.append(f"Sampled ED spectrum: {ed.intervals}")
    outcome.lines.append(f"Sampled BD spectrum: {bd.intervals}")
    if params.approximation:
        report = bd_approximation_demo(system, grid, params.eps_list, params.n_perturbations, params.seed, w)
        outcome.tables["approximation"] = report.to_rows()
        for eps, counts in report.difference_counts().items():
            outcome.lines.append(f"{report.label}, eps={eps:g}: {counts}")
        outcome.summary["notes"] = list(report.notes)
    return outcome


def run_verify(scenario: Optional[Scenario], system: Optional[MatrixSequence]) -> TaskOutcome:
    from src.verify import run_verification

    passed = run_verification(console)
    outcome = TaskOutcome(status=0 if passed else 1)
    outcome.lines.append("All verification steps passed" if passed else "Verification failed")
    return outcome


TASKS: Dict[str, Callable[..., TaskOutcome]] = {
    "simulate": run_simulate,
    "exponents": run_exponents,
    "dichotomy": run_dichotomy,
    "triangularize": run_triangularize,
    "perturb": run_perturb,
    "spectrum": run_spectrum,
    "verify": run_verify,
}


# ============================================================================
# SCENARIO RUNNER
# ============================================================================


def _write_artifacts(outcome: TaskOutcome, out_dir: Path, prefix: str) -> List[str]:
    written = []
    for name, rows in outcome.tables.items():
        written.append(write_csv(out_dir / f"{prefix}_{name}.csv", rows).name)
    for name, document in outcome.documents.items():
        written.append(write_json(out_dir / f"{prefix}_{name}.json", document).name)
    return written


def _failure_certificate(error: BohlToolkitError) -> Optional[PlanCertificate]:
    payload = error.payload
    if isinstance(payload, PlanCertificate):
        return payload
    certificate = getattr(payload, "certificate", None)
    return certificate if isinstance(certificate, PlanCertificate) else None


def run_scenario(
    scenario: Optional[Scenario],
    task: Optional[str] = None,
    out_dir: Optional[Path] = None,
    horizon: Optional[int] = None,
) -> int:
    """
    Execute a scenario and write its artifacts.

    Args:
        scenario: Validated scenario (optional for verify)
        task: Subcommand; overrides the scenario task
        out_dir: Output directory (scenario output, then BOHL_OUTPUT_DIR)
        horizon: Horizon override

    Returns:
        Exit status: 0 success, 2 input, 3 surrogate hypothesis, 4 numeric failure
    """
    task = task or (scenario.task if scenario is not None else "verify")
    if scenario is not None and scenario.task != task:
        logger.warning(f"Scenario task '{scenario.task}' overridden by subcommand '{task}'")
    name = scenario.name if scenario is not None else "verify"
    prefix = scenario.output.prefix if scenario is not None else "verify"
    if out_dir is None:
        configured = scenario.output.directory if scenario is not None else None
        out_dir = Path(configured or get_settings().output_dir)

    summary = RunSummary(scenario=name, task=task, status=0)
    try:
        system = None
        if scenario is not None and scenario.system is not None:
            system = system_from_spec(scenario.system, horizon)
        if system is None and task != "verify":
            raise ScenarioInvalid(f"Task {task} needs a system")
        logger.info(f"Running task {task} for scenario {name}")
        outcome = TASKS[task](scenario, system)
    except BohlToolkitError as e:
        logger.error(f"{e.name}: {e}")
        console.print(
            Panel(
                f"[bold]{e.name}[/bold]\n{e}\n[dim]index: {e.index}[/dim]",
                title=f"Failed (exit {e.exit_code})",
                border_style="red",
            )
        )
        summary.status = e.exit_code
        summary.error = e.to_record()
        certificate = _failure_certificate(e)
        if certificate is not None:
            summary.certificate = certificate
            summary.artifacts.append(write_json(out_dir / f"{prefix}_failed_certificate.json", certificate).name)
        write_json(out_dir / f"{prefix}_summary.json", summary)
        return e.exit_code
    except ValueError as e:
        logger.error(f"Invalid input: {e}")
        console.print(Panel(str(e), title="Failed (exit 2)", border_style="red"))
        summary.status = 2
        summary.error = {"error": type(e).__name__, "index": None, "message": str(e), "exit_code": 2}
        write_json(out_dir / f"{prefix}_summary.json", summary)
        return 2

    summary.status = outcome.status
    summary.artifacts = _write_artifacts(outcome, out_dir, prefix)
    for key, value in outcome.summary.items():
        setattr(summary, key, value)
    write_json(out_dir / f"{prefix}_summary.json", summary)
    _display(task, outcome, out_dir)
    return outcome.status


def _display(task: str, outcome: TaskOutcome, out_dir: Path) -> None:
    table = Table(title=f"{task} results", show_header=False, border_style="blue")
    for line in outcome.lines:
        table.add_row(line)
    console.print(table)
    console.print(
        Panel(
            f"[green]Artifacts written to[/green] {out_dir}",
            border_style="green" if outcome.status == 0 else "red",
        )
    )


# ============================================================================
# ENTRY POINT
# ============================================================================


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", "-s", default=None, help="Scenario document (JSON)")
    common.add_argument("--out", "-o", default=None, help="Output directory (default BOHL_OUTPUT_DIR)")
    common.add_argument("--seed", type=int, default=None, help="Seed for randomized tasks")
    common.add_argument("--horizon", type=int, default=None, help="Horizon override")
    common.add_argument("--threads", type=int, default=None, help="Worker threads for per-rate and per-direction loops")
    common.add_argument("--verbose", "-v", action="store_true", help="Enable verbose logging")

    parser = argparse.ArgumentParser(
        prog="bohl-cli",
        description="Bohl exponents, dichotomy tests and dichotomy-destroying perturbations",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        subparsers.add_parser(command, parents=[common], help=f"Run the {command} task")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, configure logging and run one scenario."""
    args = build_parser().parse_args(argv)
    settings = get_settings()

    log_level = logging.DEBUG if args.verbose else getattr(logging, settings.log_level.upper(), logging.INFO)
    logging.basicConfig(
        level=log_level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    )
    if args.threads is not None:
        if args.threads < 1:
            console.print("[red]--threads must be positive[/red]")
            return 2
        settings.threads = args.threads

    scenario = None
    try:
        if args.scenario is not None:
            scenario = load_scenario(args.scenario)
            if args.seed is not None:
                scenario.params.seed = args.seed
                if scenario.system is not None and scenario.system.kind == "random_lyapunov":
                    scenario.system.seed = args.seed
        elif args.command != "verify":
            raise ScenarioInvalid(f"Subcommand {args.command} needs --scenario")
    except BohlToolkitError as e:
        logger.error(f"{e.name}: {e}")
        console.print(Panel(str(e), title=f"{e.name} (exit {e.exit_code})", border_style="red"))
        return e.exit_code

    out_dir = Path(args.out) if args.out else None
    return run_scenario(scenario, args.command, out_dir, args.horizon)


if __name__ == "__main__":
    sys.exit(main())
