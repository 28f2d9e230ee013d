"""
Tests for scenario parsing, result encoding, artifact writes and the CLI entry point.
"""

import json
import math
from pathlib import Path

import numpy as np
import pytest

from src.bohl_exponents import vector_estimates
from src.cli import build_parser, main, run_scenario
from src.dichotomy import Splitting, Witness, check_bd, check_ed
from src.errors import ScenarioInvalid, SurrogateHypothesisFailed
from src.models import RunSummary
from src.perturbations.plans import PerturbationPlan
from src.serialization import (
    estimate_from_record,
    estimate_to_record,
    load_scenario,
    parse_scenario,
    plan_from_record,
    plan_to_record,
    read_csv,
    rows_to_csv,
    system_from_spec,
    verdict_from_record,
    verdict_to_record,
    witness_from_record,
    witness_to_record,
    write_csv,
    write_json,
)
from src.system_core import MatrixSequence, RuleKind


def scenario_text(task: str = "simulate", **overrides) -> str:
    document = {
        "name": "doubling",
        "task": task,
        "system": {"kind": "constant", "horizon": 8, "matrices": [[["2.0"]]]},
    }
    document.update(overrides)
    return json.dumps(document)


def write_scenario(directory: Path, text: str) -> Path:
    path = directory / "scenario.json"
    path.write_text(text, encoding="utf-8")
    return path


# ============================================================================
# SCENARIOS
# ============================================================================


def test_parse_scenario_defaults():
    scenario = parse_scenario(scenario_text())
    assert scenario.schema_version == 1
    assert scenario.params.eps == 0.2
    assert scenario.output.prefix == "result"
    assert scenario.system.size == 1


@pytest.mark.parametrize(
    "document",
    [
        {"task": "simulate"},
        {"task": "fly", "system": {"kind": "identity", "dimension": 2}},
        {"task": "simulate", "system": {"kind": "constant", "matrices": [[["1", "0"]]]}},
        {"task": "simulate", "system": {"kind": "random_lyapunov", "dimension": 2}},
        {"task": "simulate", "system": {"kind": "identity", "dimension": 2}, "params": {"x0": ["1"]}},
        {"task": "spectrum", "system": {"kind": "identity", "dimension": 1}, "params": {"approximation": True}},
        {"task": "triangularize", "system": {"kind": "identity", "dimension": 2}},
        {"task": "simulate", "system": {"kind": "identity", "dimension": 2}, "extra": 1},
        {"schema_version": 2, "task": "verify"},
    ],
)
def test_invalid_scenarios_rejected(document):
    with pytest.raises(ScenarioInvalid):
        parse_scenario(json.dumps(document))


def test_missing_scenario_file(tmp_path):
    with pytest.raises(ScenarioInvalid):
        load_scenario(tmp_path / "absent.json")


def test_system_from_spec_kinds():
    scenario = parse_scenario(
        json.dumps(
            {
                "task": "simulate",
                "system": {
                    "kind": "block_schedule",
                    "horizon": 16,
                    "matrices": [[["2"]], [["3"]]],
                    "lengths": [2, 3],
                    "rate": 0.5,
                },
            }
        )
    )
    sys = system_from_spec(scenario.system)
    assert sys.kind == RuleKind.SCALED
    assert sys.coefficient(3)[0, 0] == pytest.approx(3.0 * math.exp(0.5))
    assert system_from_spec(scenario.system, horizon=32).horizon == 32


def test_system_from_spec_generators():
    spec = parse_scenario(
        json.dumps({"task": "simulate", "system": {"kind": "nu", "horizon": 64, "parameters": {"coupling": 0.1}}})
    ).system
    sys = system_from_spec(spec)
    assert sys.coefficient(0)[0, 1] == pytest.approx(0.1)
    bad = parse_scenario(
        json.dumps({"task": "simulate", "system": {"kind": "nu", "horizon": 64, "parameters": {"bogus": 1.0}}})
    ).system
    with pytest.raises(ScenarioInvalid):
        system_from_spec(bad)


# ============================================================================
# RECORDS
# ============================================================================


def test_plan_record_round_trip():
    plan = PerturbationPlan(
        2, {3: np.array([[0.1, 1 / 3], [0.0, -2e-17]])}, decay_schedule={3: 0.7}
    )
    restored = plan_from_record(plan_to_record(plan))
    assert restored == plan
    dense = PerturbationPlan(1, {0: [[0.25]]}, scaling_rate=-0.1)
    assert plan_from_record(plan_to_record(dense)).scaling_rate == -0.1


def test_estimate_record_round_trip():
    sys = MatrixSequence.constant(np.diag([0.9, 1.1]), 64)
    upper, lower = vector_estimates(sys, [1.0, 1.0])
    for estimate in (upper, lower):
        assert estimate_from_record(estimate_to_record(estimate, "x")) == estimate


def test_verdict_record_round_trip():
    sys = MatrixSequence.constant(np.diag([math.exp(-1.0), math.e]), 128)
    splitting = Splitting([[1.0, 0.0]], [[0.0, 1.0]])
    for verdict in (check_ed(sys, splitting), check_ed(sys, Splitting([[0.0, 1.0]], [[1.0, 0.0]])), check_bd(sys, splitting)):
        assert verdict_from_record(verdict_to_record(verdict)) == verdict


def test_witness_record_round_trip():
    witness = Witness((0.6, -0.8), -0.01, 0.02)
    assert witness_from_record(witness_to_record(witness)) == witness


# ============================================================================
# ARTIFACTS
# ============================================================================


def test_rows_to_csv_formatting():
    text = rows_to_csv([{"n": 1, "value": 0.1, "ok": True}, {"n": 2, "value": None, "extra": "a"}])
    lines = text.splitlines()
    assert lines[0] == "n,value,ok,extra"
    assert lines[1] == "1,0.1,true,"
    assert lines[2] == "2,,,a"


def test_atomic_writes_leave_no_temporaries(tmp_path):
    write_csv(tmp_path / "rows.csv", [{"a": 1.5}])
    write_json(tmp_path / "doc.json", {"value": np.float64(0.25), "items": np.arange(2)})
    assert sorted(p.name for p in tmp_path.iterdir()) == ["doc.json", "rows.csv"]
    assert read_csv(tmp_path / "rows.csv") == [{"a": "1.5"}]
    assert json.loads((tmp_path / "doc.json").read_text()) == {"value": 0.25, "items": [0, 1]}


# ============================================================================
# COMMAND LINE
# ============================================================================


def test_parser_accepts_common_options():
    args = build_parser().parse_args(["exponents", "-s", "x.json", "--seed", "3", "--threads", "2", "-v"])
    assert args.command == "exponents"
    assert args.seed == 3
    assert args.threads == 2
    assert args.verbose


def test_simulate_writes_artifacts(tmp_path):
    path = write_scenario(tmp_path, scenario_text())
    out = tmp_path / "out"
    assert main(["simulate", "--scenario", str(path), "--out", str(out)]) == 0
    rows = read_csv(out / "result_norms.csv")
    assert len(rows) == 9
    assert float(rows[-1]["log_norm"]) == pytest.approx(8 * math.log(2.0), rel=1e-12)
    summary = RunSummary.model_validate_json((out / "result_summary.json").read_text())
    assert summary.status == 0
    assert summary.task == "simulate"
    assert summary.artifacts == ["result_norms.csv"]


def test_reruns_are_byte_identical(tmp_path):
    path = write_scenario(tmp_path, scenario_text("exponents", system={"kind": "random_lyapunov", "dimension": 2, "horizon": 64, "seed": 5}))
    assert main(["exponents", "-s", str(path), "-o", str(tmp_path / "a")]) == 0
    assert main(["exponents", "-s", str(path), "-o", str(tmp_path / "b")]) == 0
    first = (tmp_path / "a" / "result_estimates.csv").read_bytes()
    second = (tmp_path / "b" / "result_estimates.csv").read_bytes()
    assert first == second


def test_invalid_scenario_exit_code(tmp_path):
    path = write_scenario(tmp_path, json.dumps({"task": "simulate"}))
    assert main(["simulate", "-s", str(path), "-o", str(tmp_path)]) == 2
    assert main(["simulate", "-o", str(tmp_path)]) == 2


def test_surrogate_failure_exit_code(tmp_path):
    scenario = parse_scenario(
        json.dumps(
            {
                "name": "flat",
                "task": "perturb",
                "system": {"kind": "identity", "dimension": 2, "horizon": 64},
                "params": {"basis1": [["1", "0"]], "basis2": [["0", "1"]]},
            }
        )
    )
    assert run_scenario(scenario, out_dir=tmp_path) == SurrogateHypothesisFailed.exit_code
    summary = json.loads((tmp_path / "result_summary.json").read_text())
    assert summary["status"] == 3
    assert summary["error"]["error"] == "SurrogateHypothesisFailed"
    assert summary["error"]["index"] == "check_bd"


def test_subcommand_overrides_scenario_task(tmp_path):
    scenario = parse_scenario(scenario_text("exponents"))
    assert run_scenario(scenario, "simulate", tmp_path) == 0
    assert (tmp_path / "result_norms.csv").is_file()


def test_dichotomy_task_records_verdicts(tmp_path):
    scenario = parse_scenario(
        json.dumps(
            {
                "task": "dichotomy",
                "system": {
                    "kind": "constant",
                    "horizon": 128,
                    "matrices": [[[repr(math.exp(-1.0)), "0"], ["0", repr(math.e)]]],
                },
                "params": {"basis1": [["1", "0"]], "basis2": [["0", "1"]]},
                "output": {"prefix": "saddle"},
            }
        )
    )
    assert run_scenario(scenario, out_dir=tmp_path) == 0
    summary = RunSummary.model_validate_json((tmp_path / "saddle_summary.json").read_text())
    assert [v.test for v in summary.verdicts] == ["ED", "BD"]
    assert all(v.state == "holds" for v in summary.verdicts)
    assert (tmp_path / "saddle_splitting.json").is_file()
