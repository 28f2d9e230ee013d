"""
End-to-end tests for the no-Bohl-dichotomy pipeline.
"""

import math

import numpy as np
import pytest
import scipy.linalg as sla

from src.bohl_exponents import WindowSpec, vector_estimates
from src.dichotomy import Splitting, Witness
from src.errors import SurrogateHypothesisFailed
from src.instances import bd_not_ed_system, nu_growth_instance
from src.models import BudgetEntry, PlanCertificate, StageRecord
from src.perturbations import pipeline
from src.perturbations.constructions import ConstructionResult
from src.perturbations.pipeline import PipelineResult, no_bd_pipeline
from src.perturbations.plans import PerturbationPlan, apply_plan
from src.settings import get_settings
from src.system_core import MatrixSequence


@pytest.fixture(scope="module")
def pipeline_result():
    sys, splitting = bd_not_ed_system(2048)
    return sys, no_bd_pipeline(sys, splitting, 0.2, WindowSpec.default(2048))


def test_plan_within_budget(pipeline_result):
    _, result = pipeline_result
    assert result.plan.sup_norm < 0.2
    total = result.certificate.budget[-1]
    assert total.step == "total"
    assert total.budget == 0.2


def test_witness_on_perturbed_system(pipeline_result):
    sys, result = pipeline_result
    tol = get_settings().tol_witness
    assert result.witness.lower <= tol
    assert result.witness.upper >= -tol
    perturbed = apply_plan(sys, result.plan)
    upper, lower = vector_estimates(perturbed, result.witness.x0)
    assert upper.reported == pytest.approx(result.witness.upper, abs=1e-12)
    assert lower.reported == pytest.approx(result.witness.lower, abs=1e-12)


def test_l1_branch_certificate(pipeline_result):
    _, result = pipeline_result
    certificate = result.certificate
    assert certificate.holds
    assert certificate.construction == "no_bd_pipeline:depth=0"
    assert certificate.stages
    assert all(stage.kind.startswith("L1:") for stage in certificate.stages)


def test_exponential_dichotomy_rejected():
    sys = MatrixSequence.constant(np.diag([math.exp(-1.0), math.e]), 256)
    with pytest.raises(SurrogateHypothesisFailed) as info:
        no_bd_pipeline(sys, Splitting([[1.0, 0.0]], [[0.0, 1.0]]), 0.2)
    assert info.value.index == "check_ed"


def test_missing_bohl_dichotomy_rejected():
    sys = MatrixSequence.identity(2, 256)
    with pytest.raises(SurrogateHypothesisFailed) as info:
        no_bd_pipeline(sys, Splitting([[1.0, 0.0]], [[0.0, 1.0]]), 0.2)
    assert info.value.index == "check_bd"


def test_budget_must_be_positive():
    sys, splitting = bd_not_ed_system(256)
    with pytest.raises(ValueError):
        no_bd_pipeline(sys, splitting, 0.0)


# ============================================================================
# L2 BRANCH
# ============================================================================


def stacked_growth_system(horizon: int = 2048) -> MatrixSequence:
    """blockdiag(e^{-1}, nu_growth_instance): L1 = span(e1) decays, L2 carries the growth family."""
    inner = nu_growth_instance(horizon)
    blocks = [sla.block_diag([[math.exp(-1.0)]], inner.coefficient(n)) for n in range(horizon)]
    return MatrixSequence.explicit(blocks, horizon)


def slow_branch(dimension: int, y0) -> "pipeline._Branch":
    """Branch state right after scaling and the slow solution."""
    ledger = [
        BudgetEntry(step="L2:scaling", budget=0.1, achieved=0.05),
        BudgetEntry(step="L2:slow_solution", budget=0.1, achieved=0.02),
    ]
    plan = PerturbationPlan(dimension, {3: 0.02 * np.eye(dimension)})
    stages = [StageRecord(stage=1, kind="L2:slow:slow")]
    return pipeline._Branch(plan, np.array(y0, dtype=np.float64), stages, ledger, [])


def steps(branch) -> list:
    return [entry.step for entry in branch.budget]


def test_incomplete_slow_solution_is_rejected():
    """A slow solution cut short by the horizon must not be passed off as a witness."""
    sys = stacked_growth_system()
    splitting = Splitting([[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    with pytest.raises(SurrogateHypothesisFailed) as info:
        no_bd_pipeline(sys, splitting, 0.3, WindowSpec.default(2048))
    assert info.value.index == "l2_slow"


def test_l2_stops_on_verified_witness():
    b45 = MatrixSequence.identity(2, 256)
    w = WindowSpec.default(256)
    branch = slow_branch(2, [1.0, 0.0])
    for exhausted in (False, True):
        result = pipeline._finish_l2(b45, branch, exhausted, 0.3, w, 0)
        assert result.plan is branch.plan
        assert steps(result) == ["L2:scaling", "L2:slow_solution"]
        assert result.notes == ["slow solution already witnesses the missing dichotomy"]
        assert pipeline.find_no_bd_witness(b45, [result.y0], w) is not None


def test_l2_rejects_exhausted_slow_solution_without_witness():
    b45 = MatrixSequence.constant(math.exp(0.3) * np.eye(2), 256)
    with pytest.raises(SurrogateHypothesisFailed) as info:
        pipeline._finish_l2(b45, slow_branch(2, [1.0, 0.0]), True, 0.3, WindowSpec.default(256), 0)
    assert info.value.index == "l2_slow"


def test_l2_weak_destroy_exit(monkeypatch):
    calls = []

    def fake_destroy(sys, z0, variant, w, budget=None):
        calls.append((variant, budget, tuple(z0)))
        stages = [StageRecord(stage=1, kind="odd"), StageRecord(stage=2, kind="even")]
        certificate = PlanCertificate(construction=f"destroy_bd_plan:{variant}", stages=stages)
        return ConstructionResult(PerturbationPlan(2, {40: 0.01 * np.eye(2)}), np.asarray(z0), certificate)

    monkeypatch.setattr(pipeline, "destroy_bd_plan", fake_destroy)
    b45 = MatrixSequence.constant(math.exp(-0.3) * np.eye(2), 256)
    result = pipeline._finish_l2(b45, slow_branch(2, [1.0, 0.0]), False, 0.3, WindowSpec.default(256), 0)

    assert calls == [("weak", pytest.approx(0.1), (1.0, 0.0))]
    assert steps(result) == ["L2:scaling", "L2:slow_solution", "L2:destroy_weak"]
    assert result.budget[-1].achieved == pytest.approx(0.01)
    assert result.budget[-1].achieved < result.budget[-1].budget
    assert sorted(result.plan.support) == [3, 40]
    assert [stage.kind for stage in result.stages] == ["L2:slow:slow", "L2:weak:odd", "L2:weak:even"]
    np.testing.assert_array_equal(result.y0, [1.0, 0.0])


def test_l2_descent_exit(monkeypatch):
    calls = []
    nested_certificate = PlanCertificate(
        construction="no_bd_pipeline:depth=1",
        stages=[StageRecord(stage=1, kind="L1:odd")],
        budget=[
            BudgetEntry(step="L1:destroy_strict", budget=0.1, achieved=0.02),
            BudgetEntry(step="total", budget=0.1, achieved=0.02),
        ],
    )

    def fake_pipeline(sys, splitting, eps, w=None, depth=0):
        calls.append((eps, depth))
        plan = PerturbationPlan(2, {60: 0.02 * np.eye(2)})
        return PipelineResult(plan, Witness((0.0, 1.0), 0.0, 0.0), nested_certificate)

    monkeypatch.setattr(pipeline, "search_splitting", lambda sys, w=None: Splitting([[0.0, 1.0]], [[1.0, 0.0]]))
    monkeypatch.setattr(pipeline, "no_bd_pipeline", fake_pipeline)
    b45 = MatrixSequence.constant(np.diag([math.exp(0.3), math.exp(-0.3)]), 256)
    result = pipeline._finish_l2(b45, slow_branch(2, [1.0, 0.0]), False, 0.3, WindowSpec.default(256), 0)

    assert calls == [(pytest.approx(0.1), 1)]
    assert steps(result) == [
        "L2:scaling",
        "L2:slow_solution",
        "L2:descent:L1:destroy_strict",
        "L2:descent:total",
    ]
    assert [stage.kind for stage in result.stages] == ["L2:slow:slow", "L2:descent:L1:odd"]
    assert sorted(result.plan.support) == [3, 60]
    np.testing.assert_array_equal(result.y0, [0.0, 1.0])


def test_l2_descent_falls_back_to_sampled_witness(monkeypatch):
    monkeypatch.setattr(pipeline, "search_splitting", lambda sys, w=None: None)
    b45 = MatrixSequence.constant(np.diag([math.exp(0.3), 1.0]), 256)
    result = pipeline._finish_l2(b45, slow_branch(2, [1.0, 0.0]), False, 0.3, WindowSpec.default(256), 0)
    assert result.notes == ["perturbed L2-subsystem has no sampled Bohl dichotomy"]
    assert steps(result) == ["L2:scaling", "L2:slow_solution"]
    np.testing.assert_array_equal(result.y0, [0.0, 1.0])


def test_l2_descent_without_splitting_or_witness(monkeypatch):
    monkeypatch.setattr(pipeline, "search_splitting", lambda sys, w=None: None)
    b45 = MatrixSequence.constant(math.exp(0.3) * np.eye(2), 256)
    with pytest.raises(SurrogateHypothesisFailed) as info:
        pipeline._finish_l2(b45, slow_branch(2, [1.0, 0.0]), False, 0.3, WindowSpec.default(256), 0)
    assert info.value.index == "l2_descent"
