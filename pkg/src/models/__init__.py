"""Pydantic models for scenarios, certificates and result documents."""

from src.models.certificates import (
    InequalityCheck,
    RotationCertificate,
    StageRecord,
    BudgetEntry,
    PlanCertificate,
)
from src.models.scenario import (
    SystemSpec,
    TaskParams,
    OutputSpec,
    Scenario,
)
from src.models.results import (
    PlanEntry,
    PlanRecord,
    EstimateRecord,
    VerdictRecord,
    WitnessRecord,
    RunSummary,
)

__all__ = [
    "InequalityCheck",
    "RotationCertificate",
    "StageRecord",
    "BudgetEntry",
    "PlanCertificate",
    "SystemSpec",
    "TaskParams",
    "OutputSpec",
    "Scenario",
    "PlanEntry",
    "PlanRecord",
    "EstimateRecord",
    "VerdictRecord",
    "WitnessRecord",
    "RunSummary",
]
