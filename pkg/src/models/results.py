"""Pydantic models for result documents written by the CLI."""

from pydantic import BaseModel, Field
from typing import Any, Optional, List, Dict

from src.models.certificates import PlanCertificate
from src.models.scenario import Matrix, Vector


# ============================================================================
# PLANS AND ESTIMATES
# ============================================================================

class PlanEntry(BaseModel):
    """One support entry of a perturbation plan."""

    index: int = Field(..., ge=0, description="Time index n")
    matrix: Matrix = Field(..., description="Q(n) as decimal strings")


class PlanRecord(BaseModel):
    """Serialized perturbation plan."""

    dimension: int = Field(..., ge=1, description="State dimension")
    support: List[PlanEntry] = Field(default_factory=list, description="Sorted support entries")
    decay_schedule: Optional[Dict[str, str]] = Field(None, description="Index -> norm bound")
    scaling_rate: Optional[str] = Field(None, description="Rate of a dense scaling plan")
    sup_norm: str = Field(..., description="Largest entry norm (informational)")


class EstimateRecord(BaseModel):
    """Serialized Bohl estimate."""

    target: str = Field(default="", description="What was estimated (vector, space, subspace)")
    kind: str = Field(..., pattern="^(upper|lower)$", description="Upper or lower estimate")
    values: Dict[str, str] = Field(..., description="Threshold N -> estimate")
    windows: Dict[str, List[int]] = Field(..., description="Threshold N -> achieving window (m, n)")


# ============================================================================
# VERDICTS
# ============================================================================

class VerdictRecord(BaseModel):
    """Serialized dichotomy verdict."""

    test: str = Field(..., pattern="^(ED|BD)$", description="Dichotomy tested")
    state: str = Field(..., pattern="^(holds|fails|inconclusive)$", description="Tri-state verdict")
    alpha: str = Field(..., description="Fitted rate")
    constant: Optional[str] = Field(None, description="Fitted K (ED only)")
    margins: List[str] = Field(..., description="Margins of L1 and L2")
    c1: Dict[str, str] = Field(default_factory=dict, description="Sample -> C1 (BD only)")
    c2: Dict[str, str] = Field(default_factory=dict, description="Sample -> C2 (BD only)")
    skipped: int = Field(default=0, description="Samples in neither subspace")
    notes: List[str] = Field(default_factory=list, description="Sample design and skipped samples (BD only)")


class WitnessRecord(BaseModel):
    """Initial vector witnessing a missing Bohl dichotomy."""

    x0: Vector = Field(..., description="Initial vector")
    lower: str = Field(..., description="Lower estimate")
    upper: str = Field(..., description="Upper estimate")


# ============================================================================
# RUN SUMMARY
# ============================================================================

class RunSummary(BaseModel):
    """Top-level result document of one scenario run."""

    scenario: str = Field(..., description="Scenario name")
    task: str = Field(..., description="Task that ran")
    status: int = Field(..., description="Exit status")
    artifacts: List[str] = Field(default_factory=list, description="Files written next to this summary")
    estimates: List[EstimateRecord] = Field(default_factory=list, description="Bohl estimates")
    verdicts: List[VerdictRecord] = Field(default_factory=list, description="Dichotomy verdicts")
    plan: Optional[PlanRecord] = Field(None, description="Emitted perturbation plan")
    witness: Optional[WitnessRecord] = Field(None, description="Verified witness")
    certificate: Optional[PlanCertificate] = Field(None, description="Construction certificate")
    error: Optional[Dict[str, Any]] = Field(None, description="Error record of a failed run")
    notes: List[str] = Field(default_factory=list, description="Free-form remarks")
