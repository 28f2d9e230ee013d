"""Pydantic models for verified inequalities and construction certificates."""

from pydantic import BaseModel, Field
from typing import Optional, List, Tuple


# ============================================================================
# INEQUALITIES
# ============================================================================

class InequalityCheck(BaseModel):
    """One verified inequality `greater >= lesser` with its relative slack."""

    name: str = Field(..., description="Inequality label")
    greater: float = Field(..., description="Side expected to be larger")
    lesser: float = Field(..., description="Side expected to be smaller")
    slack: float = Field(..., description="(greater - lesser) / max(|greater|, |lesser|)")
    holds: bool = Field(..., description="Whether the slack clears the tolerance")
    window: Optional[Tuple[int, int]] = Field(None, description="Window (m, n) the check refers to")

    @classmethod
    def build(
        cls,
        name: str,
        greater: float,
        lesser: float,
        tolerance: float = 1e-9,
        window: Optional[Tuple[int, int]] = None,
    ) -> "InequalityCheck":
        greater, lesser = float(greater), float(lesser)
        scale = max(abs(greater), abs(lesser), 1e-300)
        slack = (greater - lesser) / scale
        return cls(
            name=name,
            greater=greater,
            lesser=lesser,
            slack=slack,
            holds=bool(slack >= -tolerance),
            window=window,
        )

    @classmethod
    def build_log(
        cls,
        name: str,
        log_greater: float,
        log_lesser: float,
        tolerance: float = 1e-9,
        window: Optional[Tuple[int, int]] = None,
    ) -> "InequalityCheck":
        """Check stated on logarithms; the slack is the log of the ratio."""
        log_greater, log_lesser = float(log_greater), float(log_lesser)
        slack = log_greater - log_lesser
        return cls(
            name=name,
            greater=log_greater,
            lesser=log_lesser,
            slack=slack,
            holds=bool(slack >= -tolerance),
            window=window,
        )


# ============================================================================
# ROTATION CERTIFICATES
# ============================================================================

class RotationCertificate(BaseModel):
    """Audit record of a single-support rotation perturbation."""

    direction: str = Field(..., pattern="^(forward|backward)$", description="Rotation method variant")
    index: int = Field(..., description="Support index of the perturbation")
    window: Tuple[int, int] = Field(..., description="Window (k, m) of the rotation")
    epsilon: float = Field(..., description="Cone angle")
    rotated: bool = Field(..., description="False when the solution was already fast")
    angle: float = Field(default=0.0, description="Rotation angle")
    checks: List[InequalityCheck] = Field(default_factory=list, description="Verified inequalities")
    initial_value: Optional[List[float]] = Field(
        None, description="Initial value of the perturbed solution (backward variant)"
    )

    @property
    def holds(self) -> bool:
        return all(check.holds for check in self.checks)


# ============================================================================
# MULTI-STAGE CERTIFICATES
# ============================================================================

class StageRecord(BaseModel):
    """One stage of a multi-stage construction."""

    stage: int = Field(..., description="Stage number")
    kind: str = Field(..., description="Stage kind (odd, even, slow, scaling, lift, ...)")
    window: Optional[Tuple[int, int]] = Field(None, description="Certified window")
    epsilon: float = Field(default=0.0, description="Stage tolerance")
    rate: Optional[float] = Field(None, description="Exponential rate bound certified on the window")
    support: List[int] = Field(default_factory=list, description="Indices perturbed by this stage")
    norm: float = Field(default=0.0, description="Largest perturbation norm of the stage")
    checks: List[InequalityCheck] = Field(default_factory=list, description="Verified inequalities")


class BudgetEntry(BaseModel):
    """Norm budget of one pipeline step."""

    step: str = Field(..., description="Pipeline step")
    budget: float = Field(..., description="Allowed sup norm")
    achieved: float = Field(..., description="Sup norm of the emitted plan")


class PlanCertificate(BaseModel):
    """Certificate of a composed perturbation plan."""

    construction: str = Field(..., description="Construction that produced the plan")
    stages: List[StageRecord] = Field(default_factory=list, description="Stage records")
    budget: List[BudgetEntry] = Field(default_factory=list, description="Budget ledger")
    designated_x0: Optional[List[float]] = Field(None, description="Designated initial vector")
    horizon_exhausted: bool = Field(
        default=False, description="True if stages stopped because the horizon ran out"
    )
    notes: List[str] = Field(default_factory=list, description="Free-form remarks")

    @property
    def holds(self) -> bool:
        return all(check.holds for stage in self.stages for check in stage.checks)

    def failing_checks(self) -> List[InequalityCheck]:
        return [check for stage in self.stages for check in stage.checks if not check.holds]
