"""Pydantic models for scenario documents."""

from pydantic import BaseModel, Field, ConfigDict, model_validator
from typing import Optional, List, Dict


Matrix = List[List[str]]
Vector = List[str]

RANDOMIZED_KINDS = {"random_lyapunov"}


# ============================================================================
# SYSTEM SPECIFICATION
# ============================================================================

class SystemSpec(BaseModel):
    """Coefficient rule of the system under study."""

    model_config = ConfigDict(extra="forbid")

    kind: str = Field(
        ...,
        pattern="^(constant|identity|periodic|block_schedule|explicit|nu|nu_growth|bd_not_ed"
        "|random_lyapunov|non_closedness)$",
        description="Rule kind",
    )
    horizon: Optional[int] = Field(None, ge=4, description="Horizon H (settings default if omitted)")
    dimension: Optional[int] = Field(None, ge=1, description="State dimension (identity, random, non_closedness)")
    matrices: List[Matrix] = Field(
        default_factory=list, description="Row-major matrices of decimal strings"
    )
    lengths: List[int] = Field(default_factory=list, description="Block lengths for block_schedule")
    cyclic: bool = Field(default=False, description="Repeat the block schedule")
    rate: float = Field(default=0.0, description="Extra scaling e^{rate} applied to the rule")
    seed: Optional[int] = Field(None, ge=0, description="Seed of randomized rules")
    spread: float = Field(default=0.2, ge=0.0, lt=1.0, description="Spread of random_lyapunov")
    k: Optional[int] = Field(None, ge=0, description="Member index of the non_closedness family")
    parameters: Dict[str, float] = Field(
        default_factory=dict, description="Keyword parameters of the nu / nu_growth generators"
    )

    @model_validator(mode="after")
    def check_consistency(self) -> "SystemSpec":
        sizes = set()
        for matrix in self.matrices:
            if not matrix or any(len(row) != len(matrix) for row in matrix):
                raise ValueError("Every matrix must be square and nonempty")
            sizes.add(len(matrix))
        if len(sizes) > 1:
            raise ValueError(f"Matrices have different dimensions {sorted(sizes)}")
        if self.kind in {"constant", "periodic", "explicit", "block_schedule"} and not self.matrices:
            raise ValueError(f"Kind {self.kind} needs matrices")
        if self.kind == "constant" and len(self.matrices) != 1:
            raise ValueError("Kind constant takes exactly one matrix")
        if self.kind == "block_schedule" and len(self.lengths) != len(self.matrices):
            raise ValueError("block_schedule needs one length per matrix")
        if self.dimension is not None and sizes and self.dimension not in sizes:
            raise ValueError(f"dimension {self.dimension} disagrees with the matrices")
        if self.kind in RANDOMIZED_KINDS and self.seed is None:
            raise ValueError(f"Kind {self.kind} needs a seed")
        return self

    @property
    def size(self) -> Optional[int]:
        if self.matrices:
            return len(self.matrices[0])
        if self.kind in {"nu", "nu_growth"}:
            return 2
        if self.kind == "bd_not_ed":
            return 3
        return self.dimension


# ============================================================================
# TASK PARAMETERS
# ============================================================================

class TaskParams(BaseModel):
    """Parameters of the scenario task; unused fields are ignored by other tasks."""

    model_config = ConfigDict(extra="forbid")

    thresholds: Optional[List[int]] = Field(None, description="Window thresholds N")
    x0: Optional[Vector] = Field(None, description="Initial vector")
    vectors: List[Vector] = Field(default_factory=list, description="Sample vectors")
    basis: List[Vector] = Field(default_factory=list, description="Basis of L for triangularize")
    basis1: List[Vector] = Field(default_factory=list, description="Basis of L1")
    basis2: List[Vector] = Field(default_factory=list, description="Basis of L2")
    construction: str = Field(
        default="pipeline",
        pattern="^(pipeline|destroy_strict|destroy_weak|slow_solution|scaling"
        "|forward_rotation|backward_rotation)$",
        description="Perturbation construction",
    )
    eps: float = Field(default=0.2, gt=0.0, description="Perturbation norm budget")
    delta: Optional[float] = Field(None, gt=0.0, description="Decay rate of slow_solution and scaling")
    stages: Optional[int] = Field(None, ge=0, description="Stage count of slow_solution")
    k: Optional[int] = Field(None, ge=0, description="Rotation index")
    m: Optional[int] = Field(None, ge=0, description="Rotation window end")
    grid_start: Optional[float] = Field(None, description="First rate of the spectrum grid")
    grid_stop: Optional[float] = Field(None, description="Last rate of the spectrum grid")
    grid_step: Optional[float] = Field(None, gt=0.0, description="Spacing of the spectrum grid")
    approximation: bool = Field(default=False, description="Run the perturbed Bohl spectra demo")
    eps_list: List[float] = Field(default_factory=lambda: [0.2, 0.1, 0.05], description="Demo budgets")
    n_perturbations: int = Field(default=4, ge=1, description="Random plans per demo budget")
    seed: Optional[int] = Field(None, ge=0, description="Seed of randomized tasks")


# ============================================================================
# SCENARIO
# ============================================================================

class OutputSpec(BaseModel):
    """Where artifacts are written."""

    model_config = ConfigDict(extra="forbid")

    directory: Optional[str] = Field(None, description="Output directory (BOHL_OUTPUT_DIR if omitted)")
    prefix: str = Field(default="result", min_length=1, description="Artifact file name prefix")


class Scenario(BaseModel):
    """Versioned scenario document."""

    model_config = ConfigDict(extra="forbid")

    schema_version: int = Field(default=1, ge=1, le=1, description="Scenario schema version")
    name: str = Field(default="scenario", min_length=1, description="Scenario label")
    task: str = Field(
        ...,
        pattern="^(simulate|exponents|dichotomy|triangularize|perturb|spectrum|verify)$",
        description="Task to run",
    )
    system: Optional[SystemSpec] = Field(None, description="System under study (not needed for verify)")
    params: TaskParams = Field(default_factory=TaskParams, description="Task parameters")
    output: OutputSpec = Field(default_factory=OutputSpec, description="Artifact destination")

    @model_validator(mode="after")
    def check_task(self) -> "Scenario":
        if self.task != "verify" and self.system is None:
            raise ValueError(f"Task {self.task} needs a system")
        size = self.system.size if self.system is not None else None
        vectors = list(self.params.vectors) + list(self.params.basis)
        vectors += list(self.params.basis1) + list(self.params.basis2)
        if self.params.x0 is not None:
            vectors.append(self.params.x0)
        if size is not None and any(len(v) != size for v in vectors):
            raise ValueError(f"Vector lengths disagree with the system dimension {size}")
        if self.task == "spectrum" and self.params.approximation and self.params.seed is None:
            raise ValueError("The approximation demo needs a seed")
        if self.task == "triangularize" and not self.params.basis:
            raise ValueError("Task triangularize needs a basis")
        return self
