"""
Scenario loading, result encoding and atomic artifact writes.

Floats travel as repr(float) strings (shortest round-trip form), so every
matrix, plan and estimate reloads bit for bit.
"""

import csv
import io
import json
import logging
import os
import tempfile
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ValidationError

from src.bohl_exponents import BohlEstimate, EstimateKind
from src.dichotomy import BDVerdict, EDVerdict, VerdictState, Witness
from src.errors import ScenarioInvalid
from src.instances import (
    bd_not_ed_system,
    non_closedness_family,
    nu_growth_instance,
    nu_instance,
    random_lyapunov,
)
from src.models import (
    EstimateRecord,
    PlanEntry,
    PlanRecord,
    Scenario,
    SystemSpec,
    VerdictRecord,
    WitnessRecord,
)
from src.perturbations.plans import PerturbationPlan
from src.settings import get_settings
from src.system_core import MatrixSequence

logger = logging.getLogger(__name__)


# ============================================================================
# NUMBERS
# ============================================================================


def fmt(value: Any) -> str:
    """Shortest round-trip decimal form of a float."""
    return repr(float(value))


def encode_vector(vector: Any) -> List[str]:
    return [fmt(v) for v in np.asarray(vector, dtype=np.float64).reshape(-1)]


def decode_vector(values: Sequence[str]) -> np.ndarray:
    return np.array([float(v) for v in values], dtype=np.float64)


def encode_matrix(matrix: Any) -> List[List[str]]:
    return [encode_vector(row) for row in np.atleast_2d(np.asarray(matrix, dtype=np.float64))]


def decode_matrix(rows: Sequence[Sequence[str]]) -> np.ndarray:
    return np.array([[float(v) for v in row] for row in rows], dtype=np.float64)


def _sample_key(sample: Tuple[float, ...]) -> str:
    return ",".join(fmt(v) for v in sample)


def _parse_key(key: str) -> Tuple[float, ...]:
    return tuple(float(v) for v in key.split(","))


# ============================================================================
# RECORDS
# ============================================================================


def plan_to_record(plan: PerturbationPlan) -> PlanRecord:
    return PlanRecord(
        dimension=plan.dimension,
        support=[PlanEntry(index=i, matrix=encode_matrix(m)) for i, m in plan.support.items()],
        decay_schedule=(
            None
            if plan.decay_schedule is None
            else {str(i): fmt(b) for i, b in plan.decay_schedule.items()}
        ),
        scaling_rate=None if plan.scaling_rate is None else fmt(plan.scaling_rate),
        sup_norm=fmt(plan.sup_norm),
    )


def plan_from_record(record: PlanRecord) -> PerturbationPlan:
    return PerturbationPlan(
        record.dimension,
        {entry.index: decode_matrix(entry.matrix) for entry in record.support},
        decay_schedule=(
            None
            if record.decay_schedule is None
            else {int(i): float(b) for i, b in record.decay_schedule.items()}
        ),
        scaling_rate=None if record.scaling_rate is None else float(record.scaling_rate),
    )


def estimate_to_record(estimate: BohlEstimate, target: str = "") -> EstimateRecord:
    return EstimateRecord(
        target=target,
        kind=estimate.kind.value,
        values={str(n): fmt(v) for n, v in estimate.values.items()},
        windows={str(n): [int(m), int(k)] for n, (m, k) in estimate.windows.items()},
    )


def estimate_from_record(record: EstimateRecord) -> BohlEstimate:
    return BohlEstimate(
        EstimateKind(record.kind),
        {int(n): float(v) for n, v in record.values.items()},
        {int(n): (w[0], w[1]) for n, w in record.windows.items()},
    )


def verdict_to_record(verdict: Union[EDVerdict, BDVerdict]) -> VerdictRecord:
    if isinstance(verdict, EDVerdict):
        return VerdictRecord(
            test="ED",
            state=verdict.state.value,
            alpha=fmt(verdict.alpha),
            constant=fmt(verdict.K),
            margins=[fmt(m) for m in verdict.margins],
        )
    return VerdictRecord(
        test="BD",
        state=verdict.state.value,
        alpha=fmt(verdict.alpha),
        margins=[fmt(m) for m in verdict.margins],
        c1={_sample_key(k): fmt(v) for k, v in verdict.c1_samples.items()},
        c2={_sample_key(k): fmt(v) for k, v in verdict.c2_samples.items()},
        skipped=verdict.skipped,
        notes=list(verdict.notes),
    )


def verdict_from_record(record: VerdictRecord) -> Union[EDVerdict, BDVerdict]:
    state = VerdictState(record.state)
    margins = tuple(float(m) for m in record.margins)
    if record.test == "ED":
        return EDVerdict(
            state == VerdictState.HOLDS, state, float(record.alpha), float(record.constant), margins
        )
    return BDVerdict(
        state == VerdictState.HOLDS,
        state,
        float(record.alpha),
        margins,
        {_parse_key(k): float(v) for k, v in record.c1.items()},
        {_parse_key(k): float(v) for k, v in record.c2.items()},
        record.skipped,
        tuple(record.notes),
    )


def witness_to_record(witness: Witness) -> WitnessRecord:
    return WitnessRecord(x0=encode_vector(witness.x0), lower=fmt(witness.lower), upper=fmt(witness.upper))


def witness_from_record(record: WitnessRecord) -> Witness:
    return Witness(tuple(float(v) for v in record.x0), float(record.lower), float(record.upper))


# ============================================================================
# SCENARIOS
# ============================================================================


def parse_scenario(text: str) -> Scenario:
    """Validate a scenario document; pydantic errors surface as ScenarioInvalid."""
    try:
        return Scenario.model_validate_json(text)
    except ValidationError as e:
        raise ScenarioInvalid(f"Scenario does not validate: {e.error_count()} error(s)\n{e}") from e


def load_scenario(path: Union[str, Path]) -> Scenario:
    path = Path(path)
    if not path.is_file():
        raise ScenarioInvalid(f"Scenario file not found: {path}")
    logger.info(f"Loading scenario {path}")
    return parse_scenario(path.read_text(encoding="utf-8"))


def system_from_spec(spec: SystemSpec, horizon: Optional[int] = None) -> MatrixSequence:
    """
    Build the coefficient sequence a scenario describes.

    Args:
        spec: Validated system specification
        horizon: Override of the scenario horizon (--horizon)

    Returns:
        MatrixSequence (scaled by e^{spec.rate} when rate is nonzero)
    """
    horizon = horizon or spec.horizon or get_settings().default_horizon
    try:
        sys = _build(spec, horizon)
    except TypeError as e:
        raise ScenarioInvalid(f"Bad parameters for a {spec.kind} system: {e}") from e
    if spec.rate:
        sys = MatrixSequence.scaled(sys, spec.rate)
    logger.info(f"Built {sys} from a {spec.kind} scenario")
    return sys


def _build(spec: SystemSpec, horizon: int) -> MatrixSequence:
    matrices = [decode_matrix(m) for m in spec.matrices]
    kind = spec.kind
    if kind == "constant":
        sys = MatrixSequence.constant(matrices[0], horizon)
    elif kind == "identity":
        sys = MatrixSequence.identity(spec.dimension or 1, horizon)
    elif kind == "periodic":
        sys = MatrixSequence.periodic(matrices, horizon)
    elif kind == "block_schedule":
        sys = MatrixSequence.block_schedule(list(zip(spec.lengths, matrices)), horizon, cyclic=spec.cyclic)
    elif kind == "explicit":
        sys = MatrixSequence.explicit(matrices, horizon)
    elif kind == "nu":
        sys = nu_instance(horizon, **spec.parameters)
    elif kind == "nu_growth":
        sys = nu_growth_instance(horizon, **spec.parameters)
    elif kind == "bd_not_ed":
        sys = bd_not_ed_system(horizon, **spec.parameters)[0]
    elif kind == "random_lyapunov":
        sys = random_lyapunov(spec.dimension or 2, horizon, spec.seed, spec.spread)
    else:
        sys = non_closedness_family(spec.k, spec.dimension or 1, horizon)
    return sys


# ============================================================================
# ATOMIC WRITES
# ============================================================================


def write_text_atomic(path: Union[str, Path], text: str) -> Path:
    """Write through a temporary file in the target directory, then os.replace."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, temporary = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(temporary, path)
    except BaseException:
        if os.path.exists(temporary):
            os.unlink(temporary)
        raise
    logger.debug(f"Wrote {path}")
    return path


def write_json(path: Union[str, Path], document: Union[BaseModel, Dict[str, Any]]) -> Path:
    if isinstance(document, BaseModel):
        text = document.model_dump_json(indent=2)
    else:
        text = json.dumps(document, indent=2, default=_json_default)
    return write_text_atomic(path, text + "\n")


def _json_default(value: Any) -> Any:
    if isinstance(value, BaseModel):
        return value.model_dump()
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (np.floating, float)):
        return fmt(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Cannot serialize {type(value).__name__}")


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return fmt(value)
    return str(value)


def rows_to_csv(rows: Iterable[Dict[str, Any]], fields: Optional[Sequence[str]] = None) -> str:
    """CSV text with repr-formatted floats; the header follows first-seen key order."""
    rows = list(rows)
    if fields is None:
        fields = []
        for row in rows:
            fields.extend(key for key in row if key not in fields)
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=list(fields), lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({key: _cell(row.get(key)) for key in fields})
    return buffer.getvalue()


def write_csv(path: Union[str, Path], rows: Iterable[Dict[str, Any]], fields: Optional[Sequence[str]] = None) -> Path:
    return write_text_atomic(path, rows_to_csv(rows, fields))


def read_csv(path: Union[str, Path]) -> List[Dict[str, str]]:
    with open(path, encoding="utf-8", newline="") as handle:
        return list(csv.DictReader(handle))
