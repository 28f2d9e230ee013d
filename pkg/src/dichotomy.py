"""
Finite-horizon exponential and Bohl dichotomy checks.

A splitting R^d = L1 (+) L2 is tested through the Bohl exponents of its
subspaces (exponential dichotomy) or of sampled solutions (Bohl dichotomy).
Verdicts are tri-state: a margin within tol_margin of zero is inconclusive.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as sla

from src.bohl_exponents import (
    WindowSpec,
    bohl_on_subspace,
    log_norms,
    upper_bohl_space,
    vector_estimates,
)
from src.errors import DegenerateSplitting, EmptySampleSet, ZeroVector
from src.settings import get_settings
from src.system_core import MatrixSequence, map_ordered

logger = logging.getLogger(__name__)

MEMBERSHIP_TOLERANCE = 1e-10


class VerdictState(str, Enum):
    HOLDS = "holds"
    FAILS = "fails"
    INCONCLUSIVE = "inconclusive"


# ============================================================================
# SPLITTINGS
# ============================================================================


def _vectors(basis: Sequence) -> Tuple[np.ndarray, ...]:
    return tuple(np.array(v, dtype=np.float64).reshape(-1) for v in basis)


@dataclass(frozen=True, eq=False)
class Splitting:
    """Candidate decomposition R^d = span(basis1) (+) span(basis2)."""

    basis1: Tuple[np.ndarray, ...]
    basis2: Tuple[np.ndarray, ...]

    def __post_init__(self):
        """Validate the concatenated basis."""
        object.__setattr__(self, "basis1", _vectors(self.basis1))
        object.__setattr__(self, "basis2", _vectors(self.basis2))
        vectors = self.basis1 + self.basis2
        if not vectors:
            raise DegenerateSplitting("Splitting needs at least one basis vector")
        d = vectors[0].shape[0]
        if any(v.shape[0] != d for v in vectors):
            raise DegenerateSplitting("Basis vectors have different dimensions")
        if len(vectors) != d:
            raise DegenerateSplitting(f"Splitting has {len(vectors)} vectors in dimension {d}")
        singular = sla.svdvals(np.column_stack(vectors))
        if singular[0] == 0.0 or singular[-1] / singular[0] <= 1e-10:
            raise DegenerateSplitting("Concatenated basis is not of full rank")

    @property
    def dimension(self) -> int:
        return (self.basis1 + self.basis2)[0].shape[0]

    @property
    def matrix(self) -> np.ndarray:
        return np.column_stack(self.basis1 + self.basis2)

    def decompose(self, x) -> Tuple[np.ndarray, np.ndarray]:
        """Components (x1, x2) of x in L1 and L2."""
        coefficients = np.linalg.solve(self.matrix, np.asarray(x, dtype=np.float64))
        k = len(self.basis1)
        x1 = self.matrix[:, :k] @ coefficients[:k]
        x2 = self.matrix[:, k:] @ coefficients[k:]
        return x1, x2

    def member(self, x) -> Optional[int]:
        """1 or 2 for the subspace containing x, None if x lies in neither."""
        vector = np.asarray(x, dtype=np.float64)
        size = np.linalg.norm(vector)
        if size == 0.0:
            raise ZeroVector("Sample vector must be nonzero")
        x1, x2 = self.decompose(vector)
        if np.linalg.norm(x2) <= MEMBERSHIP_TOLERANCE * size:
            return 1
        if np.linalg.norm(x1) <= MEMBERSHIP_TOLERANCE * size:
            return 2
        return None

    def to_record(self) -> dict:
        return {
            "basis1": [[float(c) for c in v] for v in self.basis1],
            "basis2": [[float(c) for c in v] for v in self.basis2],
        }


# ============================================================================
# VERDICTS
# ============================================================================


@dataclass(frozen=True)
class EDVerdict:
    """Exponential dichotomy verdict with fitted constants."""

    holds: bool
    state: VerdictState
    alpha: float
    K: float
    margins: Tuple[float, float]


@dataclass(frozen=True)
class BDVerdict:
    """Bohl dichotomy verdict with per-sample constants."""

    holds: bool
    state: VerdictState
    alpha: float
    margins: Tuple[float, float]
    c1_samples: Dict[Tuple[float, ...], float] = field(default_factory=dict)
    c2_samples: Dict[Tuple[float, ...], float] = field(default_factory=dict)
    skipped: int = 0
    notes: Tuple[str, ...] = ()


@dataclass(frozen=True)
class Witness:
    """Initial vector whose lower estimate is <= 0 <= its upper estimate (within tolerance)."""

    x0: Tuple[float, ...]
    lower: float
    upper: float

    def to_record(self) -> dict:
        return {"x0": list(self.x0), "lower": self.lower, "upper": self.upper}


def classify_margins(margins: Sequence[float], tol: Optional[float] = None) -> VerdictState:
    """Tri-state verdict from dichotomy margins: holds above tol, inconclusive within +-tol."""
    tol = get_settings().tol_margin if tol is None else tol
    binding = min(margins)
    if binding > tol:
        return VerdictState.HOLDS
    if binding >= -tol:
        return VerdictState.INCONCLUSIVE
    return VerdictState.FAILS


def default_samples(basis: Sequence, count: Optional[int] = None, seed: Optional[int] = None) -> List[np.ndarray]:
    """
    Orthonormalized basis vectors followed by seeded random unit combinations.

    Args:
        basis: Vectors spanning the sampled subspace
        count: Total number of samples (settings default)
        seed: Generator seed (settings default)

    Returns:
        List of unit vectors
    """
    settings = get_settings()
    count = settings.samples_per_subspace if count is None else count
    seed = settings.default_seed if seed is None else seed
    vectors = _vectors(basis)
    if not vectors:
        return []
    q, r = np.linalg.qr(np.column_stack(vectors))
    # Sign convention: positive diagonal of R
    q = q * np.where(np.diag(r) < 0, -1.0, 1.0)
    samples = [q[:, j].copy() for j in range(q.shape[1])]
    rng = np.random.default_rng(seed)
    while len(samples) < count:
        combination = q @ rng.standard_normal(q.shape[1])
        samples.append(combination / np.linalg.norm(combination))
    return samples


def _axes_and_random(d: int, seed: Optional[int] = None) -> List[np.ndarray]:
    """The d coordinate axes followed by 2d seeded random unit vectors."""
    seed = get_settings().default_seed if seed is None else seed
    rng = np.random.default_rng(seed)
    samples = [np.eye(d)[i] for i in range(d)]
    for _ in range(2 * d):
        v = rng.standard_normal(d)
        samples.append(v / np.linalg.norm(v))
    return samples


# ============================================================================
# CONSTANT FITTING
# ============================================================================


def _decay_constant(logs: np.ndarray, alpha: float) -> float:
    """log of min C with ||x(n)|| <= C e^{-alpha(n-m)} ||x(m)|| over all m <= n."""
    shifted = logs + alpha * np.arange(logs.shape[0])
    return float(np.max(shifted - np.minimum.accumulate(shifted)))


def _growth_constant(logs: np.ndarray, alpha: float) -> float:
    """log of min C with ||x(n)|| >= C^{-1} e^{alpha(n-m)} ||x(m)|| over all m <= n."""
    shifted = alpha * np.arange(logs.shape[0]) - logs
    return float(np.max(shifted - np.minimum.accumulate(shifted)))


def _bohl_lower_constant(logs: np.ndarray, alpha: float) -> float:
    """log of max C with ||x(n)|| >= C e^{alpha(n-m)} ||x(m)|| over all m <= n."""
    shifted = logs - alpha * np.arange(logs.shape[0])
    return float(np.min(shifted - np.maximum.accumulate(shifted)))


# ============================================================================
# CHECKS
# ============================================================================


def _subspace_margins(sys: MatrixSequence, splitting: Splitting, w: WindowSpec) -> Tuple[float, float]:
    margin1 = math.inf
    margin2 = math.inf
    if splitting.basis1:
        margin1 = -bohl_on_subspace(sys, list(splitting.basis1), w)[0].reported
    if splitting.basis2:
        margin2 = bohl_on_subspace(sys, list(splitting.basis2), w)[1].reported
    return margin1, margin2


def check_ed(
    sys: MatrixSequence, splitting: Splitting, w: Optional[WindowSpec] = None, tol: Optional[float] = None
) -> EDVerdict:
    """
    Exponential dichotomy test of a splitting.

    Args:
        sys: Coefficient sequence
        splitting: Candidate splitting
        w: Window specification
        tol: Verdict margin (settings tol_margin)

    Returns:
        EDVerdict; K is fitted on sampled unit vectors of both subspaces
    """
    w = w or WindowSpec.default(sys.horizon)
    if splitting.dimension != sys.dimension:
        raise DegenerateSplitting(f"Splitting dimension {splitting.dimension} != d={sys.dimension}")
    margins = _subspace_margins(sys, splitting, w)
    state = classify_margins(margins, tol)
    alpha = min(margins)

    log_k = 0.0
    if math.isfinite(alpha) and alpha > 0:
        for x in default_samples(splitting.basis1):
            log_k = max(log_k, _decay_constant(log_norms(sys, x, w.horizon), alpha))
        for x in default_samples(splitting.basis2):
            log_k = max(log_k, _growth_constant(log_norms(sys, x, w.horizon), alpha))
        K = math.exp(log_k)
    else:
        K = math.inf

    logger.info(
        f"ED check: {state.value}, margins=({margins[0]:.4g}, {margins[1]:.4g}), "
        f"alpha={alpha:.4g}, K={K:.4g}"
    )
    return EDVerdict(state == VerdictState.HOLDS, state, float(alpha), float(K), margins)


def check_bd(
    sys: MatrixSequence,
    splitting: Splitting,
    samples: Optional[Sequence] = None,
    w: Optional[WindowSpec] = None,
    tol: Optional[float] = None,
) -> BDVerdict:
    """
    Bohl dichotomy test of a splitting on sampled initial vectors.

    Samples in neither subspace are skipped with a warning; C1 and C2 are
    fitted per sample over all windows m <= n of [0, H].

    Args:
        sys: Coefficient sequence
        splitting: Candidate splitting
        samples: Nonzero vectors (default samples of both subspaces if omitted)
        w: Window specification
        tol: Verdict margin (settings tol_margin)

    Returns:
        BDVerdict
    """
    w = w or WindowSpec.default(sys.horizon)
    if splitting.dimension != sys.dimension:
        raise DegenerateSplitting(f"Splitting dimension {splitting.dimension} != d={sys.dimension}")
    notes = []
    if samples is None:
        # Coordinate axes rarely lie in a non-aligned L1 or L2, so each subspace is sampled
        samples = default_samples(splitting.basis1) + default_samples(splitting.basis2)
        notes.append(f"sample design: per-subspace, {len(samples)} vectors drawn from L1 and L2")
    else:
        notes.append(f"sample design: {len(samples)} caller vectors")

    first, second, skipped = [], [], 0
    for x in samples:
        vector = np.asarray(x, dtype=np.float64).reshape(-1)
        membership = splitting.member(vector)
        if membership == 1:
            first.append(vector)
        elif membership == 2:
            second.append(vector)
        else:
            skipped += 1
    if skipped:
        logger.warning(f"Skipped {skipped} samples lying in neither subspace")
        notes.append(f"skipped {skipped} samples lying in neither subspace")
    if not first and not second:
        raise EmptySampleSet("No sample lies in L1 or L2")

    uppers = map_ordered(lambda x: vector_estimates(sys, x, w)[0].reported, first)
    lowers = map_ordered(lambda x: vector_estimates(sys, x, w)[1].reported, second)
    margins = (
        min((-u for u in uppers), default=math.inf),
        min(lowers, default=math.inf),
    )
    state = classify_margins(margins, tol)
    alpha = min(margins)

    c1: Dict[Tuple[float, ...], float] = {}
    c2: Dict[Tuple[float, ...], float] = {}
    if math.isfinite(alpha):
        for x in first:
            c1[tuple(float(c) for c in x)] = math.exp(_decay_constant(log_norms(sys, x, w.horizon), alpha))
        for x in second:
            c2[tuple(float(c) for c in x)] = math.exp(
                _bohl_lower_constant(log_norms(sys, x, w.horizon), alpha)
            )

    logger.info(f"BD check: {state.value}, margins=({margins[0]:.4g}, {margins[1]:.4g})")
    return BDVerdict(
        state == VerdictState.HOLDS, state, float(alpha), margins, c1, c2, skipped, tuple(notes)
    )


def find_no_bd_witness(
    sys: MatrixSequence,
    directions: Sequence,
    w: Optional[WindowSpec] = None,
    tol: Optional[float] = None,
) -> Optional[Witness]:
    """
    First direction with lower estimate <= tol and upper estimate >= -tol.

    Args:
        sys: Coefficient sequence
        directions: Nonzero candidate initial vectors, scanned in order
        w: Window specification
        tol: Witness band (settings tol_witness)

    Returns:
        Witness, or None if no direction qualifies
    """
    tol = get_settings().tol_witness if tol is None else tol
    w = w or WindowSpec.default(sys.horizon)
    for x in directions:
        upper, lower = vector_estimates(sys, x, w)
        if lower.reported <= tol and upper.reported >= -tol:
            vector = np.asarray(x, dtype=np.float64).reshape(-1)
            logger.info(f"No-BD witness: lower={lower.reported:.4g}, upper={upper.reported:.4g}")
            return Witness(tuple(float(c) for c in vector), lower.reported, upper.reported)
    return None


def _greedy_flag(order: Sequence[np.ndarray]) -> List[np.ndarray]:
    """Independent prefix of the ordered samples."""
    flag: List[np.ndarray] = []
    for x in order:
        candidate = np.column_stack(flag + [x])
        singular = sla.svdvals(candidate)
        if singular[-1] / singular[0] > 1e-8:
            flag.append(x)
        if len(flag) == x.shape[0]:
            break
    return flag


def _sorted_flags(
    sys: MatrixSequence, w: WindowSpec, workers: Optional[int] = None
) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Flags of sampled directions ordered by increasing upper and decreasing lower estimate."""
    samples = _axes_and_random(sys.dimension)
    estimates = map_ordered(lambda x: vector_estimates(sys, x, w), samples, workers)

    # Rounding keeps the sample order (axes first) among numerically tied estimates
    by_upper = sorted(range(len(samples)), key=lambda i: round(estimates[i][0].reported, 9))
    by_lower = sorted(range(len(samples)), key=lambda i: -round(estimates[i][1].reported, 9))
    return (
        _greedy_flag([samples[i] for i in by_upper]),
        _greedy_flag([samples[i] for i in by_lower]),
    )


def flag_splittings(
    sys: MatrixSequence, w: Optional[WindowSpec] = None, workers: Optional[int] = None
) -> List[Splitting]:
    """
    Complementary splittings (flag1[:k], flag2[:d-k]) for k = d..0.

    Candidates for the per-rate verdicts of the spectra; unlike
    search_splitting no estimate is required of them.
    """
    w = w or WindowSpec.default(sys.horizon)
    d = sys.dimension
    flag1, flag2 = _sorted_flags(sys, w, workers)
    candidates: List[Splitting] = []
    for k in range(d, -1, -1):
        if k > len(flag1) or d - k > len(flag2):
            continue
        try:
            candidates.append(Splitting(flag1[:k], flag2[: d - k]))
        except DegenerateSplitting:
            continue
    return candidates


def search_splitting(
    sys: MatrixSequence,
    w: Optional[WindowSpec] = None,
    tol: Optional[float] = None,
    workers: Optional[int] = None,
) -> Optional[Splitting]:
    """
    Heuristic search for a Bohl dichotomy splitting.

    Sampled directions are ordered by their upper (lower) estimates; L1 is the
    longest prefix of the resulting flag whose subspace upper estimate stays
    below -tol, L2 the longest prefix of the dual flag whose lower estimate
    stays above tol. A splitting is returned only if the dimensions add up
    to d and check_bd holds on it.

    Returns:
        Splitting, or None if none was found
    """
    tol = get_settings().tol_margin if tol is None else tol
    w = w or WindowSpec.default(sys.horizon)
    d = sys.dimension
    flag1, flag2 = _sorted_flags(sys, w, workers)
    k = 0
    for size in range(1, len(flag1) + 1):
        if bohl_on_subspace(sys, flag1[:size], w)[0].reported < -tol:
            k = size
        else:
            break

    j = 0
    for size in range(1, len(flag2) + 1):
        if bohl_on_subspace(sys, flag2[:size], w)[1].reported > tol:
            j = size
        else:
            break

    if k + j != d:
        logger.debug(f"No splitting: dim L1={k}, dim L2={j}, d={d}")
        return None
    try:
        splitting = Splitting(flag1[:k], flag2[:j])
    except DegenerateSplitting:
        logger.debug("Grouped flags are not complementary")
        return None
    if not check_bd(sys, splitting, w=w, tol=tol).holds:
        return None
    return splitting


@dataclass(frozen=True)
class UniformityReport:
    """Exponential dichotomy with L1 = R^d against the space upper estimate."""

    ed_holds: bool
    subspace_upper: float
    space_upper: float

    @property
    def consistent(self) -> bool:
        return not self.ed_holds or self.space_upper < 0


def trivial_ed_uniformity(sys: MatrixSequence, w: Optional[WindowSpec] = None) -> UniformityReport:
    """If the trivial splitting (R^d | 0) is an exponential dichotomy, the space upper estimate is negative."""
    w = w or WindowSpec.default(sys.horizon)
    splitting = Splitting(list(np.eye(sys.dimension)), [])
    verdict = check_ed(sys, splitting, w)
    space_upper = upper_bohl_space(sys, w).reported
    return UniformityReport(verdict.holds, -verdict.margins[0], space_upper)


def verdict_rows(label: str, ed: Optional[EDVerdict] = None, bd: Optional[BDVerdict] = None) -> List[dict]:
    """CSV rows for dichotomy verdicts; one row per fitted sample constant."""
    rows: List[dict] = []
    if ed is not None:
        rows.append(
            {
                "target": label,
                "test": "ED",
                "state": ed.state.value,
                "alpha": ed.alpha,
                "constant": ed.K,
                "margin1": ed.margins[0],
                "margin2": ed.margins[1],
                "sample": "",
            }
        )
    if bd is not None:
        for name, samples in (("C1", bd.c1_samples), ("C2", bd.c2_samples)):
            for x, value in samples.items():
                rows.append(
                    {
                        "target": label,
                        "test": f"BD:{name}",
                        "state": bd.state.value,
                        "alpha": bd.alpha,
                        "constant": value,
                        "margin1": bd.margins[0],
                        "margin2": bd.margins[1],
                        "sample": " ".join(repr(c) for c in x),
                    }
                )
    return rows
