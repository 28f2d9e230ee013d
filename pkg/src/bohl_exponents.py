"""
Finite-horizon Bohl exponent estimates.

An upper (lower) Bohl exponent is the largest (smallest) exponential rate
(1/(n-m)) ln(||x(n)|| / ||x(m)||) over windows whose start m and length n-m
both exceed a threshold N. On a finite horizon H the estimate is the
extremum over admissible windows for every N of a WindowSpec, so callers
can read the whole convergence trace.

Estimates of scaled sequences are derived from the base sequence plus the
accumulated rate; results are cached on the base sequence.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.errors import EmptyWindowSet, HorizonExceeded, ZeroVector
from src.settings import get_settings
from src.system_core import MatrixSequence, RuleKind, ordered_product, solution_log_norms

logger = logging.getLogger(__name__)


class EstimateKind(str, Enum):
    UPPER = "upper"
    LOWER = "lower"


class Enumeration(str, Enum):
    ALL_PAIRS = "all_pairs"
    DYADIC_SUBSAMPLE = "dyadic_subsample"


@dataclass(frozen=True)
class WindowSpec:
    """Window thresholds N, horizon H and the enumeration of scanned windows."""

    thresholds: Tuple[int, ...]
    horizon: int
    enumeration: Enumeration = Enumeration.ALL_PAIRS
    min_start: int = 0

    def __post_init__(self):
        """Validate configuration."""
        object.__setattr__(self, "thresholds", tuple(int(n) for n in self.thresholds))
        object.__setattr__(self, "enumeration", Enumeration(self.enumeration))
        if not self.thresholds:
            raise ValueError("Window thresholds must be nonempty")
        if any(b <= a for a, b in zip(self.thresholds, self.thresholds[1:])):
            raise ValueError("Window thresholds must be strictly increasing")
        if self.thresholds[0] < 0:
            raise ValueError("Window thresholds must be natural numbers")
        if 2 * self.thresholds[-1] >= self.horizon:
            raise ValueError(
                f"Largest threshold {self.thresholds[-1]} must be below H/2 = {self.horizon / 2}"
            )
        if self.min_start < 0:
            raise ValueError("Minimal window start must be nonnegative")

    @classmethod
    def default(
        cls,
        horizon: Optional[int] = None,
        thresholds: Optional[Sequence[int]] = None,
    ) -> "WindowSpec":
        """Settings-backed spec; dyadic subsampling above the all-pairs limit."""
        settings = get_settings()
        horizon = horizon or settings.default_horizon
        thresholds = tuple(thresholds or settings.window_thresholds)
        # Keep only thresholds admissible at this horizon
        thresholds = tuple(n for n in thresholds if 2 * n < horizon) or (0,)
        enumeration = (
            Enumeration.ALL_PAIRS
            if horizon <= settings.all_pairs_limit
            else Enumeration.DYADIC_SUBSAMPLE
        )
        return cls(thresholds=thresholds, horizon=horizon, enumeration=enumeration)

    @property
    def stride(self) -> int:
        if self.enumeration == Enumeration.ALL_PAIRS:
            return 1
        limit = get_settings().dyadic_starts
        step = 1
        while self.horizon // step + 1 > limit:
            step *= 2
        return step

    def grid(self) -> np.ndarray:
        """Scanned time points; windows start and end on this grid."""
        return np.arange(0, self.horizon + 1, self.stride)

    def key(self) -> tuple:
        return (self.thresholds, self.horizon, self.enumeration.value, self.min_start, self.stride)

    def past(self, index: int) -> "WindowSpec":
        """Same spec restricted to windows starting after `index`."""
        return WindowSpec(self.thresholds, self.horizon, self.enumeration, max(self.min_start, index + 1))


@dataclass(frozen=True)
class BohlEstimate:
    """Extremal window ratio per threshold N with the achieving windows."""

    kind: EstimateKind
    values: Dict[int, float] = field(default_factory=dict)
    windows: Dict[int, Tuple[int, int]] = field(default_factory=dict)

    @property
    def reported(self) -> float:
        return self.values[max(self.values)]

    @property
    def achieving_window(self) -> Tuple[int, int]:
        return self.windows[max(self.windows)]

    def shifted(self, rate: float) -> "BohlEstimate":
        if rate == 0.0:
            return self
        return BohlEstimate(
            self.kind,
            {n: value + rate for n, value in self.values.items()},
            dict(self.windows),
        )

    def to_rows(self, target: str = "") -> List[dict]:
        """CSV rows (N, value, m, n)."""
        return [
            {
                "kind": self.kind.value,
                "target": target,
                "N": n,
                "value": self.values[n],
                "m": self.windows[n][0],
                "n": self.windows[n][1],
            }
            for n in sorted(self.values)
        ]


# ============================================================================
# WINDOW SCANS
# ============================================================================


def _better(value: float, m: int, best: Optional[Tuple[float, int, int]], upper: bool) -> bool:
    """Extremal comparison with the (smallest m, then smallest n) tie rule."""
    if best is None:
        return True
    if value == best[0]:
        return m < best[1]
    return value > best[0] if upper else value < best[0]


def _assemble(
    kind: EstimateKind, best: Dict[int, Optional[Tuple[float, int, int]]]
) -> BohlEstimate:
    values, windows = {}, {}
    for n, entry in best.items():
        if entry is None:
            raise EmptyWindowSet(f"No admissible window for threshold N={n}", index=n)
        values[n] = float(entry[0])
        windows[n] = (int(entry[1]), int(entry[2]))
    return BohlEstimate(kind, values, windows)


def scan_log_norms(logs: np.ndarray, w: WindowSpec) -> Tuple[BohlEstimate, BohlEstimate]:
    """
    Upper and lower estimates from a log-norm sequence logs[n] = ln ||x(n)||.

    Args:
        logs: Log norms for n = 0..H (at least w.horizon + 1 entries)
        w: Window specification

    Returns:
        (upper, lower) estimates
    """
    grid = w.grid()
    sampled = np.asarray(logs, dtype=np.float64)[grid]
    best_upper: Dict[int, Optional[Tuple[float, int, int]]] = {n: None for n in w.thresholds}
    best_lower: Dict[int, Optional[Tuple[float, int, int]]] = {n: None for n in w.thresholds}

    for i, m in enumerate(grid):
        if m <= w.thresholds[0] or m < w.min_start:
            continue
        gaps = grid[i + 1:] - m
        if gaps.size == 0:
            break
        ratios = (sampled[i + 1:] - sampled[i]) / gaps
        for threshold in w.thresholds:
            if m <= threshold:
                break
            first = int(np.searchsorted(gaps, threshold, side="right"))
            if first >= gaps.size:
                continue
            segment = ratios[first:]
            hi, lo = int(np.argmax(segment)), int(np.argmin(segment))
            if _better(segment[hi], m, best_upper[threshold], True):
                best_upper[threshold] = (segment[hi], m, int(grid[i + 1 + first + hi]))
            if _better(segment[lo], m, best_lower[threshold], False):
                best_lower[threshold] = (segment[lo], m, int(grid[i + 1 + first + lo]))

    return _assemble(EstimateKind.UPPER, best_upper), _assemble(EstimateKind.LOWER, best_lower)


def spectral_norms(stack: np.ndarray) -> np.ndarray:
    """Spectral norms of a stack of square matrices (closed form for d <= 2)."""
    if stack.shape[0] == 0:
        return np.zeros(0)
    d = stack.shape[1]
    if d == 1:
        return np.abs(stack[:, 0, 0])
    if d == 2:
        fro2 = np.einsum("kij,kij->k", stack, stack)
        det = stack[:, 0, 0] * stack[:, 1, 1] - stack[:, 0, 1] * stack[:, 1, 0]
        disc = np.sqrt(np.maximum(fro2 * fro2 - 4.0 * det * det, 0.0))
        return np.sqrt((fro2 + disc) / 2.0)
    return np.linalg.svd(stack, compute_uv=False)[:, 0]


def _block_products(sys: MatrixSequence, grid: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Forward products over consecutive grid cells and their inverses."""
    if len(grid) > 1 and grid[1] - grid[0] == 1:
        stop = int(grid[-1])
        return sys.stack(0, stop), sys.inverse_stack(0, stop)
    forward, backward = [], []
    for a, b in zip(grid[:-1], grid[1:]):
        forward.append(ordered_product(sys.coefficients(int(a), int(b))))
        backward.append(ordered_product([sys.inverse(k) for k in range(int(b) - 1, int(a) - 1, -1)]))
    return np.stack(forward), np.stack(backward)


def scan_transition_norms(sys: MatrixSequence, w: WindowSpec) -> Tuple[BohlEstimate, BohlEstimate]:
    """
    Space estimates: max of ln||Phi(n,m)||/(n-m) and min of -ln||Phi(m,n)||/(n-m).

    Phi(n, m) and Phi(m, n) are carried for every tracked start m at once and
    rescaled after each step (logs of the scale factors accumulate separately).
    """
    grid = w.grid()
    forward, backward = _block_products(sys, grid)
    d = sys.dimension
    best_upper: Dict[int, Optional[Tuple[float, int, int]]] = {n: None for n in w.thresholds}
    best_lower: Dict[int, Optional[Tuple[float, int, int]]] = {n: None for n in w.thresholds}

    fwd = np.zeros((0, d, d))
    bwd = np.zeros((0, d, d))
    fwd_scale = np.zeros(0)
    bwd_scale = np.zeros(0)
    starts = np.zeros(0, dtype=np.int64)

    for j in range(1, len(grid)):
        n = int(grid[j])
        m_new = int(grid[j - 1])
        if fwd.shape[0]:
            fwd = np.matmul(forward[j - 1], fwd)
            bwd = np.matmul(bwd, backward[j - 1])
        if m_new > w.thresholds[0] and m_new >= w.min_start:
            fwd = np.concatenate([fwd, forward[j - 1][None]])
            bwd = np.concatenate([bwd, backward[j - 1][None]])
            fwd_scale = np.append(fwd_scale, 0.0)
            bwd_scale = np.append(bwd_scale, 0.0)
            starts = np.append(starts, m_new)
        if not starts.size:
            continue

        size = np.sqrt(np.einsum("kij,kij->k", fwd, fwd))
        fwd = fwd / size[:, None, None]
        fwd_scale = fwd_scale + np.log(size)
        size = np.sqrt(np.einsum("kij,kij->k", bwd, bwd))
        bwd = bwd / size[:, None, None]
        bwd_scale = bwd_scale + np.log(size)

        gaps = n - starts
        up = (fwd_scale + np.log(spectral_norms(fwd))) / gaps
        down = -(bwd_scale + np.log(spectral_norms(bwd))) / gaps

        for threshold in w.thresholds:
            lo = int(np.searchsorted(starts, threshold, side="right"))
            hi = int(np.searchsorted(starts, n - threshold, side="left"))
            if hi <= lo:
                continue
            i_up = lo + int(np.argmax(up[lo:hi]))
            i_down = lo + int(np.argmin(down[lo:hi]))
            if _better(up[i_up], int(starts[i_up]), best_upper[threshold], True):
                best_upper[threshold] = (up[i_up], int(starts[i_up]), n)
            if _better(down[i_down], int(starts[i_down]), best_lower[threshold], False):
                best_lower[threshold] = (down[i_down], int(starts[i_down]), n)

    return _assemble(EstimateKind.UPPER, best_upper), _assemble(EstimateKind.LOWER, best_lower)


# ============================================================================
# PUBLIC ESTIMATORS
# ============================================================================


def _resolve(sys: MatrixSequence, w: Optional[WindowSpec]) -> WindowSpec:
    w = w or WindowSpec.default(sys.horizon)
    if w.horizon > sys.horizon:
        raise HorizonExceeded(f"Window horizon {w.horizon} exceeds H={sys.horizon}", index=w.horizon)
    return w


def _unit(x0) -> np.ndarray:
    x = np.array(x0, dtype=np.float64).reshape(-1)
    if not np.any(x):
        raise ZeroVector("Initial vector must be nonzero")
    return x


def _constant_scalar_rate(root: MatrixSequence) -> Optional[float]:
    """ln|a| of a one-dimensional constant rule, else None."""
    if root.dimension != 1 or root.kind != RuleKind.CONSTANT:
        return None
    return math.log(abs(float(root.params["matrix"][0, 0])))


def _pin_constant(
    root: MatrixSequence, estimates: Tuple[BohlEstimate, BohlEstimate]
) -> Tuple[BohlEstimate, BohlEstimate]:
    """Every window ratio of a constant scalar rule is ln|a|; replace the rounded sums by it."""
    rate = _constant_scalar_rate(root)
    if rate is None:
        return estimates
    return tuple(
        BohlEstimate(estimate.kind, {n: rate for n in estimate.values}, dict(estimate.windows))
        for estimate in estimates
    )


def _root_log_norms(root: MatrixSequence, x: np.ndarray, horizon: int) -> np.ndarray:
    def compute() -> np.ndarray:
        logs = solution_log_norms(root, x, horizon)
        logs.setflags(write=False)
        return logs

    return root.cached_estimate(("logs", x.tobytes(), horizon), compute)


def log_norms(sys: MatrixSequence, x0, horizon: Optional[int] = None) -> np.ndarray:
    """ln(||x(n, x0)|| / ||x0||) for n = 0..H, computed once per scaling root."""
    horizon = sys.horizon if horizon is None else horizon
    root, rate = sys.scaling_root()
    logs = _root_log_norms(root, _unit(x0), horizon)
    if rate == 0.0:
        return logs
    return logs + rate * np.arange(horizon + 1)


def estimate_from_log_norms(logs: np.ndarray, w: WindowSpec, kind: EstimateKind) -> BohlEstimate:
    """Single estimate from a precomputed log-norm sequence (w.min_start restricts window starts)."""
    upper, lower = scan_log_norms(logs, w)
    return upper if EstimateKind(kind) == EstimateKind.UPPER else lower


def vector_estimates(
    sys: MatrixSequence, x0, w: Optional[WindowSpec] = None
) -> Tuple[BohlEstimate, BohlEstimate]:
    """(upper, lower) vector estimates of the solution through x0."""
    w = _resolve(sys, w)
    x = _unit(x0)
    root, rate = sys.scaling_root()

    def compute():
        return _pin_constant(root, scan_log_norms(_root_log_norms(root, x, w.horizon), w))

    cached = root.cached_estimate(("vector", x.tobytes(), w.key()), compute)
    return cached[0].shifted(rate), cached[1].shifted(rate)


def space_estimates(sys: MatrixSequence, w: Optional[WindowSpec] = None) -> Tuple[BohlEstimate, BohlEstimate]:
    """(upper, lower) estimates over the whole state space."""
    w = _resolve(sys, w)
    root, rate = sys.scaling_root()

    def compute():
        logger.debug(f"Scanning transition norms of {root} (stride={w.stride})")
        return _pin_constant(root, scan_transition_norms(root, w))

    cached = root.cached_estimate(("space", w.key()), compute)
    return cached[0].shifted(rate), cached[1].shifted(rate)


def upper_bohl_vector(sys: MatrixSequence, x0, w: Optional[WindowSpec] = None) -> BohlEstimate:
    """
    Upper Bohl exponent estimate of the solution through x0.

    Args:
        sys: Coefficient sequence
        x0: Nonzero initial vector
        w: Window specification (settings default if omitted)

    Returns:
        BohlEstimate with one value per threshold
    """
    return vector_estimates(sys, x0, w)[0]


def lower_bohl_vector(sys: MatrixSequence, x0, w: Optional[WindowSpec] = None) -> BohlEstimate:
    """Lower Bohl exponent estimate of the solution through x0."""
    return vector_estimates(sys, x0, w)[1]


def upper_bohl_space(sys: MatrixSequence, w: Optional[WindowSpec] = None) -> BohlEstimate:
    """Upper Bohl exponent estimate of the whole space via ||Phi(n, m)||."""
    return space_estimates(sys, w)[0]


def lower_bohl_space(sys: MatrixSequence, w: Optional[WindowSpec] = None) -> BohlEstimate:
    """Lower Bohl exponent estimate of the whole space via ||Phi(m, n)||^{-1}."""
    return space_estimates(sys, w)[1]


def bohl_on_subspace(
    sys: MatrixSequence, basis: Sequence, w: Optional[WindowSpec] = None
) -> Tuple[BohlEstimate, BohlEstimate]:
    """
    Space estimates of the L-subsystem, i.e. the exponents of the subspace L.

    Args:
        sys: Coefficient sequence
        basis: Independent vectors spanning L
        w: Window specification

    Returns:
        (upper, lower) estimates
    """
    from src.triangular import subsystem, triangularize

    w = _resolve(sys, w)
    root, rate = sys.scaling_root()
    matrix = np.array(basis, dtype=np.float64).reshape(len(basis), -1)
    def compute():
        form = triangularize(root, list(matrix), w.horizon)
        return space_estimates(subsystem(form), w)

    cached = root.cached_estimate(("subspace", matrix.tobytes(), w.key()), compute)
    return cached[0].shifted(rate), cached[1].shifted(rate)


def estimates_to_rows(estimates: Sequence[Tuple[str, BohlEstimate]]) -> List[dict]:
    """Flatten labelled estimates into CSV rows."""
    rows: List[dict] = []
    for target, estimate in estimates:
        rows.extend(estimate.to_rows(target))
    return rows
