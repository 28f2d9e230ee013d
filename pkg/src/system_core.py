"""
Coefficient sequences, transition matrices and solutions.

A MatrixSequence is a rule-based generator of the coefficients A(n) of
x(n+1) = A(n)x(n) on a finite horizon [0, H]. Each evaluated coefficient is
certified invertible against a condition floor; transition matrices are
served by a TransitionOracle that caches Phi(n,0) at a fixed stride.
"""

import bisect
import concurrent.futures
import logging
import math
import threading
from collections import OrderedDict
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as sla

from src.errors import HorizonExceeded, NonInvertibleCoefficient
from src.settings import get_settings

logger = logging.getLogger(__name__)


class RuleKind(str, Enum):
    """Generation rule of a coefficient sequence."""

    CONSTANT = "constant"
    PERIODIC = "periodic"
    BLOCK_SCHEDULE = "block_schedule"
    EXPLICIT = "explicit"
    PERTURBED = "perturbed"
    SCALED = "scaled"


def freeze(matrix: Any) -> np.ndarray:
    """Return a float64 read-only copy of a matrix or vector."""
    array = np.array(matrix, dtype=np.float64)
    array.setflags(write=False)
    return array


def ordered_product(matrices: Sequence[np.ndarray], start: Optional[np.ndarray] = None) -> np.ndarray:
    """Left-to-right accumulated product M_last ... M_first @ start."""
    if start is None:
        dim = matrices[0].shape[0] if len(matrices) else 0
        product = np.eye(dim)
    else:
        product = np.array(start, dtype=np.float64)
    for matrix in matrices:
        product = matrix @ product
    return product


class MatrixSequence:
    """
    Immutable coefficient sequence A(0), A(1), ... evaluated on [0, H].

    Construct through the classmethods (constant, periodic, block_schedule,
    explicit, perturbed, scaled). Evaluation is pure; the internal caches
    (certificates, inverses, transition checkpoints, estimates) are guarded
    by a lock so concurrent readers see complete entries.
    """

    def __init__(
        self,
        kind: RuleKind,
        dimension: int,
        horizon: int,
        rule: Callable[[int], np.ndarray],
        base: Optional["MatrixSequence"] = None,
        rate: float = 0.0,
        plan: Any = None,
        params: Optional[Dict[str, Any]] = None,
        condition_floor: Optional[float] = None,
        checkpoint_stride: Optional[int] = None,
    ):
        if dimension < 1:
            raise ValueError("Dimension must be positive")
        if horizon < 1:
            raise ValueError("Horizon must be positive")

        settings = get_settings()
        self.kind = kind
        self.dimension = dimension
        self.horizon = horizon
        self.base = base
        self.rate = rate
        self.plan = plan
        self.params = params or {}
        self.condition_floor = (
            condition_floor if condition_floor is not None else settings.condition_floor
        )
        self.checkpoint_stride = checkpoint_stride or settings.checkpoint_stride

        self._rule = rule
        self._lock = threading.RLock()
        self._certified: Dict[int, bool] = {}
        self._inverses: Dict[int, np.ndarray] = {}
        self._oracle: Optional["TransitionOracle"] = None
        # Shared by the estimators; keyed by vector bytes and window spec
        self.estimate_cache: Dict[Any, Any] = {}

    # ------------------------------------------------------------------
    # Constructors
    # ------------------------------------------------------------------

    @classmethod
    def constant(cls, matrix: Any, horizon: int, **kwargs) -> "MatrixSequence":
        frozen = freeze(np.atleast_2d(matrix))
        return cls(
            RuleKind.CONSTANT,
            frozen.shape[0],
            horizon,
            lambda n: frozen,
            params={"matrix": frozen},
            **kwargs,
        )

    @classmethod
    def identity(cls, dimension: int, horizon: int, **kwargs) -> "MatrixSequence":
        return cls.constant(np.eye(dimension), horizon, **kwargs)

    @classmethod
    def periodic(cls, matrices: Sequence[Any], horizon: int, **kwargs) -> "MatrixSequence":
        if not matrices:
            raise ValueError("Periodic rule needs at least one matrix")
        frozen = [freeze(np.atleast_2d(m)) for m in matrices]
        period = len(frozen)
        return cls(
            RuleKind.PERIODIC,
            frozen[0].shape[0],
            horizon,
            lambda n: frozen[n % period],
            params={"matrices": frozen},
            **kwargs,
        )

    @classmethod
    def block_schedule(
        cls,
        blocks: Sequence[Tuple[int, Any]],
        horizon: int,
        cyclic: bool = False,
        **kwargs,
    ) -> "MatrixSequence":
        """Consecutive blocks of constant coefficients; the last block persists unless cyclic."""
        if not blocks:
            raise ValueError("Block schedule needs at least one block")
        lengths = [int(length) for length, _ in blocks]
        if any(length < 1 for length in lengths):
            raise ValueError("Block lengths must be positive")
        frozen = [freeze(np.atleast_2d(m)) for _, m in blocks]
        ends = list(np.cumsum(lengths))
        total = ends[-1]

        def rule(n: int) -> np.ndarray:
            if n >= total:
                if not cyclic:
                    return frozen[-1]
                n = n % total
            return frozen[bisect.bisect_right(ends, n)]

        return cls(
            RuleKind.BLOCK_SCHEDULE,
            frozen[0].shape[0],
            horizon,
            rule,
            params={"blocks": list(zip(lengths, frozen)), "cyclic": cyclic},
            **kwargs,
        )

    @classmethod
    def explicit(
        cls,
        prefix: Sequence[Any],
        horizon: int,
        tail: Optional["MatrixSequence"] = None,
        **kwargs,
    ) -> "MatrixSequence":
        """Listed coefficients A(0..len-1) followed by a tail rule (identity by default)."""
        if not len(prefix):
            raise ValueError("Explicit rule needs a nonempty prefix")
        frozen = [freeze(np.atleast_2d(m)) for m in prefix]
        dimension = frozen[0].shape[0]
        if tail is None:
            tail = cls.identity(dimension, max(horizon, 1))
        length = len(frozen)

        def rule(n: int) -> np.ndarray:
            if n < length:
                return frozen[n]
            return tail.evaluate(n - length)

        return cls(
            RuleKind.EXPLICIT,
            dimension,
            horizon,
            rule,
            base=tail,
            params={"prefix": frozen},
            **kwargs,
        )

    @classmethod
    def perturbed(cls, base: "MatrixSequence", plan: Any) -> "MatrixSequence":
        """A(n) + Q(n); indices outside the plan's support return the base objects."""
        computed: Dict[int, np.ndarray] = {}
        rate = getattr(plan, "scaling_rate", None)
        factor = math.exp(rate) if rate is not None else None

        def rule(n: int) -> np.ndarray:
            if n not in plan.support:
                return base.evaluate(n)
            if n not in computed:
                if factor is not None:
                    # Dense scaling plans act as the scaled rule
                    computed[n] = freeze(factor * base.evaluate(n))
                else:
                    computed[n] = freeze(base.evaluate(n) + plan.support[n])
            return computed[n]

        return cls(
            RuleKind.PERTURBED,
            base.dimension,
            base.horizon,
            rule,
            base=base,
            plan=plan,
            condition_floor=base.condition_floor,
            checkpoint_stride=base.checkpoint_stride,
        )

    @classmethod
    def scaled(cls, base: "MatrixSequence", rate: float) -> "MatrixSequence":
        """e^{rate} A(n); Bohl estimates of the result are the base estimates plus rate."""
        factor = math.exp(rate)
        computed: Dict[int, np.ndarray] = {}

        def rule(n: int) -> np.ndarray:
            if n not in computed:
                computed[n] = freeze(factor * base.evaluate(n))
            return computed[n]

        return cls(
            RuleKind.SCALED,
            base.dimension,
            base.horizon,
            rule,
            base=base,
            rate=float(rate),
            condition_floor=base.condition_floor,
            checkpoint_stride=base.checkpoint_stride,
        )

    # ------------------------------------------------------------------
    # Evaluation
    # ------------------------------------------------------------------

    def evaluate(self, n: int) -> np.ndarray:
        """Raw rule evaluation without horizon or invertibility checks."""
        return self._rule(int(n))

    def coefficient(self, n: int) -> np.ndarray:
        """Certified coefficient A(n) for 0 <= n <= H."""
        n = int(n)
        if n < 0 or n > self.horizon:
            raise HorizonExceeded(f"Coefficient outside [0, {self.horizon}]", index=n)
        matrix = self.evaluate(n)
        if n not in self._certified:
            self._certify(n, matrix)
        return matrix

    def _certify(self, n: int, matrix: np.ndarray) -> None:
        singular = sla.svdvals(matrix)
        smallest, largest = singular[-1], singular[0]
        if not np.isfinite(largest) or largest == 0.0 or smallest / largest < self.condition_floor:
            raise NonInvertibleCoefficient(
                f"Coefficient fails the condition floor {self.condition_floor:g}", index=n
            )
        with self._lock:
            self._certified[n] = True

    def inverse(self, n: int) -> np.ndarray:
        """A(n)^{-1}, cached."""
        n = int(n)
        cached = self._inverses.get(n)
        if cached is not None:
            return cached
        inverse = freeze(np.linalg.inv(self.coefficient(n)))
        with self._lock:
            self._inverses[n] = inverse
        return inverse

    def cached_estimate(self, key: Any, compute: Callable[[], Any]) -> Any:
        """estimate_cache[key], computed outside the lock; the first stored value wins."""
        with self._lock:
            cached = self.estimate_cache.get(key)
        if cached is None:
            value = compute()
            with self._lock:
                cached = self.estimate_cache.setdefault(key, value)
        return cached

    def coefficients(self, start: int, stop: int) -> List[np.ndarray]:
        """Certified coefficients A(start), ..., A(stop-1)."""
        return [self.coefficient(n) for n in range(start, stop)]

    def stack(self, start: int, stop: int) -> np.ndarray:
        """Coefficients A(start..stop-1) stacked into shape (stop-start, d, d)."""
        if stop <= start:
            return np.zeros((0, self.dimension, self.dimension))
        return np.stack(self.coefficients(start, stop))

    def inverse_stack(self, start: int, stop: int) -> np.ndarray:
        if stop <= start:
            return np.zeros((0, self.dimension, self.dimension))
        return np.stack([self.inverse(n) for n in range(start, stop)])

    # ------------------------------------------------------------------
    # Structure
    # ------------------------------------------------------------------

    def scaling_root(self) -> Tuple["MatrixSequence", float]:
        """Peel nested scaled rules: returns (base, total rate)."""
        sequence, rate = self, 0.0
        while True:
            if sequence.kind == RuleKind.SCALED:
                rate += sequence.rate
            elif sequence.kind == RuleKind.PERTURBED and sequence.scaling_plan_covers():
                rate += sequence.plan.scaling_rate
            else:
                break
            sequence = sequence.base
        return sequence, rate

    def scaling_plan_covers(self) -> bool:
        """True for a perturbation by a dense scaling plan covering [0, H]."""
        rate = getattr(self.plan, "scaling_rate", None)
        if self.kind != RuleKind.PERTURBED or rate is None:
            return False
        return all(n in self.plan.support for n in range(self.horizon + 1))

    def with_horizon(self, horizon: int) -> "MatrixSequence":
        """Same rule on another horizon (fresh caches)."""
        return MatrixSequence(
            self.kind,
            self.dimension,
            horizon,
            self._rule,
            base=self.base,
            rate=self.rate,
            plan=self.plan,
            params=self.params,
            condition_floor=self.condition_floor,
            checkpoint_stride=self.checkpoint_stride,
        )

    @property
    def oracle(self) -> "TransitionOracle":
        with self._lock:
            if self._oracle is None:
                self._oracle = TransitionOracle(self, self.checkpoint_stride)
            return self._oracle

    def __repr__(self) -> str:
        return f"MatrixSequence(kind={self.kind.value}, d={self.dimension}, H={self.horizon})"


class TransitionOracle:
    """
    Transition matrices Phi(n, m) of a MatrixSequence.

    Phi(n, 0) is cached at checkpoints every `stride` steps and recomputed in
    between; other pairs are direct products. Recently used pairs are kept in
    a bounded LRU map.
    """

    def __init__(self, source: MatrixSequence, stride: int, max_entries: int = 1024):
        if stride < 1:
            raise ValueError("Checkpoint stride must be positive")
        self.source = source
        self.stride = stride
        self.max_entries = max_entries
        self._checkpoints: Dict[int, np.ndarray] = {0: freeze(np.eye(source.dimension))}
        self._recent: "OrderedDict[Tuple[int, int], np.ndarray]" = OrderedDict()
        self._lock = threading.RLock()

    def _checkpoint(self, c: int) -> np.ndarray:
        with self._lock:
            if c in self._checkpoints:
                return self._checkpoints[c]
            known = max(k for k in self._checkpoints if k <= c)
            product = self._checkpoints[known]
            for start in range(known, c, self.stride):
                product = freeze(
                    ordered_product(self.source.coefficients(start, start + self.stride), product)
                )
                self._checkpoints[start + self.stride] = product
            return self._checkpoints[c]

    def _from_origin(self, n: int) -> np.ndarray:
        c = (n // self.stride) * self.stride
        return ordered_product(self.source.coefficients(c, n), self._checkpoint(c))

    def phi(self, n: int, m: int) -> np.ndarray:
        n, m = int(n), int(m)
        horizon = self.source.horizon
        for t in (n, m):
            if t < 0 or t > horizon:
                raise HorizonExceeded(f"Time outside [0, {horizon}]", index=t)
        key = (n, m)
        with self._lock:
            if key in self._recent:
                self._recent.move_to_end(key)
                return self._recent[key]

        if n == m:
            result = np.eye(self.source.dimension)
        elif n > m and m == 0:
            result = self._from_origin(n)
        elif n > m:
            result = ordered_product(self.source.coefficients(m, n))
        else:
            # Phi(n, m) = A(n)^{-1} ... A(m-1)^{-1}
            result = np.eye(self.source.dimension)
            for k in range(m - 1, n - 1, -1):
                result = np.linalg.solve(self.source.coefficient(k), result)

        result = freeze(result)
        with self._lock:
            self._recent[key] = result
            if len(self._recent) > self.max_entries:
                self._recent.popitem(last=False)
        return result


# ============================================================================
# OPERATIONS
# ============================================================================


def transition(sys: MatrixSequence, n: int, m: int) -> np.ndarray:
    """
    Transition matrix Phi_A(n, m).

    Args:
        sys: Coefficient sequence
        n: Target time
        m: Start time

    Returns:
        Phi(n, m) = A(n-1)...A(m) for n > m, I for n = m, the inverse product for n < m
    """
    return sys.oracle.phi(n, m)


def evolve(sys: MatrixSequence, m: int, x_m: Any, n: int) -> np.ndarray:
    """
    Solution value x(n, m, x_m), computed step by step.

    Args:
        sys: Coefficient sequence
        m: Initial time
        x_m: State at time m
        n: Target time

    Returns:
        State at time n
    """
    x = np.array(x_m, dtype=np.float64).reshape(-1)
    if x.shape[0] != sys.dimension:
        raise ValueError(f"Vector dimension {x.shape[0]} does not match d={sys.dimension}")
    for t in (n, m):
        if t < 0 or t > sys.horizon:
            raise HorizonExceeded(f"Time outside [0, {sys.horizon}]", index=t)
    if n >= m:
        for k in range(m, n):
            x = sys.coefficient(k) @ x
    else:
        for k in range(m - 1, n - 1, -1):
            x = np.linalg.solve(sys.coefficient(k), x)
    return x


def trajectory(sys: MatrixSequence, x0: Any, stop: Optional[int] = None) -> np.ndarray:
    """All states x(0..stop, x0) as rows (no rescaling; may overflow for long horizons)."""
    stop = sys.horizon if stop is None else stop
    x = np.array(x0, dtype=np.float64).reshape(-1)
    states = np.empty((stop + 1, sys.dimension))
    states[0] = x
    for k in range(stop):
        x = sys.coefficient(k) @ x
        states[k + 1] = x
    return states


def log_norm_path(sys: MatrixSequence, x: Any, start: int, stop: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Logs ln(||x(n)|| / ||x(start)||) for n = start..stop and the unit state at stop.

    The direction is renormalized after every step so strongly expanding or
    contracting systems never overflow. For stop < start the path runs
    backwards and logs[i] refers to n = start - i.
    """
    u = np.array(x, dtype=np.float64).reshape(-1)
    u = u / np.linalg.norm(u)
    steps = abs(stop - start)
    logs = np.empty(steps + 1)
    logs[0] = 0.0
    total = 0.0
    for i in range(steps):
        if stop >= start:
            y = sys.coefficient(start + i) @ u
        else:
            y = np.linalg.solve(sys.coefficient(start - i - 1), u)
        size = np.linalg.norm(y)
        total += math.log(size)
        logs[i + 1] = total
        u = y / size
    return logs, u


def solution_log_norms(sys: MatrixSequence, x0: Any, stop: Optional[int] = None) -> np.ndarray:
    """Incremental logs ln(||x(n, x0)|| / ||x0||) for n = 0..stop."""
    stop = sys.horizon if stop is None else stop
    return log_norm_path(sys, x0, 0, stop)[0]


def scaled_product(matrices: Sequence[np.ndarray]) -> Tuple[np.ndarray, float]:
    """
    Product M_last ... M_first rescaled to unit Frobenius norm after every factor.

    Returns:
        (unit product, log of the removed scale)
    """
    dim = matrices[0].shape[0]
    product = np.eye(dim)
    scale = 0.0
    for matrix in matrices:
        product = matrix @ product
        size = np.linalg.norm(product)
        product = product / size
        scale += math.log(size)
    return product, scale


def scaled_inverse_product(matrices: Sequence[np.ndarray]) -> Tuple[np.ndarray, float]:
    """
    Inverse product M_first^{-1} ... M_last^{-1} with the same rescaling.

    Returns:
        (unit product, log of the removed scale)
    """
    dim = matrices[0].shape[0]
    product = np.eye(dim)
    scale = 0.0
    for matrix in reversed(matrices):
        product = np.linalg.solve(matrix, product)
        size = np.linalg.norm(product)
        product = product / size
        scale += math.log(size)
    return product, scale


def lyapunov_bounds(sys: MatrixSequence, start: int = 0, stop: Optional[int] = None) -> Tuple[float, float]:
    """
    Exact maxima of ||A(n)|| and ||A(n)^{-1}|| over n in [start, stop].

    Returns:
        (b_fwd, b_inv) in the spectral norm
    """
    stop = sys.horizon if stop is None else stop
    singular = np.linalg.svd(sys.stack(start, stop + 1), compute_uv=False)
    b_fwd = float(np.max(singular[:, 0]))
    b_inv = float(np.max(1.0 / singular[:, -1]))
    logger.debug(f"Lyapunov bounds on [{start}, {stop}]: b_fwd={b_fwd:.6g}, b_inv={b_inv:.6g}")
    return b_fwd, b_inv


def invertibility_margin(sys: MatrixSequence, start: int = 0, stop: Optional[int] = None) -> float:
    """Smallest singular value of A(n) over the range; perturbations below it keep A(n) invertible."""
    stop = sys.horizon if stop is None else stop
    singular = np.linalg.svd(sys.stack(start, stop + 1), compute_uv=False)
    return float(np.min(singular[:, -1]))


def sup_inf_norm_bound(sys: MatrixSequence, start: int = 0, stop: Optional[int] = None) -> float:
    """b = max(sup ||A(n)||, sup ||A(n)^{-1}||) over the range, used as the stage norm scale."""
    b_fwd, b_inv = lyapunov_bounds(sys, start, stop)
    return max(b_fwd, b_inv)


def map_ordered(fn: Callable[[Any], Any], items: Sequence[Any], workers: Optional[int] = None) -> List[Any]:
    """Apply fn to every item, in a thread pool when workers > 1; results keep the input order."""
    workers = workers or get_settings().threads
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(fn, items))
