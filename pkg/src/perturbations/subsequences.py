"""
Extremal window subsequences (tau_l, s_l).

Stage l searches windows whose start and length both exceed N_l, with
N_0 = 2 and N_l = s_{l-1} + 1, and keeps the first admissible window end
(largest admissible start at that end). Transition norms of all tracked
starts are carried at once and rescaled every step.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from src.bohl_exponents import WindowSpec, lower_bohl_space, spectral_norms, upper_bohl_space
from src.errors import PrefixEmpty
from src.models.certificates import InequalityCheck
from src.settings import get_settings
from src.system_core import MatrixSequence

logger = logging.getLogger(__name__)

FIRST_THRESHOLD = 2


@dataclass(frozen=True)
class SubsequencePair:
    """Emitted windows (tau_l, s_l) with their tolerances and verified inequalities."""

    kind: str
    pairs: Tuple[Tuple[int, int], ...]
    epsilons: Tuple[float, ...]
    log_norms: Tuple[float, ...]
    checks: Tuple[InequalityCheck, ...]
    horizon_exhausted: bool = False

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def gaps(self) -> List[int]:
        return [s - tau for tau, s in self.pairs]

    @property
    def holds(self) -> bool:
        return all(check.holds for check in self.checks)

    def to_rows(self) -> List[dict]:
        return [
            {"kind": self.kind, "stage": i, "tau": tau, "s": s, "epsilon": eps, "log_norm": value}
            for i, ((tau, s), eps, value) in enumerate(zip(self.pairs, self.epsilons, self.log_norms))
        ]


def _check_epsilons(eps: Sequence[float]) -> List[float]:
    values = [float(e) for e in eps]
    if not values:
        raise ValueError("Epsilon list must be nonempty")
    if any(e <= 0 or e >= math.pi / 2 for e in values):
        raise ValueError("Epsilons must lie in (0, pi/2)")
    if any(b > a for a, b in zip(values, values[1:])):
        raise ValueError("Epsilons must be nonincreasing")
    return values


def window_log_norms(
    sys: MatrixSequence, first_start: int, stop: int, backward: bool = False
) -> Iterator[Tuple[int, np.ndarray, np.ndarray]]:
    """
    For every window end n = first_start+1..stop yield (n, starts, logs).

    logs[i] is ln||Phi(n, starts[i])|| or, backward, ln||Phi(starts[i], n)||,
    for all starts first_start <= tau < n.
    """
    d = sys.dimension
    products = np.zeros((0, d, d))
    scales = np.zeros(0)
    starts = np.zeros(0, dtype=np.int64)
    for n in range(first_start, stop):
        step = sys.inverse(n) if backward else sys.coefficient(n)
        if products.shape[0]:
            products = np.matmul(products, step) if backward else np.matmul(step, products)
        products = np.concatenate([products, step[None]])
        scales = np.append(scales, 0.0)
        starts = np.append(starts, n)

        size = np.sqrt(np.einsum("kij,kij->k", products, products))
        products = products / size[:, None, None]
        scales = scales + np.log(size)
        yield n + 1, starts, scales + np.log(spectral_norms(products))


def _search_stage(
    sys: MatrixSequence,
    threshold: int,
    gap_floor: float,
    stop: int,
    backward: bool,
    accept: Callable[[np.ndarray, np.ndarray], np.ndarray],
) -> Optional[Tuple[int, int, float]]:
    """First window end with an admissible start; the largest such start wins."""
    first_start = threshold + 1
    min_gap = max(threshold + 1, int(math.floor(gap_floor)) + 1)
    for n, starts, logs in window_log_norms(sys, first_start, stop, backward):
        count = int(np.searchsorted(starts, n - min_gap, side="right"))
        if count == 0:
            continue
        gaps = n - starts[:count]
        mask = accept(logs[:count], gaps)
        hits = np.flatnonzero(mask)
        if hits.size:
            i = int(hits[-1])
            return int(starts[i]), n, float(logs[i])
    return None


def growth_subsequence(
    sys: MatrixSequence, eps: Sequence[float], w: Optional[WindowSpec] = None
) -> SubsequencePair:
    """
    Windows with ||Phi(s_l, tau_l)|| >= e^{-eps_l (s_l - tau_l)}.

    Args:
        sys: Coefficient sequence whose upper space exponent is nonnegative
        eps: Nonincreasing tolerances, one per stage
        w: Window specification (its horizon bounds the search)

    Returns:
        SubsequencePair with the longest prefix realizable within H
    """
    values = _check_epsilons(eps)
    w = w or WindowSpec.default(sys.horizon)
    tol = get_settings().tol_margin
    space_upper = upper_bohl_space(sys, w).reported
    if space_upper < -tol:
        raise PrefixEmpty(f"Upper space estimate {space_upper:.4g} is below -{tol:g}", index=0)

    pairs, used, logs, checks = [], [], [], []
    threshold = FIRST_THRESHOLD
    exhausted = False
    for stage, e in enumerate(values):
        found = _search_stage(
            sys,
            threshold,
            0.0,
            w.horizon,
            False,
            lambda log_norm, gaps, e=e: log_norm / gaps > -e,
        )
        if found is None:
            exhausted = True
            break
        tau, s, log_norm = found
        pairs.append((tau, s))
        used.append(e)
        logs.append(log_norm)
        checks.append(InequalityCheck.build_log("growth", log_norm, -e * (s - tau), window=(tau, s)))
        logger.debug(f"Growth stage {stage}: window ({tau}, {s}), rate {log_norm / (s - tau):.4g}")
        threshold = s + 1

    if not pairs:
        raise PrefixEmpty("No admissible growth window at stage 0", index=0)
    if exhausted:
        logger.warning(f"Growth subsequence stopped after {len(pairs)} stages at H={w.horizon}")
    return SubsequencePair("growth", tuple(pairs), tuple(used), tuple(logs), tuple(checks), exhausted)


def decay_subsequence(
    sys: MatrixSequence, delta: float, eps: Sequence[float], w: Optional[WindowSpec] = None
) -> SubsequencePair:
    """
    Windows with ||Phi(tau_l, s_l)||^{-1} <= e^{(-delta + eps_l)(s_l - tau_l)}
    and gaps long enough that ln(2 / sin eps_l) < eps_l (s_l - tau_l).

    The last admissible window end is H - 1 so a backward rotation fits.
    """
    values = _check_epsilons(eps)
    if delta <= 0:
        raise ValueError("delta must be positive")
    w = w or WindowSpec.default(sys.horizon)
    tol = get_settings().tol_margin
    space_lower = lower_bohl_space(sys, w).reported
    if space_lower > -delta + tol:
        raise PrefixEmpty(
            f"Lower space estimate {space_lower:.4g} exceeds -delta + tol = {-delta + tol:.4g}", index=0
        )

    pairs, used, logs, checks = [], [], [], []
    threshold = FIRST_THRESHOLD
    exhausted = False
    for stage, e in enumerate(values):
        slack = math.log(2.0 / math.sin(e))
        found = _search_stage(
            sys,
            threshold,
            slack / e,
            w.horizon - 1,
            True,
            lambda log_norm, gaps, e=e: -log_norm / gaps <= -delta + e,
        )
        if found is None:
            exhausted = True
            break
        tau, s, log_norm = found
        gap = s - tau
        pairs.append((tau, s))
        used.append(e)
        logs.append(log_norm)
        checks.append(InequalityCheck.build_log("sine_slack", e * gap, slack, window=(tau, s)))
        checks.append(
            InequalityCheck.build_log("decay_rate", (-delta + e) * gap, -log_norm, window=(tau, s))
        )
        logger.debug(f"Decay stage {stage}: window ({tau}, {s}), rate {-log_norm / gap:.4g}")
        threshold = s + 1

    if not pairs:
        raise PrefixEmpty("No admissible decay window at stage 0", index=0)
    if exhausted:
        logger.warning(f"Decay subsequence stopped after {len(pairs)} stages at H={w.horizon}")
    return SubsequencePair("decay", tuple(pairs), tuple(used), tuple(logs), tuple(checks), exhausted)
