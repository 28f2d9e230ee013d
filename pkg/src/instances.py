"""
Test-input and demo generators.

The NU family has uniformly negative solution exponents while its transition
matrices grow on long windows (upper space estimate positive). Instances are
admitted to tests only after validate_nu_instance confirms the gap at the
WindowSpec in use.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg as sla

from src.bohl_exponents import WindowSpec, lower_bohl_space, upper_bohl_space, vector_estimates
from src.dichotomy import Splitting, default_samples
from src.settings import get_settings
from src.system_core import MatrixSequence, map_ordered

logger = logging.getLogger(__name__)


def random_lyapunov(d: int, horizon: int, seed: int, spread: float = 0.2) -> MatrixSequence:
    """
    Seeded sequence A(n) = R(n)(I + spread G(n)/||G(n)||) with R(n) orthogonal.

    Singular values of every coefficient lie in [1 - spread, 1 + spread].
    """
    if not 0 <= spread < 1:
        raise ValueError("spread must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    prefix = []
    for _ in range(horizon + 1):
        q, r = sla.qr(rng.standard_normal((d, d)))
        q = q * np.where(np.diag(r) < 0, -1.0, 1.0)
        g = rng.standard_normal((d, d))
        prefix.append(q @ (np.eye(d) + spread * g / np.linalg.norm(g, 2)))
    return MatrixSequence.explicit(prefix, horizon)


def _dyadic_blocks(
    horizon: int, first: np.ndarray, second: np.ndarray
) -> List[Tuple[int, np.ndarray]]:
    """Alternating blocks of length 2*4^j covering [0, H]."""
    blocks: List[Tuple[int, np.ndarray]] = []
    covered, j = 0, 0
    while covered <= horizon:
        length = 2 * 4**j
        blocks.extend([(length, first), (length, second)])
        covered += 2 * length
        j += 1
    return blocks


def _nu_blocks(
    horizon: int, decay_rate: float, coupling: float, growth: float, decay: float
) -> List[Tuple[int, np.ndarray]]:
    slow = np.array([[math.exp(-decay_rate), coupling], [0.0, math.exp(-decay)]])
    fast = np.array([[math.exp(-decay_rate), coupling], [0.0, math.exp(growth)]])
    return _dyadic_blocks(horizon, slow, fast)


def nu_instance(
    horizon: int = 2048,
    decay_rate: float = 0.15,
    coupling: float = 0.25,
    growth: float = 0.1,
    decay: float = 0.6,
) -> MatrixSequence:
    """
    A(n) = [[e^{-decay_rate}, coupling], [0, b(n)]] with b(n) = e^{-decay} on
    decay blocks and e^{growth} on growth blocks of length 2*4^j.
    """
    return MatrixSequence.block_schedule(_nu_blocks(horizon, decay_rate, coupling, growth, decay), horizon)


def nu_growth_instance(
    horizon: int = 2048,
    growth_rate: float = 0.15,
    coupling: float = 0.25,
    growth: float = 0.6,
    decay: float = 0.1,
) -> MatrixSequence:
    """
    Time-dual family A(n) = [[b(n), 0], [coupling, e^{growth_rate}]]: every
    solution grows, while long decay blocks of b(n) push the lower space
    estimate below zero.

    The coupling feeds the first component into the second, so solutions
    leaving a growth block keep growing through the next decay block.
    """
    fast = np.array([[math.exp(growth), 0.0], [coupling, math.exp(growth_rate)]])
    slow = np.array([[math.exp(-decay), 0.0], [coupling, math.exp(growth_rate)]])
    return MatrixSequence.block_schedule(_dyadic_blocks(horizon, fast, slow), horizon)


@dataclass(frozen=True)
class NUValidation:
    """Window-scan evidence for the strict gap of an NU instance."""

    space_estimate: float
    vector_extremum: float
    samples: int
    valid: bool


def validate_nu_instance(
    sys: MatrixSequence,
    w: Optional[WindowSpec] = None,
    n_samples: int = 64,
    margin: float = 0.05,
    dual: bool = False,
) -> NUValidation:
    """
    Check the strict gap on sampled directions.

    Default: upper space estimate >= -tol while every sampled upper vector
    estimate is < -margin. With dual=True: lower space estimate <= tol while
    every sampled lower vector estimate is > margin.
    """
    settings = get_settings()
    tol = settings.tol_margin
    w = w or WindowSpec.default(sys.horizon)
    samples = default_samples(np.eye(sys.dimension), count=n_samples, seed=settings.default_seed)
    if dual:
        space = lower_bohl_space(sys, w).reported
        extremum = min(map_ordered(lambda x: vector_estimates(sys, x, w)[1].reported, samples))
        valid = space <= tol and extremum > margin
    else:
        space = upper_bohl_space(sys, w).reported
        extremum = max(map_ordered(lambda x: vector_estimates(sys, x, w)[0].reported, samples))
        valid = space >= -tol and extremum < -margin
    logger.info(
        f"NU validation ({'dual' if dual else 'upper'}): space={space:.4g}, "
        f"sampled extremum={extremum:.4g}, valid={valid}"
    )
    return NUValidation(float(space), float(extremum), len(samples), bool(valid))


def non_closedness_family(k: Optional[int], d: int = 1, horizon: int = 1024) -> MatrixSequence:
    """A_k = e^{1/k} I; k = None (or 0) gives the identity limit, which has no Bohl dichotomy."""
    if not k:
        return MatrixSequence.identity(d, horizon)
    return MatrixSequence.constant(math.exp(1.0 / k) * np.eye(d), horizon)


def bd_not_ed_system(horizon: int = 2048, unstable_rate: float = 0.5) -> Tuple[MatrixSequence, Splitting]:
    """
    blockdiag(NU(n), e^{unstable_rate}) with L1 = span{e1, e2}, L2 = span{e3}.

    The splitting is a Bohl dichotomy that is not exponential.
    """
    blocks = [
        (length, sla.block_diag(matrix, [[math.exp(unstable_rate)]]))
        for length, matrix in _nu_blocks(horizon, 0.15, 0.25, 0.1, 0.6)
    ]
    sys = MatrixSequence.block_schedule(blocks, horizon)
    identity = np.eye(3)
    return sys, Splitting([identity[0], identity[1]], [identity[2]])
