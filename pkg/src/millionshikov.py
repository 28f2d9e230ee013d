"""
Rotation method: steer a designated solution onto a fast direction.

A vector x is eps-slow for a linear map F when ||Fx|| < (sin eps / 2)||F|| ||x||.
Every slow vector has a fast vector within angle eps (fast_in_cone). Rotating
the state onto that vector at one time index costs a perturbation of norm at
most eps times the coefficient norm. The forward variant rotates at k-1 so the
solution grows over [k, m]; the backward variant rotates at m so the solution
grows backwards over [k, m].
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Sequence, Tuple

import numpy as np
import scipy.linalg as sla

from src.errors import (
    AntipodalPair,
    HorizonExceeded,
    NonInvertible,
    NotSlow,
    WindowDegenerate,
    ZeroVector,
)
from src.models.certificates import InequalityCheck, RotationCertificate
from src.perturbations.plans import PerturbationPlan
from src.system_core import (
    MatrixSequence,
    evolve,
    scaled_inverse_product,
    scaled_product,
    transition,
)

logger = logging.getLogger(__name__)

ANTIPODAL_LIMIT = math.pi - 1e-8
DEGENERATE_TOP = 1e-12


# ============================================================================
# CONE GEOMETRY
# ============================================================================


def _as_vector(x) -> np.ndarray:
    vector = np.array(x, dtype=np.float64).reshape(-1)
    if not np.any(vector):
        raise ZeroVector("Vector must be nonzero")
    return vector


def angle_between(x, y) -> float:
    """Angle arccos(<x,y>/(|x||y|)) with the cosine clamped to [-1, 1]."""
    x, y = _as_vector(x), _as_vector(y)
    cosine = float(x @ y / (np.linalg.norm(x) * np.linalg.norm(y)))
    return math.acos(min(1.0, max(-1.0, cosine)))


@dataclass(frozen=True)
class Cone:
    """All vectors within angle `angle` of `axis`, plus the origin."""

    axis: Tuple[float, ...]
    angle: float

    def __post_init__(self):
        if not 0.0 < self.angle <= math.pi:
            raise ValueError("Cone angle must lie in (0, pi]")
        _as_vector(self.axis)

    def contains(self, y, tolerance: float = 0.0) -> bool:
        vector = np.asarray(y, dtype=np.float64)
        if not np.any(vector):
            return True
        return angle_between(self.axis, vector) <= self.angle + tolerance


class Speed(str, Enum):
    SLOW = "slow"
    FAST = "fast"


@dataclass(frozen=True)
class SpeedClass:
    """Slow/fast label with the compared quantities."""

    speed: Speed
    image_norm: float
    threshold: float

    @property
    def is_slow(self) -> bool:
        return self.speed == Speed.SLOW


def _check_eps(eps: float) -> None:
    if not 0.0 < eps < math.pi / 2:
        raise ValueError(f"Cone angle {eps} must lie in (0, pi/2)")


def classify_vector(F: np.ndarray, x, eps: float) -> SpeedClass:
    """
    Classify x as eps-slow or eps-fast for F.

    Args:
        F: Linear map
        x: Nonzero vector
        eps: Angle in (0, pi/2)

    Returns:
        SpeedClass; equality counts as fast
    """
    _check_eps(eps)
    vector = _as_vector(x)
    image_norm = float(np.linalg.norm(F @ vector))
    threshold = math.sin(eps) / 2.0 * float(np.linalg.norm(F, 2)) * float(np.linalg.norm(vector))
    speed = Speed.SLOW if image_norm < threshold else Speed.FAST
    return SpeedClass(speed, image_norm, threshold)


def maximal_vector(F: np.ndarray) -> np.ndarray:
    """
    Unit vector z with ||Fz|| = ||F||.

    Degenerate top singular values resolve to the normalized projection of the
    lowest-index coordinate axis onto the top singular subspace; the sign makes
    the first nonzero component positive.
    """
    matrix = np.atleast_2d(np.asarray(F, dtype=np.float64))
    d = matrix.shape[1]
    _, singular, vh = sla.svd(matrix)
    if singular[0] == 0.0:
        return np.eye(d)[0]
    top = int(np.sum(singular >= singular[0] * (1.0 - DEGENERATE_TOP)))
    if top == 1:
        z = vh[0].copy()
    else:
        basis = vh[:top].T
        z = None
        for i in range(d):
            candidate = basis @ basis[i]
            size = np.linalg.norm(candidate)
            if size > 1e-8:
                z = candidate / size
                break
    nonzero = np.flatnonzero(np.abs(z) > 1e-14)
    if nonzero.size and z[nonzero[0]] < 0:
        z = -z
    return z


@dataclass(frozen=True)
class ConeStep:
    """Result of the in-cone construction with its coefficients."""

    vector: np.ndarray
    gamma: float
    alpha: float
    beta: float
    flipped: bool
    maximal_in_cone: bool


def cone_step(F: np.ndarray, x, eps: float) -> ConeStep:
    """
    Fast vector inside the cone of a slow vector, with the combination coefficients.

    Args:
        F: Linear map
        x: eps-slow vector for F
        eps: Angle in (0, pi/2)

    Returns:
        ConeStep whose vector is a unit eps-fast vector within angle eps of x
    """
    verdict = classify_vector(F, x, eps)
    if not verdict.is_slow:
        raise NotSlow("Vector is already eps-fast")
    x_hat = _as_vector(x)
    x_hat = x_hat / np.linalg.norm(x_hat)
    z = maximal_vector(F)
    flipped = False
    if x_hat @ z < 0.0:
        z, flipped = -z, True
    gamma = angle_between(x_hat, z)
    if gamma <= eps:
        return ConeStep(z, gamma, 0.0, 1.0, flipped, True)
    alpha = math.sin(gamma - eps) / math.sin(gamma)
    beta = math.sin(eps) / math.sin(gamma)
    combination = alpha * x_hat + beta * z
    return ConeStep(combination / np.linalg.norm(combination), gamma, alpha, beta, flipped, False)


def fast_in_cone(F: np.ndarray, x, eps: float) -> np.ndarray:
    """Unit eps-fast vector for F within angle eps of the eps-slow vector x."""
    return cone_step(F, x, eps).vector


def rotation_angle(x, y) -> float:
    """Angle between x and y via 2 atan2(|x^ - y^|, |x^ + y^|)."""
    x_hat = _as_vector(x)
    y_hat = _as_vector(y)
    x_hat = x_hat / np.linalg.norm(x_hat)
    y_hat = y_hat / np.linalg.norm(y_hat)
    return 2.0 * math.atan2(np.linalg.norm(x_hat - y_hat), np.linalg.norm(x_hat + y_hat))


def rotation_between(x, y) -> np.ndarray:
    """
    Rotation V in the plane span{x, y} with V x^ = y^, identity on the complement.

    Built as the product of two reflections, so V is orthogonal with det 1.

    Raises:
        AntipodalPair: if the angle exceeds pi - 1e-8
    """
    x_hat = _as_vector(x)
    y_hat = _as_vector(y)
    x_hat = x_hat / np.linalg.norm(x_hat)
    y_hat = y_hat / np.linalg.norm(y_hat)
    d = x_hat.shape[0]
    if np.array_equal(x_hat, y_hat):
        return np.eye(d)
    if rotation_angle(x_hat, y_hat) > ANTIPODAL_LIMIT:
        raise AntipodalPair("Rotation plane is undetermined for antipodal vectors")
    bisector = x_hat + y_hat
    bisector = bisector / np.linalg.norm(bisector)
    first = np.eye(d) - 2.0 * np.outer(x_hat, x_hat)
    second = np.eye(d) - 2.0 * np.outer(bisector, bisector)
    return second @ first


# ============================================================================
# ALGEBRAIC FORM
# ============================================================================


def _check_invertible(matrices: Sequence[np.ndarray]) -> None:
    for i, matrix in enumerate(matrices):
        singular = np.linalg.svd(matrix, compute_uv=False)
        if singular[0] == 0.0 or singular[-1] / singular[0] < 1e-12:
            raise NonInvertible("Slice matrix is not invertible", index=i)


def _forward_core(head: np.ndarray, F: np.ndarray, v: np.ndarray, eps: float) -> Tuple[np.ndarray, float]:
    """R = (V - I) head rotating head @ v onto a fast direction of F; returns (R, angle)."""
    w = head @ v
    if not classify_vector(F, w, eps).is_slow:
        return np.zeros_like(head), 0.0
    target = np.linalg.norm(w) * fast_in_cone(F, w, eps)
    rotation = rotation_between(w, target)
    return (rotation - np.eye(head.shape[0])) @ head, rotation_angle(w, target)


def _backward_core(tail: np.ndarray, F: np.ndarray, w: np.ndarray, eps: float) -> Tuple[np.ndarray, float]:
    """R = tail (V - I) with V mapping a fast direction of F onto w; returns (R, angle)."""
    if not classify_vector(F, w, eps).is_slow:
        return np.zeros_like(tail), 0.0
    target = np.linalg.norm(w) * fast_in_cone(F, w, eps)
    rotation = rotation_between(target, w)
    return tail @ (rotation - np.eye(tail.shape[0])), rotation_angle(target, w)


def _slice(slice_matrices: Sequence[np.ndarray]) -> List[np.ndarray]:
    matrices = [np.asarray(m, dtype=np.float64) for m in slice_matrices]
    if len(matrices) < 2:
        raise WindowDegenerate("Slice needs at least two matrices")
    _check_invertible(matrices)
    return matrices


def algebraic_forward(slice_matrices: Sequence[np.ndarray], v, eps: float) -> np.ndarray:
    """
    Forward rotation on a matrix slice B(m), ..., B(n).

    Returns R with ||B(n)...B(m+1)(B(m)+R)v|| >= (sin eps/2)||B(n)...B(m+1)|| ||B(m)v||,
    ||(B(m)+R)v|| = ||B(m)v|| and ||R|| <= eps ||B(m)||.
    """
    _check_eps(eps)
    vector = _as_vector(v)
    matrices = _slice(slice_matrices)
    F, _ = scaled_product(matrices[1:])
    return _forward_core(matrices[0], F, vector, eps)[0]


def algebraic_backward(slice_matrices: Sequence[np.ndarray], v, eps: float) -> np.ndarray:
    """
    Backward rotation on a matrix slice B(m), ..., B(n).

    Returns R with ||B(m)^{-1}...B(n-1)^{-1}(B(n)+R)^{-1}v||
    >= (sin eps/2)||B(m)^{-1}...B(n-1)^{-1}|| ||B(n)^{-1}v|| and
    ||(B(n)+R)^{-1}v|| = ||B(n)^{-1}v||.
    """
    _check_eps(eps)
    vector = _as_vector(v)
    matrices = _slice(slice_matrices)
    F, _ = scaled_inverse_product(matrices[:-1])
    w = np.linalg.solve(matrices[-1], vector)
    return _backward_core(matrices[-1], F, w, eps)[0]


# ============================================================================
# DYNAMIC FORM
# ============================================================================


def _condition(matrix: np.ndarray) -> float:
    singular = np.linalg.svd(matrix, compute_uv=False)
    return float(singular[0] / singular[-1])


def _log_norm(vector: np.ndarray) -> float:
    return math.log(float(np.linalg.norm(vector)))


def _common_checks(
    coefficient: np.ndarray, perturbation: np.ndarray, eps: float, before: np.ndarray, after: np.ndarray
) -> List[InequalityCheck]:
    size_before = float(np.linalg.norm(before))
    size_after = float(np.linalg.norm(after))
    base_condition = _condition(coefficient)
    return [
        InequalityCheck.build(
            "norm_bound",
            eps * np.linalg.norm(coefficient, 2) * (1 + 1e-12),
            np.linalg.norm(perturbation, 2),
        ),
        InequalityCheck.build("norm_preservation", 1e-12 * size_before, abs(size_after - size_before)),
        InequalityCheck.build(
            "condition_preserved",
            1e-12 * base_condition,
            abs(_condition(coefficient + perturbation) - base_condition),
        ),
    ]


@dataclass(frozen=True)
class RotationStep:
    """Plan, certificate and the unit state of the perturbed solution at the window end nearest the rotation."""

    plan: PerturbationPlan
    certificate: RotationCertificate
    state: np.ndarray


def _check_window(sys: MatrixSequence, k: int, m: int, lowest: int, highest: int) -> None:
    if m <= k:
        raise WindowDegenerate(f"Window end {m} must exceed start {k}", index=k)
    if k < lowest or m > highest:
        raise HorizonExceeded(f"Window ({k}, {m}) outside [{lowest}, {highest}]", index=m)


def forward_rotation_at(sys: MatrixSequence, k: int, m: int, state, eps: float) -> RotationStep:
    """
    Forward rotation given the state x(k-1) of the designated solution.

    The returned state is the unit vector z(k)/||z(k)||.
    """
    _check_eps(eps)
    _check_window(sys, k, m, 1, sys.horizon)
    before = _as_vector(state)
    head = sys.coefficient(k - 1)
    F, log_scale = scaled_product(sys.coefficients(k, m))
    R, angle = _forward_core(head, F, before, eps)
    rotated = bool(np.any(R))
    plan = PerturbationPlan(sys.dimension, {k - 1: R} if rotated else {})

    x_k = head @ before
    z_k = (head + R) @ before
    log_growth = log_scale + _log_norm(F @ z_k) - _log_norm(z_k)
    log_F = log_scale + math.log(float(np.linalg.norm(F, 2)))
    checks = _common_checks(head, R, eps, x_k, z_k)
    checks.insert(
        1,
        InequalityCheck.build_log(
            "forward_growth", log_growth, math.log(math.sin(eps) / 2) + log_F, window=(k, m)
        ),
    )
    certificate = RotationCertificate(
        direction="forward",
        index=k - 1,
        window=(k, m),
        epsilon=eps,
        rotated=rotated,
        angle=angle,
        checks=checks,
    )
    logger.debug(f"Forward rotation at {k - 1} over ({k}, {m}): rotated={rotated}, angle={angle:.3e}")
    return RotationStep(plan, certificate, z_k / np.linalg.norm(z_k))


def backward_rotation_at(sys: MatrixSequence, k: int, m: int, state, eps: float) -> RotationStep:
    """
    Backward rotation given the state x(m) of the designated solution.

    The perturbed solution is pinned by z(m+1) = x(m+1); the returned state is
    the unit vector z(m)/||z(m)||.
    """
    _check_eps(eps)
    _check_window(sys, k, m, 0, sys.horizon - 1)
    x_m = _as_vector(state)
    coefficient = sys.coefficient(m)
    F, log_scale = scaled_inverse_product(sys.coefficients(k, m))
    Q, angle = _backward_core(coefficient, F, x_m, eps)
    rotated = bool(np.any(Q))
    plan = PerturbationPlan(sys.dimension, {m: Q} if rotated else {})

    z_m = np.linalg.solve(coefficient + Q, coefficient @ x_m)
    log_growth = log_scale + _log_norm(F @ z_m) - _log_norm(z_m)
    log_F = log_scale + math.log(float(np.linalg.norm(F, 2)))
    checks = _common_checks(coefficient, Q, eps, x_m, z_m)
    checks.insert(
        1,
        InequalityCheck.build_log(
            "backward_growth", log_growth, math.log(math.sin(eps) / 2) + log_F, window=(k, m)
        ),
    )
    certificate = RotationCertificate(
        direction="backward",
        index=m,
        window=(k, m),
        epsilon=eps,
        rotated=rotated,
        angle=angle,
        checks=checks,
    )
    logger.debug(f"Backward rotation at {m} over ({k}, {m}): rotated={rotated}, angle={angle:.3e}")
    return RotationStep(plan, certificate, z_m / np.linalg.norm(z_m))


def forward_rotation_perturbation(
    sys: MatrixSequence, k: int, m: int, x0, eps: float
) -> Tuple[PerturbationPlan, RotationCertificate]:
    """
    Single-support perturbation at k-1 making the solution through x0 grow over [k, m].

    Args:
        sys: Coefficient sequence
        k: First time after the rotation (1 <= k)
        m: End of the growth window (k < m <= H)
        x0: Nonzero initial vector
        eps: Cone angle in (0, pi/2)

    Returns:
        (plan, certificate)
    """
    _check_eps(eps)
    _check_window(sys, k, m, 1, sys.horizon)
    step = forward_rotation_at(sys, k, m, evolve(sys, 0, _as_vector(x0), k - 1), eps)
    return step.plan, step.certificate


def backward_rotation_perturbation(
    sys: MatrixSequence, k: int, m: int, x0, eps: float
) -> Tuple[PerturbationPlan, RotationCertificate]:
    """
    Single-support perturbation at m making the solution pinned at m+1 grow backwards over [k, m].

    The certificate's `initial_value` is z(0) of the perturbed solution that
    coincides with x(., x0) from time m+1 on.

    Args:
        sys: Coefficient sequence
        k: Start of the window (0 <= k)
        m: Rotation index (k < m < H)
        x0: Nonzero initial vector
        eps: Cone angle in (0, pi/2)

    Returns:
        (plan, certificate)
    """
    _check_eps(eps)
    _check_window(sys, k, m, 0, sys.horizon - 1)
    x_m = evolve(sys, 0, _as_vector(x0), m)
    step = backward_rotation_at(sys, k, m, x_m, eps)
    z_m = step.state * np.linalg.norm(x_m)
    initial = transition(sys, 0, m) @ z_m
    certificate = step.certificate.model_copy(update={"initial_value": [float(v) for v in initial]})
    return step.plan, certificate
