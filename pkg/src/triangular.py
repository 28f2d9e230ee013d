"""
Dynamic equivalence to upper triangular form.

The basis {l_1, ..., l_k} of a subspace L is completed to a basis of R^d,
propagated by the solution operator and orthonormalized at every step. The
orthonormal frames U(n) turn A into the upper triangular sequence
B(n) = U(n+1)^T A(n) U(n) whose top-left k x k block is the L-subsystem.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as sla

from src.errors import DegenerateBasis, NotInSubspace, SupportExceedsHorizon
from src.system_core import MatrixSequence, freeze, transition

logger = logging.getLogger(__name__)

REORTHOGONALIZE_ABOVE = 1e-10


def modified_gram_schmidt(columns: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    QR factorization by modified Gram-Schmidt with one reorthogonalization pass.

    Args:
        columns: d x d matrix whose columns are orthonormalized in order

    Returns:
        (Q, R) with Q orthogonal and R upper triangular with positive diagonal
    """
    d = columns.shape[1]
    q = np.zeros_like(columns, dtype=np.float64)
    r = np.zeros((d, d))
    for j in range(d):
        v = np.array(columns[:, j], dtype=np.float64)
        for i in range(j):
            coefficient = q[:, i] @ v
            r[i, j] = coefficient
            v = v - coefficient * q[:, i]
        size = np.linalg.norm(v)
        if j and size > 0 and np.max(np.abs(q[:, :j].T @ v)) > REORTHOGONALIZE_ABOVE * size:
            for i in range(j):
                coefficient = q[:, i] @ v
                r[i, j] += coefficient
                v = v - coefficient * q[:, i]
            size = np.linalg.norm(v)
        if size == 0.0:
            raise DegenerateBasis("Propagated basis lost rank", index=j)
        r[j, j] = size
        q[:, j] = v / size
    return q, r


def _sign_normalize(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so the first nonzero component is positive."""
    out = np.array(vectors, dtype=np.float64)
    for j in range(out.shape[1]):
        nonzero = np.flatnonzero(np.abs(out[:, j]) > 1e-14)
        if nonzero.size and out[nonzero[0], j] < 0:
            out[:, j] = -out[:, j]
    return out


def complete_basis(basis: Sequence) -> np.ndarray:
    """
    Extend independent vectors to a basis of R^d.

    The completion is the orthonormal complement from the singular vectors of
    the basis matrix, sign-normalized.

    Returns:
        d x d matrix with columns [l_1..l_k, completion]
    """
    matrix = np.array(basis, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] == 0:
        raise DegenerateBasis("Subspace basis must be a nonempty list of vectors")
    k, d = matrix.shape
    if k > d:
        raise DegenerateBasis(f"{k} vectors cannot be independent in dimension {d}")
    singular = sla.svdvals(matrix)
    if singular[0] == 0.0 or singular[-1] / singular[0] <= 1e-10:
        raise DegenerateBasis("Subspace basis is not linearly independent")
    columns = matrix.T
    if k == d:
        return columns
    complement = _sign_normalize(sla.null_space(matrix))
    return np.hstack([columns, complement])


@dataclass(frozen=True, eq=False)
class TriangularForm:
    """
    Frames U(n), triangular coefficients B(n) and Gram-Schmidt factors C(n).

    U and C are stored at checkpoints and replayed in between; replays run
    the same floating point operations as the first pass.
    """

    source: MatrixSequence
    k: int
    horizon: int
    basis_used: np.ndarray
    B: np.ndarray
    stride: int
    frame_checkpoints: Dict[int, np.ndarray] = field(repr=False)
    factor_checkpoints: Dict[int, Tuple[float, np.ndarray]] = field(repr=False)

    @property
    def dimension(self) -> int:
        return self.source.dimension

    def _checkpoint(self, n: int) -> int:
        if n < 0 or n > self.horizon:
            raise SupportExceedsHorizon(f"Time outside [0, {self.horizon}]", index=n)
        return (n // self.stride) * self.stride

    def U(self, n: int) -> np.ndarray:
        c = self._checkpoint(n)
        frame = self.frame_checkpoints[c]
        for j in range(c, n):
            frame, _ = modified_gram_schmidt(self.source.coefficient(j) @ frame)
        return frame

    def C(self, n: int) -> np.ndarray:
        """Gram-Schmidt factor with V(n) = Phi(n,0) V(0) = U(n) C(n) (may overflow for large n)."""
        c = self._checkpoint(n)
        scale, factor = self.factor_checkpoints[c]
        for j in range(c, n):
            factor = self.B[j] @ factor
            size = np.linalg.norm(factor)
            factor = factor / size
            scale += np.log(size)
        return np.exp(scale) * factor

    def as_sequence(self) -> MatrixSequence:
        """B as a coefficient sequence on the same horizon."""
        return _blocks_to_sequence([self.B[n] for n in range(self.horizon)], self.horizon)


def _blocks_to_sequence(blocks: List[np.ndarray], horizon: int) -> MatrixSequence:
    tail = MatrixSequence.constant(blocks[-1], horizon)
    return MatrixSequence.explicit(blocks, horizon, tail=tail)


def triangularize(sys: MatrixSequence, basis: Sequence, horizon: Optional[int] = None) -> TriangularForm:
    """
    Gram-Schmidt triangularization with respect to the subspace spanned by `basis`.

    Args:
        sys: Coefficient sequence
        basis: k independent vectors spanning L (1 <= k <= d)
        horizon: Horizon H (defaults to the sequence horizon)

    Returns:
        TriangularForm over [0, H]
    """
    horizon = horizon or sys.horizon
    vectors = np.array(basis, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[1] != sys.dimension:
        raise DegenerateBasis(f"Basis vectors must have dimension {sys.dimension}")
    columns = complete_basis(vectors)
    k = vectors.shape[0]
    stride = sys.checkpoint_stride

    frame, factor = modified_gram_schmidt(columns)
    size = np.linalg.norm(factor)
    scale, factor = float(np.log(size)), factor / size

    blocks = np.empty((horizon, sys.dimension, sys.dimension))
    frames = {0: freeze(frame)}
    factors = {0: (scale, freeze(factor))}
    for n in range(horizon):
        frame, block = modified_gram_schmidt(sys.coefficient(n) @ frame)
        blocks[n] = block
        factor = block @ factor
        size = np.linalg.norm(factor)
        factor = factor / size
        scale += np.log(size)
        if (n + 1) % stride == 0:
            frames[n + 1] = freeze(frame)
            factors[n + 1] = (scale, freeze(factor))

    blocks.setflags(write=False)
    logger.info(f"Triangularized {sys} with k={k} over H={horizon}")
    return TriangularForm(
        source=sys,
        k=k,
        horizon=horizon,
        basis_used=freeze(columns),
        B=blocks,
        stride=stride,
        frame_checkpoints=frames,
        factor_checkpoints=factors,
    )


def subsystem(form: TriangularForm) -> MatrixSequence:
    """The k x k top-left block sequence of B (the L-subsystem)."""
    k = form.k
    return _blocks_to_sequence([form.B[n][:k, :k] for n in range(form.horizon)], form.horizon)


def embed(form: TriangularForm, y01) -> np.ndarray:
    """Append d - k zeros to a subsystem vector."""
    y = np.array(y01, dtype=np.float64).reshape(-1)
    if y.shape[0] != form.k:
        raise ValueError(f"Expected a vector of dimension {form.k}")
    return np.concatenate([y, np.zeros(form.dimension - form.k)])


def project(form: TriangularForm, y0) -> np.ndarray:
    """Leading k components of a vector whose trailing components vanish."""
    y = np.array(y0, dtype=np.float64).reshape(-1)
    if np.max(np.abs(y[form.k:]), initial=0.0) > 1e-10:
        raise NotInSubspace("Trailing components exceed 1e-10")
    return y[: form.k]


def lift_perturbation(form: TriangularForm, plan):
    """
    Lift a k x k subsystem plan to the full system: Q(n) = U(n+1) diag(Q1(n), 0) U(n)^T.

    Returns:
        PerturbationPlan on d x d matrices with the same decay schedule
    """
    from src.perturbations.plans import PerturbationPlan

    if plan.dimension != form.k:
        raise ValueError(f"Plan dimension {plan.dimension} does not match k={form.k}")
    d, k = form.dimension, form.k
    lifted: Dict[int, np.ndarray] = {}
    for n, block in plan.support.items():
        if n + 1 > form.horizon:
            raise SupportExceedsHorizon("Lifted support needs U(n+1)", index=n)
        padded = np.zeros((d, d))
        padded[:k, :k] = block
        lifted[n] = form.U(n + 1) @ padded @ form.U(n).T
    return PerturbationPlan(d, lifted, decay_schedule=plan.decay_schedule)


@dataclass(frozen=True)
class EquivalenceReport:
    """Residuals of the dynamic equivalence checks."""

    passed: bool
    equivalence_residual: float
    invariance_residual: float
    times: Tuple[int, ...]


def verify_equivalence(sys: MatrixSequence, form: TriangularForm, samples: int = 17) -> EquivalenceReport:
    """
    Check Phi_B(n,0) = U(n)^T Phi_A(n,0) U(0) and the invariance of L on a time grid.

    Args:
        sys: The triangularized sequence
        form: Its triangular form
        samples: Number of grid times in [0, H]

    Returns:
        EquivalenceReport (tolerance 1e-9 relative)
    """
    times = tuple(int(t) for t in np.unique(np.linspace(0, form.horizon, samples).astype(int)))
    triangular = form.as_sequence()
    frame0 = form.U(0)
    leading = frame0.T @ form.basis_used[:, : form.k]
    worst_equivalence = 0.0
    worst_invariance = 0.0
    for n in times:
        phi_a = transition(sys, n, 0)
        phi_b = transition(triangular, n, 0)
        expected = form.U(n).T @ phi_a @ frame0
        scale = max(1.0, np.linalg.norm(phi_a, 2))
        worst_equivalence = max(worst_equivalence, np.linalg.norm(phi_b - expected, 2) / scale)
        carried = phi_b @ leading
        size = np.linalg.norm(carried, 2)
        if form.k < form.dimension and size > 0:
            worst_invariance = max(worst_invariance, np.linalg.norm(carried[form.k:], 2) / size)
    passed = worst_equivalence <= 1e-9 and worst_invariance <= 1e-9
    logger.info(
        f"Equivalence check {'passed' if passed else 'failed'}: "
        f"residual={worst_equivalence:.3e}, invariance={worst_invariance:.3e}"
    )
    return EquivalenceReport(passed, float(worst_equivalence), float(worst_invariance), times)


def form_rows(form: TriangularForm) -> List[dict]:
    """Per-step rows (n, U(n) entries, B(n) entries) for CSV export."""
    d = form.dimension
    rows = []
    frame = form.U(0)
    for n in range(form.horizon):
        row = {"n": n}
        for i in range(d):
            for j in range(d):
                row[f"U{i}{j}"] = frame[i, j]
        for i in range(d):
            for j in range(d):
                row[f"B{i}{j}"] = form.B[n][i, j]
        rows.append(row)
        frame, _ = modified_gram_schmidt(form.source.coefficient(n) @ frame)
    return rows
