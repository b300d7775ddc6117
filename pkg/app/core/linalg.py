"""
Counted Dense Linear Algebra
Factorization-backed solves for the small N x N, M x M and full KKT systems,
with reciprocal-condition guards and per-run cost counters.
"""

import logging
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Dict, Iterator, Optional

import numpy as np
import scipy.linalg
from scipy.linalg import lapack

from .exceptions import AssumptionViolation, OptvoError

logger = logging.getLogger(__name__)

RCOND_THRESHOLD = 1e-12


# ==================== Cost counters ====================

@dataclass
class CostCounter:
    """Factorization and solve totals for one run; nested counters also feed their parent"""
    factorizations: int = 0
    solves: int = 0
    by_kind: Dict[str, int] = field(default_factory=dict)
    parent: Optional["CostCounter"] = field(default=None, repr=False)

    def record(self, kind: str, factorizations: int = 0, solves: int = 0) -> None:
        counter: Optional[CostCounter] = self
        while counter is not None:
            counter.factorizations += factorizations
            counter.solves += solves
            counter.by_kind[kind] = counter.by_kind.get(kind, 0) + factorizations + solves
            counter = counter.parent

    @property
    def linear_solves(self) -> int:
        return self.factorizations + self.solves

    def snapshot(self) -> Dict[str, object]:
        return {
            "factorizations": self.factorizations,
            "solves": self.solves,
            "linear_solves": self.linear_solves,
            "by_kind": dict(sorted(self.by_kind.items())),
        }


_ACTIVE: ContextVar[Optional[CostCounter]] = ContextVar("optvo_cost_counter", default=None)


@contextmanager
def cost_counters() -> Iterator[CostCounter]:
    """Count every factorization and solve issued inside the block"""
    counter = CostCounter(parent=_ACTIVE.get())
    token = _ACTIVE.set(counter)
    try:
        yield counter
    finally:
        _ACTIVE.reset(token)


def _record(kind: str, factorizations: int, solves: int) -> None:
    counter = _ACTIVE.get()
    if counter is not None:
        counter.record(kind, factorizations, solves)


# ==================== Batched small systems ====================

def batched_rcond(A: np.ndarray) -> np.ndarray:
    """2-norm reciprocal condition of every matrix in a (K, n, n) stack"""
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        finite = np.all(np.isfinite(A), axis=(-2, -1))
        out = np.zeros(A.shape[:-2])
        if np.any(finite):
            out[finite] = batched_rcond(A[finite])
        return out
    s = np.linalg.svd(A, compute_uv=False)
    largest = s[..., 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(largest > 0, s[..., -1] / np.where(largest > 0, largest, 1.0), 0.0)
    return ratio


def diagonal_rcond(v: np.ndarray) -> np.ndarray:
    """Reciprocal condition of diag(v_k) for every row of a (K, n) array"""
    magnitude = np.abs(np.asarray(v, dtype=float))
    largest = magnitude.max(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(largest > 0, magnitude.min(axis=-1) / np.where(largest > 0, largest, 1.0), 0.0)
    return np.where(np.all(np.isfinite(magnitude), axis=-1), ratio, 0.0)


def require_regular(
    rconds: np.ndarray,
    assumption: str,
    quantity: str,
    threshold: float = RCOND_THRESHOLD,
) -> None:
    """Raise AssumptionViolation naming every block whose rcond is below threshold"""
    rconds = np.atleast_1d(rconds)
    bad = np.flatnonzero(~(rconds >= threshold))
    if bad.size:
        raise AssumptionViolation(
            assumption,
            quantity,
            agents=bad.tolist(),
            rcond=float(np.min(np.where(np.isfinite(rconds), rconds, 0.0))),
        )


def block_solve(
    A: np.ndarray,
    B: np.ndarray,
    kind: str,
    assumption: Optional[str] = None,
    quantity: Optional[str] = None,
    reuse_factorization: bool = False,
) -> np.ndarray:
    """
    Solve A_k X_k = B_k for every block k of a (K, n, n) stack.

    Args:
        A: Stack of square matrices
        B: Right-hand sides, (K, n) or (K, n, r)
        kind: Counter label
        assumption: When given, check rcond first and raise AssumptionViolation
        quantity: Matrix name used in the violation message
        reuse_factorization: Count only solves (the factorization of A was counted already)

    Returns:
        Solutions with the shape of B
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if assumption is not None:
        require_regular(batched_rcond(A), assumption, quantity or kind)
    blocks = A.shape[0]
    _record(kind, 0 if reuse_factorization else blocks, blocks)
    if B.ndim == A.ndim - 1:
        return np.linalg.solve(A, B[..., None])[..., 0]
    return np.linalg.solve(A, B)


def solve_small(
    A: np.ndarray,
    b: np.ndarray,
    kind: str,
    assumption: Optional[str] = None,
    quantity: Optional[str] = None,
) -> np.ndarray:
    """Single-matrix version of block_solve"""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    return block_solve(A[None], b[None], kind, assumption, quantity)[0]


# ==================== Dense factorizations ====================

class DenseFactor:
    """LU factorization with a LAPACK 1-norm condition estimate"""

    def __init__(self, A: np.ndarray, kind: str) -> None:
        A = np.asarray(A, dtype=float)
        self.kind = kind
        self.shape = A.shape
        if not np.all(np.isfinite(A)):
            self.rcond = 0.0
            self._lu = None
        else:
            anorm = np.linalg.norm(A, 1)
            lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
            rcond, info = lapack.dgecon(lu, anorm, norm="1")
            self.rcond = float(rcond) if info == 0 and anorm > 0 else 0.0
            self._lu = (lu, piv)
        _record(kind, 1, 0)

    @property
    def singular(self) -> bool:
        return self._lu is None or not (self.rcond >= RCOND_THRESHOLD)

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self._lu is None:
            raise OptvoError(f"{self.kind}: cannot solve with a non-finite matrix")
        _record(self.kind, 0, 1)
        return scipy.linalg.lu_solve(self._lu, np.asarray(b, dtype=float), check_finite=False)


class SPDFactor:
    """Cholesky factorization of a symmetric positive definite matrix"""

    def __init__(self, A: np.ndarray, kind: str) -> None:
        try:
            self._cho = scipy.linalg.cho_factor(np.asarray(A, dtype=float), lower=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise OptvoError(f"{kind}: matrix is not positive definite", reason=str(exc)) from exc
        self.kind = kind
        _record(kind, 1, 0)

    def solve(self, b: np.ndarray) -> np.ndarray:
        _record(self.kind, 0, 1)
        return scipy.linalg.cho_solve(self._cho, np.asarray(b, dtype=float))

