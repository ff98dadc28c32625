"""Dense matrix primitives: mixed norms, projections, sign maps, supports.

Everything in this module is pure and operates on plain 2-D float64
numpy arrays.  Indices are 0-based throughout the library; command-line
output converts to the 1-based convention used in the docs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, ValidationError

#: Entries with magnitude at or below this are treated as exact zeros when
#: extracting signs and supports.  Matches the solver stopping tolerances.
DEFAULT_ZERO_TOL = 1e-9

#: Iteration cap for the power iteration behind :func:`induced_22`.
POWER_ITERATION_CAP = 10_000


def as_matrix(M, name: str = "matrix") -> np.ndarray:
    """Validate and return ``M`` as a 2-D float64 array with finite entries."""
    A = np.asarray(M, dtype=np.float64)
    if A.ndim != 2:
        raise ValidationError(f"{name} must be 2-D, got shape {A.shape}")
    if A.shape[0] < 1 or A.shape[1] < 1:
        raise ValidationError(f"{name} must have at least one row and column")
    if not np.all(np.isfinite(A)):
        raise ValidationError(f"{name} contains non-finite entries")
    return A


def norm_l21(M) -> float:
    """Sum of the row-wise Euclidean norms."""
    A = as_matrix(M)
    return float(np.sqrt((A * A).sum(axis=1)).sum())


def norm_l1(M) -> float:
    """Sum of absolute values of all entries."""
    return float(np.abs(as_matrix(M)).sum())


def norm_l2inf(M) -> float:
    """Largest row-wise Euclidean norm."""
    A = as_matrix(M)
    return float(np.sqrt((A * A).sum(axis=1)).max())


def norm_linf(M) -> float:
    """Largest absolute entry."""
    return float(np.abs(as_matrix(M)).max())


def norm_fro(M) -> float:
    """Frobenius norm."""
    A = as_matrix(M)
    return float(np.sqrt((A * A).sum()))


def induced_22(M, tol: float = 1e-10, max_iters: int = POWER_ITERATION_CAP) -> float:
    """Largest singular value by power iteration on the Gram matrix.

    The iteration starts from the normalized all-ones vector, which makes
    the result deterministic.  It runs on whichever of ``M'M`` / ``MM'`` is
    smaller and stops once the singular-value estimate is stable to a
    relative tolerance of ``tol``.

    Raises
    ------
    ConvergenceError
        If the estimate has not stabilized after ``max_iters`` sweeps,
        which signals an ill-conditioned input.
    """
    if tol <= 0:
        raise ValidationError("tol must be positive")
    A = as_matrix(M)
    B = A.T @ A if A.shape[1] <= A.shape[0] else A @ A.T
    d = B.shape[0]
    v = np.full(d, 1.0 / np.sqrt(d))
    s_prev = -1.0
    for _ in range(max_iters):
        w = B @ v
        lam = float(v @ w)
        s = np.sqrt(max(lam, 0.0))
        wn = float(np.sqrt(w @ w))
        if wn == 0.0:
            return 0.0
        v = w / wn
        if abs(s - s_prev) <= tol * max(s, 1.0e-30):
            return s
        s_prev = s
    raise ConvergenceError(
        f"power iteration did not stabilize to {tol:g} within {max_iters} sweeps"
    )


def project_rows(M, rows) -> np.ndarray:
    """Zero every row of ``M`` whose index is not in ``rows``."""
    A = as_matrix(M)
    idx = _check_indices(rows, A.shape[0], "row index")
    out = np.zeros_like(A)
    out[idx] = A[idx]
    return out


def project_entries(M, entries) -> np.ndarray:
    """Zero every entry of ``M`` whose ``(row, col)`` pair is not in ``entries``."""
    A = as_matrix(M)
    out = np.zeros_like(A)
    pairs = np.atleast_2d(np.asarray(list(entries), dtype=np.int64))
    if pairs.size == 0:
        return out
    if pairs.shape[1] != 2:
        raise ValidationError("entries must be (row, col) pairs")
    r, c = pairs[:, 0], pairs[:, 1]
    if r.min() < 0 or r.max() >= A.shape[0] or c.min() < 0 or c.max() >= A.shape[1]:
        raise ValidationError("entry index out of range")
    out[r, c] = A[r, c]
    return out


def sign_matrix(M, zero_tol: float = DEFAULT_ZERO_TOL) -> np.ndarray:
    """Entrywise sign with a dead zone: 0 wherever ``|m_ij| <= zero_tol``."""
    if zero_tol < 0:
        raise ValidationError("zero_tol must be nonnegative")
    A = as_matrix(M)
    out = np.sign(A)
    out[np.abs(A) <= zero_tol] = 0.0
    return out


def _check_indices(idx, bound: int, what: str) -> np.ndarray:
    arr = np.asarray(sorted(set(int(i) for i in np.atleast_1d(np.asarray(idx, dtype=np.int64)).tolist())), dtype=np.int64) if np.asarray(idx).size else np.empty(0, dtype=np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= bound):
        raise ValidationError(f"{what} out of range [0, {bound})")
    return arr


@dataclass(frozen=True)
class SupportPattern:
    """Row support of the signal plus entrywise support of the corruption.

    ``omega_star`` holds, for every column, the lexicographically smallest
    ``m - k_max`` indices outside that column's corruption support, so all
    columns share the same non-corrupted cardinality.
    """

    n: int
    m: int
    L: int
    row_support: tuple[int, ...]
    col_supports: tuple[tuple[int, ...], ...]
    omega_star: tuple[tuple[int, ...], ...] = field(init=False)

    def __post_init__(self):
        if self.n < 1 or self.m < 1 or self.L < 1:
            raise ValidationError("dimensions must be positive")
        if len(self.col_supports) != self.L:
            raise ValidationError("need one corruption support per column")
        T = _check_indices(self.row_support, self.n, "row support index")
        object.__setattr__(self, "row_support", tuple(int(i) for i in T))
        cols = []
        for i, omega_i in enumerate(self.col_supports):
            o = _check_indices(omega_i, self.m, f"corruption index (column {i})")
            cols.append(tuple(int(r) for r in o))
        object.__setattr__(self, "col_supports", tuple(cols))
        k_max = max((len(c) for c in cols), default=0)
        stars = []
        for omega_i in cols:
            taken = set(omega_i)
            free = [r for r in range(self.m) if r not in taken]
            stars.append(tuple(free[: self.m - k_max]))
        object.__setattr__(self, "omega_star", tuple(stars))

    @property
    def k_T(self) -> int:
        return len(self.row_support)

    @property
    def k_Omega(self) -> int:
        return sum(len(c) for c in self.col_supports)

    @property
    def k_max(self) -> int:
        return max((len(c) for c in self.col_supports), default=0)

    @property
    def row_complement(self) -> tuple[int, ...]:
        inside = set(self.row_support)
        return tuple(i for i in range(self.n) if i not in inside)

    def omega_pairs(self) -> np.ndarray:
        """Corruption support as an array of (row, col) pairs."""
        pairs = [(r, i) for i, col in enumerate(self.col_supports) for r in col]
        return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)

    def omega_mask(self) -> np.ndarray:
        """Boolean m-by-L mask of the corruption support."""
        mask = np.zeros((self.m, self.L), dtype=bool)
        for i, col in enumerate(self.col_supports):
            mask[list(col), i] = True
        return mask

    def row_mask(self) -> np.ndarray:
        mask = np.zeros(self.n, dtype=bool)
        mask[list(self.row_support)] = True
        return mask
