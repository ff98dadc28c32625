"""Operator-splitting solvers for the recovery programs.

All three programs share one alternating-direction loop on the splitting

    minimize  ||Y||_{2,1} + penalty(S)
    subject to  Y = X,   A_i x_i + s_i = m_i  for every column i,

where the X update is a per-column regularized least-squares solve with a
cached factorization, the Y update is row-wise group soft thresholding,
and the S update is the prox of the corruption penalty:

* robust program: penalty = lam * ||S||_1  (entrywise soft threshold),
* equality-constrained program: S is clamped to zero,
* quadratic-penalty program: penalty = gamma * ||S||_F^2 (linear shrink).

Cross-column reductions (row norms, residual norms) sum squares in sorted
order, so one solve is bit-reproducible and permuting the columns of an
instance permutes the solution exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ensembles import SensingEnsemble
from .errors import ValidationError
from .linalg import DEFAULT_ZERO_TOL, as_matrix, norm_l1, norm_l21, sign_matrix


def prox_soft(x, t: float):
    """Entrywise soft threshold: sign(x) * max(0, |x| - t)."""
    if t < 0:
        raise ValidationError("threshold must be nonnegative")
    x = np.asarray(x, dtype=np.float64)
    out = np.sign(x) * np.maximum(np.abs(x) - t, 0.0)
    return float(out) if out.ndim == 0 else out


def prox_group_soft(row, t: float):
    """Scale a vector by max(0, 1 - t/||row||); the zero vector below t."""
    if t < 0:
        raise ValidationError("threshold must be nonnegative")
    v = np.asarray(row, dtype=np.float64)
    nrm = float(np.sqrt(np.sort(v * v, axis=None).sum()))
    if nrm <= t:
        return np.zeros_like(v)
    return (1.0 - t / nrm) * v


def _row_norms_sorted(X: np.ndarray) -> np.ndarray:
    # Sorted before summing so the result is invariant to column order.
    return np.sqrt(np.sort(X * X, axis=1).sum(axis=1))


def _fro_sorted(X: np.ndarray) -> float:
    return float(np.sqrt(np.sort(X * X, axis=None).sum()))


def _prox_rows(X: np.ndarray, t: float) -> np.ndarray:
    norms = _row_norms_sorted(X)
    scale = np.zeros_like(norms)
    np.divide(norms - t, norms, out=scale, where=norms > t)
    return X * scale[:, None]


@dataclass
class SolverOptions:
    """Augmented-Lagrangian penalty, iteration cap and stopping tolerances."""

    rho: float = 1.0
    max_iters: int = 50_000
    tol_primal: float = 1e-7
    tol_dual: float = 1e-7
    over_relaxation: float = 1.0
    adapt_rho: bool = True

    def __post_init__(self):
        if self.rho <= 0 or self.tol_primal <= 0 or self.tol_dual <= 0:
            raise ValidationError("rho and tolerances must be positive")
        if self.max_iters < 1:
            raise ValidationError("max_iters must be at least 1")
        if not 1.0 <= self.over_relaxation <= 1.8:
            raise ValidationError("over_relaxation must lie in [1, 1.8]")


@dataclass
class SolverReport:
    """Solution pair plus convergence diagnostics."""

    Y_hat: np.ndarray
    S_hat: np.ndarray
    iterations: int
    primal_residual: float
    dual_residual: float
    objective: float
    converged: bool


@dataclass
class RecoveryCheck:
    success: bool
    rel_err_Y: float
    rel_err_S: float
    support_match: bool


class _ColumnSolver:
    """Cached solve of (I + A'A) x = rhs, via the Gram matrix of the
    smaller dimension.  Independent of the penalty parameter."""

    def __init__(self, A: np.ndarray):
        self.A = A
        m, n = A.shape
        if m <= n:
            self.small = np.linalg.inv(np.eye(m) + A @ A.T)
            self.woodbury = True
        else:
            self.small = np.linalg.inv(np.eye(n) + A.T @ A)
            self.woodbury = False

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.woodbury:
            return rhs - self.A.T @ (self.small @ (self.A @ rhs))
        return self.small @ rhs


def _admm(M, ensemble: SensingEnsemble, s_update, opts: SolverOptions):
    """Shared loop.  ``s_update(V, rho)`` returns the new corruption block
    given V = M - [A x] - U2 (the residual the S block must explain)."""
    M = as_matrix(M, "M")
    m, n, L = ensemble.m, ensemble.n, ensemble.L
    if M.shape != (m, L):
        raise ValidationError(f"measurements must be {m}x{L}, got {M.shape}")

    cols = [_ColumnSolver(ensemble.A[i]) for i in range(L)]
    rho = opts.rho
    alpha = opts.over_relaxation

    X = np.zeros((n, L))
    Y = np.zeros((n, L))
    S = np.zeros((m, L))
    U1 = np.zeros((n, L))  # scaled dual for Y = X
    U2 = np.zeros((m, L))  # scaled dual for [A x] + S = M
    AX = np.zeros((m, L))

    primal = dual = np.inf
    it = 0
    for it in range(1, opts.max_iters + 1):
        for i in range(L):
            rhs = (Y[:, i] - U1[:, i]) + ensemble.A[i].T @ (M[:, i] - S[:, i] - U2[:, i])
            X[:, i] = cols[i].solve(rhs)
            AX[:, i] = ensemble.A[i] @ X[:, i]

        if alpha != 1.0:
            Xr = alpha * X + (1.0 - alpha) * Y
            AXr = alpha * AX + (1.0 - alpha) * (M - S)
        else:
            Xr, AXr = X, AX

        Y_old, S_old = Y, S
        Y = _prox_rows(Xr + U1, 1.0 / rho)
        S = s_update(M - AXr - U2, rho)

        R1 = Xr - Y
        R2 = AXr + S - M
        U1 = U1 + R1
        U2 = U2 + R2

        AY = ensemble.forward(Y)
        feas = _fro_sorted(M - AY - S)
        primal = max(_fro_sorted(X - Y), feas)
        dS = np.column_stack([ensemble.A[i].T @ (S[:, i] - S_old[:, i]) for i in range(L)])
        dual = rho * max(_fro_sorted(Y - Y_old), _fro_sorted(dS))

        if primal <= opts.tol_primal and dual <= opts.tol_dual:
            return Y, S, it, primal, dual, True

        if opts.adapt_rho and it % 50 == 0:
            if primal > 10.0 * dual:
                rho *= 2.0
                U1 /= 2.0
                U2 /= 2.0
            elif dual > 10.0 * primal:
                rho /= 2.0
                U1 *= 2.0
                U2 *= 2.0

    return Y, S, it, primal, dual, False


def solve_rgl(M, ensemble: SensingEnsemble, lam: float, opts: SolverOptions | None = None) -> SolverReport:
    """Minimize ||Y||_{2,1} + lam * ||S||_1 subject to [A y] + S = M."""
    if lam <= 0:
        raise ValidationError("lam must be positive")
    opts = opts or SolverOptions()

    def s_update(V, rho):
        return prox_soft(V, lam / rho)

    Y, S, it, primal, dual, ok = _admm(M, ensemble, s_update, opts)
    return SolverReport(Y, S, it, primal, dual, norm_l21(Y) + lam * norm_l1(S), ok)


def solve_l21_equality(M, ensemble: SensingEnsemble, opts: SolverOptions | None = None) -> SolverReport:
    """Minimize ||Y||_{2,1} subject to [A y] = M (corruption clamped to zero)."""
    opts = opts or SolverOptions()

    def s_update(V, rho):
        return np.zeros_like(V)

    Y, S, it, primal, dual, ok = _admm(M, ensemble, s_update, opts)
    return SolverReport(Y, S, it, primal, dual, norm_l21(Y), ok)


def solve_group_lasso(M, ensemble: SensingEnsemble, gamma: float, opts: SolverOptions | None = None) -> SolverReport:
    """Minimize ||Y||_{2,1} + gamma * ||M - [A y]||_F^2 (unconstrained)."""
    if gamma <= 0:
        raise ValidationError("gamma must be positive")
    opts = opts or SolverOptions()

    def s_update(V, rho):
        # Prox of gamma*||.||_F^2: shrink the residual the S block absorbs.
        return (rho / (2.0 * gamma + rho)) * V

    Y, S, it, primal, dual, ok = _admm(M, ensemble, s_update, opts)
    obj = norm_l21(Y) + gamma * _fro_sorted(M - ensemble.forward(Y)) ** 2
    return SolverReport(Y, S, it, primal, dual, obj, ok)


def check_exact_recovery(
    report: SolverReport,
    Y_true,
    S_true,
    rel_tol: float = 1e-3,
    zero_tol: float = DEFAULT_ZERO_TOL,
) -> RecoveryCheck:
    """Declare success when both blocks match the truth to ``rel_tol``
    relative Frobenius error (with an absolute floor of 1)."""
    if rel_tol <= 0:
        raise ValidationError("rel_tol must be positive")
    Y_true = as_matrix(Y_true, "Y_true")
    S_true = as_matrix(S_true, "S_true")
    err_Y = float(np.linalg.norm(report.Y_hat - Y_true))
    err_S = float(np.linalg.norm(report.S_hat - S_true))
    scale_Y = max(1.0, float(np.linalg.norm(Y_true)))
    scale_S = max(1.0, float(np.linalg.norm(S_true)))
    success = err_Y <= rel_tol * scale_Y and err_S <= rel_tol * scale_S
    sign_ok = bool(
        np.array_equal(sign_matrix(report.Y_hat, zero_tol), sign_matrix(Y_true, zero_tol))
        and np.array_equal(sign_matrix(report.S_hat, zero_tol), sign_matrix(S_true, zero_tol))
    )
    return RecoveryCheck(
        success=success,
        rel_err_Y=err_Y / scale_Y,
        rel_err_S=err_S / scale_S,
        support_match=sign_ok,
    )
