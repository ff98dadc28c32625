"""Golfing construction of dual certificates and the duality verifiers.

The construction splits each column's maximal non-corrupted index set into
disjoint batches, runs the contraction recursion on the row-normalized
truth, and assembles the certificate pair (W, U) from the batch residuals.
The verifiers then measure every duality inequality numerically and report
the measured value, the threshold, and the verdict for each.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ensembles import SensingEnsemble, stream
from .errors import DegenerateTruthError, PlanInfeasibleError, ValidationError
from .instances import ProblemInstance
from .linalg import (
    DEFAULT_ZERO_TOL,
    SupportPattern,
    as_matrix,
    induced_22,
    norm_l2inf,
    norm_linf,
    sign_matrix,
)

TAG_BATCHES = 21

#: Spectral-norm tolerance used by every verifier in this module.
SPECTRAL_TOL = 1e-10

#: Strict inequalities are certified with this much slack.
STRICT_SLACK = 1e-9

#: Default tolerance on the equality conditions of the exact verifier.
EXACT_EQ_TOL = 1e-6


def golfing_dimensions(n: int, m: int):
    """Batch count, batch sizes and contraction targets for an (n, m) pair.

    The first two batches take a quarter of the rows each and aim for a
    1/(2 sqrt(log n)) contraction; later batches take m/(4 log n) rows and
    aim for 1/2.  Natural logarithm throughout.
    """
    if n < 2 or m < 1:
        raise ValidationError("need n >= 2 and m >= 1")
    logn = math.log(n)
    batches = int(math.floor(logn + 1.0))
    first = int(math.floor(m / 4.0))
    later = int(math.floor(m / (4.0 * logn)))
    sizes = [first] * min(batches, 2) + [later] * max(batches - 2, 0)
    targets = [1.0 / (2.0 * math.sqrt(logn))] * min(batches, 2) + [0.5] * max(batches - 2, 0)
    return batches, sizes, targets


@dataclass(frozen=True)
class GolfingPlan:
    """Disjoint row batches inside every column's non-corrupted set."""

    supports: SupportPattern
    batch_sizes: tuple[int, ...]
    contraction_targets: tuple[float, ...]
    batches: tuple[tuple[np.ndarray, ...], ...]  # [column][batch] -> row indices

    @property
    def batch_count(self) -> int:
        return len(self.batch_sizes)

    @property
    def n(self) -> int:
        return self.supports.n

    @property
    def m(self) -> int:
        return self.supports.m


def make_plan(n: int, m: int, supports: SupportPattern, seed: int) -> GolfingPlan:
    """Draw disjoint batches uniformly without replacement from each
    column's non-corrupted set; deterministic for a fixed seed."""
    if (n, m) != (supports.n, supports.m):
        raise ValidationError("dimensions disagree with the support pattern")
    count, sizes, targets = golfing_dimensions(n, m)
    if min(sizes) < 1:
        raise PlanInfeasibleError(
            f"batch size floor(m / (4 log n)) = {min(sizes)} is empty for m={m}, n={n}"
        )
    capacity = m - supports.k_max
    need = sum(sizes)
    if need > capacity:
        raise PlanInfeasibleError(
            f"batches need {need} rows but the non-corrupted sets hold only "
            f"{capacity} (m={m}, k_max={supports.k_max})"
        )
    per_column = []
    for i in range(supports.L):
        pool = np.asarray(supports.omega_star[i], dtype=np.int64)
        perm = stream(seed, TAG_BATCHES, i).permutation(pool)
        chunks, start = [], 0
        for size in sizes:
            chunk = np.sort(perm[start : start + size])
            chunk.setflags(write=False)
            chunks.append(chunk)
            start += size
        per_column.append(tuple(chunks))
    return GolfingPlan(
        supports=supports,
        batch_sizes=tuple(sizes),
        contraction_targets=tuple(targets),
        batches=tuple(per_column),
    )


def row_direction_matrix(Y_true, supports: SupportPattern) -> np.ndarray:
    """Row-normalized truth on the support, zero elsewhere.

    Raises ``DegenerateTruthError`` when a supported row is identically
    zero, since its direction is undefined.
    """
    Y = as_matrix(Y_true, "Y_true")
    V = np.zeros_like(Y)
    for r in supports.row_support:
        nrm = float(np.linalg.norm(Y[r]))
        if nrm <= DEFAULT_ZERO_TOL:
            raise DegenerateTruthError(f"supported row {r} of the signal is zero")
        V[r] = Y[r] / nrm
    return V


def _on_rows(V: np.ndarray, supports: SupportPattern) -> np.ndarray:
    out = np.zeros_like(V)
    idx = list(supports.row_support)
    out[idx] = V[idx]
    return out


def adjoint_of_signs(ensemble: SensingEnsemble, sgn_S) -> np.ndarray:
    """Column-wise adjoint image of the corruption signs: [A_i' sgn(s_i)]."""
    return ensemble.adjoint(as_matrix(sgn_S, "sgn_S"))


def q_initial(V_bar, ensemble: SensingEnsemble, sgn_S, lam: float) -> np.ndarray:
    """Start of the contraction sequence: the row directions minus lam times
    the support-restricted adjoint image of the corruption signs.

    The row restriction is read off the nonzero rows of ``V_bar``.
    """
    V = as_matrix(V_bar, "V_bar")
    back = adjoint_of_signs(ensemble, sgn_S)
    mask = np.abs(V).sum(axis=1) > 0
    return V - lam * np.where(mask[:, None], back, 0.0)


def _sigma_is_identity(ensemble: SensingEnsemble, i: int) -> bool:
    return ensemble.kinds[i] != "correlated_gaussian"


def golfing_step(Q_prev, ensemble: SensingEnsemble, plan: GolfingPlan, j: int) -> np.ndarray:
    """One contraction step: column i maps through the row-restricted
    operator I minus (m/m_j) times the whitened batch sampling operator."""
    if not 1 <= j <= plan.batch_count:
        raise ValidationError(f"batch index {j} outside 1..{plan.batch_count}")
    Q_prev = as_matrix(Q_prev, "Q_prev")
    supports = plan.supports
    m = plan.m
    mj = plan.batch_sizes[j - 1]
    Q_in = _on_rows(Q_prev, supports)
    out = np.zeros_like(Q_in)
    for i in range(ensemble.L):
        K = plan.batches[i][j - 1]
        q = Q_in[:, i]
        v = ensemble.A[i][K] @ q
        u = ensemble.A[i][K].T @ v
        if not _sigma_is_identity(ensemble, i):
            u = ensemble.sigma_inv[i] @ u
        out[:, i] = q - (m / mj) * u
    return _on_rows(out, supports)


def run_golfing(V_bar, ensemble: SensingEnsemble, sgn_S, lam: float, plan: GolfingPlan) -> list[np.ndarray]:
    """Full contraction sequence Q_0 .. Q_l, each supported on the signal rows."""
    seq = [_on_rows(q_initial(V_bar, ensemble, sgn_S, lam), plan.supports)]
    for j in range(1, plan.batch_count + 1):
        seq.append(golfing_step(seq[-1], ensemble, plan, j))
    return seq


def assemble_W(plan: GolfingPlan, ensemble: SensingEnsemble, Q_sequence) -> np.ndarray:
    """Measurement-side certificate block: batch rows accumulate
    (m/m_j) A_i q_(j-1), and every corrupted entry is forced to zero."""
    supports = plan.supports
    m = plan.m
    W = np.zeros((m, ensemble.L))
    for i in range(ensemble.L):
        for j in range(1, plan.batch_count + 1):
            K = plan.batches[i][j - 1]
            q = _on_rows(as_matrix(Q_sequence[j - 1]), supports)[:, i]
            W[K, i] += (m / plan.batch_sizes[j - 1]) * (ensemble.A[i][K] @ q)
    W[supports.omega_mask()] = 0.0
    return W


def assemble_U(plan: GolfingPlan, ensemble: SensingEnsemble, Q_sequence) -> np.ndarray:
    """Signal-side certificate block: the whitened adjoint image of the
    batch contributions, summed over batches."""
    supports = plan.supports
    m = plan.m
    U = np.zeros((plan.n, ensemble.L))
    for i in range(ensemble.L):
        acc = np.zeros(plan.n)
        for j in range(1, plan.batch_count + 1):
            K = plan.batches[i][j - 1]
            q = _on_rows(as_matrix(Q_sequence[j - 1]), supports)[:, i]
            v = ensemble.A[i][K] @ q
            acc += (m / plan.batch_sizes[j - 1]) * (ensemble.A[i][K].T @ v)
        if not _sigma_is_identity(ensemble, i):
            acc = ensemble.sigma_inv[i] @ acc
        U[:, i] = acc
    return U


@dataclass
class DualCertificate:
    """Golfing outputs: the contraction sequence plus the certificate pair."""

    Q: list[np.ndarray]
    W: np.ndarray
    U: np.ndarray
    V_bar: np.ndarray


def build_certificate(instance: ProblemInstance, seed: int) -> tuple[DualCertificate, GolfingPlan]:
    ens, sup = instance.ensemble, instance.supports
    plan = make_plan(ens.n, ens.m, sup, seed)
    V = row_direction_matrix(instance.Y_true, sup)
    sgn = sign_matrix(instance.S_true)
    seq = run_golfing(V, ens, sgn, instance.lam, plan)
    return DualCertificate(Q=seq, W=assemble_W(plan, ens, seq), U=assemble_U(plan, ens, seq), V_bar=V), plan


@dataclass
class DualityCheck:
    """One measured inequality: value, threshold, verdict."""

    name: str
    value: float
    threshold: float
    passed: bool

    @property
    def slack(self) -> float:
        return self.threshold - self.value

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "value": self.value,
            "threshold": self.threshold,
            "passed": self.passed,
        }


class CheckSet:
    """Ordered collection of named duality checks."""

    def __init__(self, checks: list[DualityCheck]):
        self.checks = checks
        self._by_name = {c.name: c for c in checks}

    def __getitem__(self, name: str) -> DualityCheck:
        return self._by_name[name]

    def __iter__(self):
        return iter(self.checks)

    @property
    def all_pass(self) -> bool:
        return all(c.passed for c in self.checks)

    def as_dict(self) -> dict:
        return {c.name: c.as_dict() for c in self.checks}


def _leq(name: str, value: float, threshold: float) -> DualityCheck:
    return DualityCheck(name, float(value), float(threshold), bool(value <= threshold))


def verify_exact_dual(
    W,
    ensemble: SensingEnsemble,
    supports: SupportPattern,
    V_bar,
    lam: float,
    sgn_S,
    eq_tol: float = EXACT_EQ_TOL,
    strict_slack: float = STRICT_SLACK,
) -> CheckSet:
    """Exact-duality conditions for the robust program.

    Equalities are tested to ``eq_tol`` in the stated norm.  The two strict
    inequalities are evaluated off the supports (where the equalities pin
    the certificate exactly at the threshold, a strict global bound could
    never hold) and certified with ``strict_slack``; the remaining slack is
    available on the returned checks.
    """
    W = as_matrix(W, "W")
    V = as_matrix(V_bar, "V_bar")
    sgn = as_matrix(sgn_S, "sgn_S")
    AtW = ensemble.adjoint(W)
    on = _on_rows(AtW, supports)
    mask = supports.omega_mask()
    dev = np.abs(W - lam * sgn)[mask]
    W_off = np.array(W)
    W_off[mask] = 0.0
    checks = [
        _leq("adjoint_matches_row_directions", np.linalg.norm(on - V), eq_tol),
        _leq("adjoint_row_norms_off_support", norm_l2inf(AtW - on), 1.0 - strict_slack),
        _leq("w_matches_corruption_signs", dev.max() if dev.size else 0.0, eq_tol),
        _leq("w_max_entry_off_corruption", norm_linf(W_off), lam - strict_slack),
    ]
    return CheckSet(checks)


def inexact_dual_vector(W, ensemble: SensingEnsemble, supports: SupportPattern, sgn_S, lam: float) -> np.ndarray:
    """Composite certificate direction: adjoint of W off the corrupted
    entries, plus lam times the adjoint of the corruption signs."""
    W = as_matrix(W, "W")
    W_off = np.array(W)
    W_off[supports.omega_mask()] = 0.0
    return ensemble.adjoint(W_off) + lam * adjoint_of_signs(ensemble, sgn_S)


def verify_inexact_dual(
    W,
    ensemble: SensingEnsemble,
    supports: SupportPattern,
    V_bar,
    lam: float,
    kappa_max: float,
    sgn_S,
    V=None,
) -> CheckSet:
    """Inexact-duality conditions; requires a balance parameter below 1.

    When ``V`` is not given it is formed from W and the corruption signs by
    :func:`inexact_dual_vector`.
    """
    if not lam < 1.0:
        raise ValidationError("inexact duality requires lam < 1")
    V_bar = as_matrix(V_bar, "V_bar")
    if V is None:
        V = inexact_dual_vector(W, ensemble, supports, sgn_S, lam)
    else:
        V = as_matrix(V, "V")
    W = as_matrix(W, "W")
    W_off = np.array(W)
    W_off[supports.omega_mask()] = 0.0
    on = _on_rows(V, supports)
    off = V - on
    checks = [
        _leq("v_matches_directions_on_rows", np.linalg.norm(on - V_bar), lam / (4.0 * math.sqrt(kappa_max))),
        _leq("v_row_norms_off_rows", norm_l2inf(off), 0.25),
        _leq("w_entries_off_corruption", norm_linf(W_off), lam / 4.0),
    ]
    return CheckSet(checks)


def verify_certificate_bounds(
    cert: DualCertificate,
    ensemble: SensingEnsemble,
    supports: SupportPattern,
    lam: float,
    kappa_max: float,
    sgn_S,
) -> CheckSet:
    """The four bounds the golfing construction must meet, plus the exact
    telescoping identity tying the signal-side block to the final residual."""
    back = lam * adjoint_of_signs(ensemble, sgn_S)
    back_on = _on_rows(back, supports)
    U_on = _on_rows(cert.U, supports)
    U_off = cert.U - U_on
    W_off = np.array(cert.W)
    W_off[supports.omega_mask()] = 0.0
    residual = U_on + back_on - cert.V_bar
    identity_gap = np.linalg.norm((cert.Q[0] - cert.Q[-1]) - U_on)
    checks = [
        _leq("sign_rows_off_support", norm_l2inf(back - back_on), 0.125),
        _leq("golfing_residual", np.linalg.norm(residual), lam / (4.0 * math.sqrt(kappa_max))),
        _leq("u_rows_off_support", norm_l2inf(U_off), 0.125),
        _leq("w_entries_off_corruption", norm_linf(W_off), lam / 4.0),
        _leq("telescope_identity", identity_gap, 1e-10),
    ]
    return CheckSet(checks)


@dataclass
class IsometryResult:
    """Per-matrix restricted spectral deviations and their threshold."""

    mode: str
    values: list[float]
    threshold: float
    passed: bool
    extra: dict = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.values) if self.values else 0.0


def _restricted_operator(
    ensemble: SensingEnsemble,
    i: int,
    rows: np.ndarray,
    T: list[int],
    scale: float,
    form: str,
) -> np.ndarray:
    """Support-restricted block of scale * Sinv A' P_rows A minus identity,
    or of the Sinv-right variant minus the restricted Sinv block."""
    A = ensemble.A[i]
    AT = A[np.ix_(rows, T)]
    if form == "identity":
        if _sigma_is_identity(ensemble, i):
            core = AT.T @ AT
        else:
            core = ensemble.sigma_inv[i][T, :] @ (A[rows].T @ AT)
        return scale * core - np.eye(len(T))
    G = A[rows] @ ensemble.sigma_inv[i][:, T]
    return scale * (G.T @ G) - ensemble.sigma_inv[i][np.ix_(T, T)]


def near_isometry_check(
    ensemble: SensingEnsemble,
    supports: SupportPattern,
    mode: str = "identity_form",
    plan: GolfingPlan | None = None,
    j: int | None = None,
) -> IsometryResult:
    """Spectral deviation of the support-restricted sampling operators.

    ``identity_form`` measures the rescaled non-corrupted sampling operator
    against the identity (threshold 1/2; the tighter 1/(2 sqrt(log n))
    verdict is reported under ``extra``).  ``sigma_inverse_form`` measures
    the whitened variant against kappa_max/2, and ``batch`` measures batch
    j of a plan against its contraction target.
    """
    T = list(supports.row_support)
    n, m = supports.n, supports.m
    if mode == "batch":
        if plan is None or j is None:
            raise ValidationError("batch mode needs a plan and a batch index")
        threshold = plan.contraction_targets[j - 1]
        row_sets = [plan.batches[i][j - 1] for i in range(ensemble.L)]
        scale = m / plan.batch_sizes[j - 1]
        form = "identity"
    elif mode in ("identity_form", "sigma_inverse_form"):
        row_sets = [np.asarray(supports.omega_star[i], dtype=np.int64) for i in range(ensemble.L)]
        scale = m / (m - supports.k_max)
        if mode == "identity_form":
            threshold = 0.5
            form = "identity"
        else:
            threshold = ensemble.kappa_max / 2.0
            form = "sigma_inverse"
    else:
        raise ValidationError(f"unknown mode {mode!r}")
    if not T:
        result = IsometryResult(mode, [0.0] * ensemble.L, threshold, True)
    else:
        values = [
            induced_22(_restricted_operator(ensemble, i, row_sets[i], T, scale, form), tol=SPECTRAL_TOL)
            for i in range(ensemble.L)
        ]
        result = IsometryResult(mode, values, threshold, max(values) <= threshold)
    if mode == "identity_form":
        tight = 1.0 / (2.0 * math.sqrt(math.log(n)))
        result.extra = {"tight_threshold": tight, "tight_passed": result.worst <= tight}
    return result


def off_support_check(ensemble: SensingEnsemble, supports: SupportPattern) -> DualityCheck:
    """Largest support-restricted column response of the non-corrupted
    sampling operators over all off-support coordinates, against 1."""
    T = list(supports.row_support)
    Tc = list(supports.row_complement)
    if not Tc or not T:
        return DualityCheck("off_support_columns", 0.0, 1.0, True)
    worst = 0.0
    for i in range(ensemble.L):
        A = ensemble.A[i]
        rows = np.asarray(supports.omega_star[i], dtype=np.int64)
        if _sigma_is_identity(ensemble, i):
            left = A[np.ix_(rows, T)]
        else:
            left = A[rows] @ ensemble.sigma_inv[i][:, T]
        block = left.T @ A[np.ix_(rows, Tc)]
        worst = max(worst, float(np.sqrt((block * block).sum(axis=0).max())))
    return DualityCheck("off_support_columns", worst, 1.0, worst <= 1.0)


@dataclass
class CertificateReport:
    """Everything one certificate trial produced, ready to serialize."""

    contraction_ratios: list[float]
    contraction_targets: list[float]
    batch_isometry: list[IsometryResult]
    bound_checks: CheckSet
    exact_dual: CheckSet
    inexact_dual: CheckSet
    all_pass: bool
    batch_sizes: list[int]

    def as_dict(self) -> dict:
        return {
            "contraction_ratios": self.contraction_ratios,
            "contraction_targets": self.contraction_targets,
            "batch_sizes": self.batch_sizes,
            "batch_isometry": [
                {"values": r.values, "threshold": r.threshold, "passed": r.passed}
                for r in self.batch_isometry
            ],
            "bound_checks": self.bound_checks.as_dict(),
            "exact_dual": self.exact_dual.as_dict(),
            "inexact_dual": self.inexact_dual.as_dict(),
            "all_pass": self.all_pass,
        }


def certify_instance(instance: ProblemInstance, seed: int) -> CertificateReport:
    """Build the golfing certificate for an instance and run every verifier."""
    cert, plan = build_certificate(instance, seed)
    ens, sup, lam = instance.ensemble, instance.supports, instance.lam
    sgn = sign_matrix(instance.S_true)
    kappa = ens.kappa_max
    ratios = []
    for prev, cur in zip(cert.Q, cert.Q[1:]):
        denom = float(np.linalg.norm(prev))
        ratios.append(float(np.linalg.norm(cur)) / denom if denom > 0 else 0.0)
    isometry = [
        near_isometry_check(ens, sup, mode="batch", plan=plan, j=j)
        for j in range(1, plan.batch_count + 1)
    ]
    bounds = verify_certificate_bounds(cert, ens, sup, lam, kappa, sgn)
    exact = verify_exact_dual(cert.W, ens, sup, cert.V_bar, lam, sgn)
    inexact = verify_inexact_dual(cert.W, ens, sup, cert.V_bar, lam, kappa, sgn)
    return CertificateReport(
        contraction_ratios=ratios,
        contraction_targets=list(plan.contraction_targets),
        batch_isometry=isometry,
        bound_checks=bounds,
        exact_dual=exact,
        inexact_dual=inexact,
        all_pass=bounds.all_pass and inexact.all_pass,
        batch_sizes=list(plan.batch_sizes),
    )
