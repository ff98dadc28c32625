"""Robust group lasso: recovery of group-sparse signal matrices from
sparsely corrupted measurements, with dual-certificate verifiers and a
Monte-Carlo experiment harness."""

from .certificate import (
    CertificateReport,
    DualCertificate,
    GolfingPlan,
    assemble_U,
    assemble_W,
    build_certificate,
    certify_instance,
    golfing_step,
    make_plan,
    near_isometry_check,
    off_support_check,
    q_initial,
    row_direction_matrix,
    verify_certificate_bounds,
    verify_exact_dual,
    verify_inexact_dual,
)
from .ensembles import (
    DistributionSpec,
    SensingEnsemble,
    condition_number,
    correlated_gaussian,
    estimate_incoherence,
    isotropic_gaussian,
    rademacher_rows,
    sample_ensemble,
    subsampled_orthonormal,
)
from .errors import (
    ConvergenceError,
    DegenerateTruthError,
    PlanInfeasibleError,
    ValidationError,
)
from .instances import (
    ProblemInstance,
    default_lambda,
    generate_instance,
    generate_truth,
    load_bundle,
    measure,
    save_bundle,
    sparsity_budget,
)
from .linalg import (
    SupportPattern,
    induced_22,
    norm_fro,
    norm_l1,
    norm_l21,
    norm_l2inf,
    norm_linf,
    project_entries,
    project_rows,
    sign_matrix,
)
from .solver import (
    RecoveryCheck,
    SolverOptions,
    SolverReport,
    check_exact_recovery,
    prox_group_soft,
    prox_soft,
    solve_group_lasso,
    solve_l21_equality,
    solve_rgl,
)

__version__ = "0.1.0"
