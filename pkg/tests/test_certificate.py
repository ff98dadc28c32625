import math

import numpy as np
import pytest

from rgl.certificate import (
    GolfingPlan,
    assemble_U,
    assemble_W,
    build_certificate,
    certify_instance,
    golfing_dimensions,
    golfing_step,
    make_plan,
    near_isometry_check,
    off_support_check,
    q_initial,
    row_direction_matrix,
    run_golfing,
    verify_certificate_bounds,
    verify_exact_dual,
    verify_inexact_dual,
)
from rgl.ensembles import SensingEnsemble, correlated_gaussian, sample_ensemble
from rgl.errors import DegenerateTruthError, PlanInfeasibleError, ValidationError
from rgl.instances import generate_instance, make_specs
from rgl.linalg import SupportPattern, sign_matrix
from rgl.solver import solve_rgl, SolverOptions

from oracles import dense_golfing_step_oracle, jacobi_svd_values, min_norm_exact_dual_W


def orthonormal_column_ensemble(n, m, L, seed):
    """Sensing matrices with exactly orthonormal columns (m >= n)."""
    rng = np.random.default_rng(seed)
    A = []
    for _ in range(L):
        Q, _ = np.linalg.qr(rng.standard_normal((m, n)))
        A.append(Q[:, :n])
    return SensingEnsemble(
        A=A,
        sigma=[np.eye(n)] * L,
        kappa=[1.0] * L,
        mu=[1.0] * L,
        mu_exact=[True] * L,
        seed=seed,
        kinds=["rademacher_rows"] * L,
    )


def in_budget_instance(seed, n=128, m=4096, L=2, kT=2, kcol=1):
    return generate_instance(make_specs("rademacher_rows", n, L), m=m, k_T=kT,
                             k_per_column=kcol, seed=seed)


class TestPlan:
    def test_batch_count_floor(self):
        # log 60 + 1 is in [5, 6), so five batches.
        count, _, _ = golfing_dimensions(60, 400)
        assert count == 5

    def test_batch_sizes(self):
        # n = 54: log n just under 4, so floor(400/4) and floor(400/(4 log n)).
        count, sizes, targets = golfing_dimensions(54, 400)
        assert count == 4
        assert sizes == [100, 100, 25, 25]
        assert targets[0] == targets[1] == pytest.approx(1 / (2 * math.sqrt(math.log(54))))
        assert targets[2] == targets[3] == 0.5

    def test_disjoint_within_each_column(self):
        for seed in range(10):
            inst = generate_instance(make_specs("rademacher_rows", 40, 3), m=64,
                                     k_T=3, k_per_column=2, seed=seed)
            plan = make_plan(40, 64, inst.supports, seed)
            for i in range(3):
                seen = np.concatenate(plan.batches[i])
                assert len(seen) == len(set(seen.tolist()))
                assert set(seen.tolist()) <= set(inst.supports.omega_star[i])
                for K, size in zip(plan.batches[i], plan.batch_sizes):
                    assert len(K) == size

    def test_equal_cardinalities_across_columns(self):
        inst = generate_instance(make_specs("rademacher_rows", 40, 3), m=64,
                                 k_T=3, k_per_column=[0, 1, 2], seed=3)
        plan = make_plan(40, 64, inst.supports, 0)
        for j in range(plan.batch_count):
            sizes = {len(plan.batches[i][j]) for i in range(3)}
            assert sizes == {plan.batch_sizes[j]}

    def test_determinism(self):
        inst = generate_instance(make_specs("rademacher_rows", 40, 2), m=64,
                                 k_T=2, k_per_column=1, seed=5)
        a = make_plan(40, 64, inst.supports, 7)
        b = make_plan(40, 64, inst.supports, 7)
        for i in range(2):
            for x, y in zip(a.batches[i], b.batches[i]):
                assert np.array_equal(x, y)

    def test_infeasible_capacity(self):
        # Batches need more rows than the non-corrupted sets hold.
        inst = generate_instance(make_specs("rademacher_rows", 40, 1), m=64,
                                 k_T=2, k_per_column=40, seed=1)
        with pytest.raises(PlanInfeasibleError, match="non-corrupted"):
            make_plan(40, 64, inst.supports, 0)

    def test_infeasible_batch_size(self):
        inst = generate_instance(make_specs("rademacher_rows", 4096, 1), m=8,
                                 k_T=1, k_per_column=0, seed=1)
        with pytest.raises(PlanInfeasibleError):
            make_plan(4096, 8, inst.supports, 0)


class TestRowDirections:
    def test_unit_rows(self):
        inst = in_budget_instance(0, n=32, m=64)
        V = row_direction_matrix(inst.Y_true, inst.supports)
        for r in inst.supports.row_support:
            assert np.linalg.norm(V[r]) == pytest.approx(1.0, abs=1e-12)
        assert np.linalg.norm(V) == pytest.approx(math.sqrt(inst.supports.k_T))

    def test_degenerate_row_rejected(self):
        sup = SupportPattern(n=4, m=6, L=2, row_support=(1,), col_supports=((), ()))
        Y = np.zeros((4, 2))
        with pytest.raises(DegenerateTruthError):
            row_direction_matrix(Y, sup)


class TestQInitial:
    def test_clean_corruption_gives_directions(self):
        inst = in_budget_instance(1, n=32, m=64, kcol=0)
        V = row_direction_matrix(inst.Y_true, inst.supports)
        Q0 = q_initial(V, inst.ensemble, np.zeros((64, 2)), inst.lam)
        assert np.array_equal(Q0, V)
        assert np.linalg.norm(Q0) == pytest.approx(math.sqrt(inst.supports.k_T))

    def test_zero_balance_gives_directions(self):
        inst = in_budget_instance(2, n=32, m=64)
        V = row_direction_matrix(inst.Y_true, inst.supports)
        sgn = sign_matrix(inst.S_true)
        assert np.array_equal(q_initial(V, inst.ensemble, sgn, 0.0), V)

    def test_initial_norm_stays_small(self):
        # High-probability event: the start of the sequence stays within
        # 9/8 of the square root of the row sparsity.
        for seed in range(50):
            inst = generate_instance(make_specs("rademacher_rows", 64, 2), m=64,
                                     k_T=3, k_per_column=1, seed=seed)
            V = row_direction_matrix(inst.Y_true, inst.supports)
            sgn = sign_matrix(inst.S_true)
            Q0 = q_initial(V, inst.ensemble, sgn, inst.lam)
            assert np.linalg.norm(Q0) <= 9.0 / 8.0 * math.sqrt(3)


class TestGolfingStep:
    def test_zero_column_maps_to_zero(self):
        inst = in_budget_instance(3, n=32, m=64)
        plan = make_plan(32, 64, inst.supports, 0)
        Q = np.zeros((32, 2))
        assert not golfing_step(Q, inst.ensemble, plan, 1).any()

    def test_exact_isometry_annihilates(self):
        # Orthonormal-column sensing, every row in one batch: the sampling
        # operator restricted anywhere is exactly the identity.
        n = m = 6
        ens = orthonormal_column_ensemble(n, m, 1, seed=4)
        sup = SupportPattern(n=n, m=m, L=1, row_support=tuple(range(n)),
                             col_supports=((),))
        plan = GolfingPlan(
            supports=sup,
            batch_sizes=(m,),
            contraction_targets=(0.5,),
            batches=((np.arange(m),),),
        )
        rng = np.random.default_rng(5)
        Q = rng.standard_normal((n, 1))
        out = golfing_step(Q, ens, plan, 1)
        assert np.allclose(out, 0.0, atol=1e-12)

    def test_matches_dense_oracle_identity_sigma(self):
        inst = in_budget_instance(6, n=16, m=32, kT=3, kcol=2)
        plan = make_plan(16, 32, inst.supports, 1)
        rng = np.random.default_rng(7)
        Q = np.zeros((16, 2))
        for r in inst.supports.row_support:
            Q[r] = rng.standard_normal(2)
        for j in (1, plan.batch_count):
            expected = dense_golfing_step_oracle(
                Q, inst.ensemble.A, [np.eye(16)] * 2,
                list(inst.supports.row_support),
                [plan.batches[i][j - 1] for i in range(2)],
                32, plan.batch_sizes[j - 1],
            )
            assert np.allclose(golfing_step(Q, inst.ensemble, plan, j), expected, atol=1e-14)

    def test_matches_dense_oracle_correlated_sigma(self):
        rng = np.random.default_rng(8)
        B = rng.standard_normal((3, 3))
        spec = correlated_gaussian(B @ B.T + 3 * np.eye(3))
        ens = sample_ensemble([spec], 3, 9)
        sup = SupportPattern(n=3, m=3, L=1, row_support=(0, 2), col_supports=((),))
        plan = GolfingPlan(
            supports=sup,
            batch_sizes=(2,),
            contraction_targets=(0.5,),
            batches=((np.array([1, 2]),),),
        )
        Q = np.zeros((3, 1))
        Q[[0, 2], 0] = [1.0, -2.0]
        expected = dense_golfing_step_oracle(
            Q, ens.A, ens.sigma_inv, [0, 2], [np.array([1, 2])], 3, 2
        )
        assert np.allclose(golfing_step(Q, ens, plan, 1), expected, atol=1e-14)

    def test_bad_batch_index(self):
        inst = in_budget_instance(9, n=32, m=64)
        plan = make_plan(32, 64, inst.supports, 0)
        with pytest.raises(ValidationError):
            golfing_step(np.zeros((32, 2)), inst.ensemble, plan, plan.batch_count + 1)


class TestAssembly:
    def test_zero_sequence(self):
        inst = in_budget_instance(10, n=32, m=64)
        plan = make_plan(32, 64, inst.supports, 0)
        Q_seq = [np.zeros((32, 2))] * (plan.batch_count + 1)
        assert not assemble_W(plan, inst.ensemble, Q_seq).any()
        assert not assemble_U(plan, inst.ensemble, Q_seq).any()

    def test_w_vanishes_on_corruption(self):
        for seed in range(5):
            inst = in_budget_instance(seed, n=48, m=96, kT=3, kcol=4)
            cert, _ = build_certificate(inst, seed)
            assert not cert.W[inst.supports.omega_mask()].any()

    def test_telescoping_identity(self):
        for seed in range(5):
            inst = in_budget_instance(seed, n=48, m=96, kT=3, kcol=2)
            cert, _ = build_certificate(inst, seed + 100)
            U_on = np.zeros_like(cert.U)
            T = list(inst.supports.row_support)
            U_on[T] = cert.U[T]
            gap = np.linalg.norm((cert.Q[0] - cert.Q[-1]) - U_on)
            assert gap <= 1e-10


class TestExactDualVerifier:
    def test_oracle_certificate_passes(self):
        # Least-norm dual feasibility oracle on a friendly tiny instance.
        passed = 0
        for seed in range(12):
            inst = generate_instance(make_specs("rademacher_rows", 8, 2), m=8,
                                     k_T=1, k_per_column=0, seed=seed)
            W, V, sgn = min_norm_exact_dual_W(inst)
            checks = verify_exact_dual(W, inst.ensemble, inst.supports, V, inst.lam, sgn)
            passed += checks.all_pass
        assert passed >= 6

    def test_zero_certificate_fails_with_sqrt_kT(self):
        inst = in_budget_instance(11, n=32, m=64, kT=4)
        V = row_direction_matrix(inst.Y_true, inst.supports)
        sgn = sign_matrix(inst.S_true)
        checks = verify_exact_dual(np.zeros((64, 2)), inst.ensemble, inst.supports,
                                   V, inst.lam, sgn)
        first = checks["adjoint_matches_row_directions"]
        assert not first.passed
        assert first.value == pytest.approx(math.sqrt(4), abs=1e-12)

    def test_balance_scaling_preserves_sign_checks(self):
        inst = in_budget_instance(12, n=16, m=32, kT=2, kcol=2)
        V = row_direction_matrix(inst.Y_true, inst.supports)
        sgn = sign_matrix(inst.S_true)
        W_good, _, _ = min_norm_exact_dual_W(inst)
        rng = np.random.default_rng(0)
        W_bad = rng.standard_normal(W_good.shape)
        for W in (W_good, W_bad):
            base = verify_exact_dual(W, inst.ensemble, inst.supports, V, inst.lam, sgn)
            doubled = verify_exact_dual(2 * W, inst.ensemble, inst.supports, V,
                                        2 * inst.lam, sgn)
            for name in ("w_matches_corruption_signs", "w_max_entry_off_corruption"):
                assert base[name].passed == doubled[name].passed


class TestInexactDualVerifier:
    def test_requires_small_balance(self):
        inst = in_budget_instance(13, n=32, m=64)
        V = row_direction_matrix(inst.Y_true, inst.supports)
        sgn = sign_matrix(inst.S_true)
        with pytest.raises(ValidationError):
            verify_inexact_dual(np.zeros((64, 2)), inst.ensemble, inst.supports,
                                V, 1.0, 1.0, sgn)

    def test_directions_as_certificate(self):
        # Supplying the row directions themselves with a zero W and clean
        # corruption trivially meets every condition.
        inst = in_budget_instance(14, n=32, m=64, kcol=0)
        V = row_direction_matrix(inst.Y_true, inst.supports)
        checks = verify_inexact_dual(
            np.zeros((64, 2)), inst.ensemble, inst.supports, V, inst.lam, 1.0,
            np.zeros((64, 2)), V=V,
        )
        assert checks.all_pass
        assert checks["v_matches_directions_on_rows"].value == 0.0

    def test_single_entry_perturbation_fails(self):
        inst = in_budget_instance(15, n=32, m=64, kcol=0)
        V = row_direction_matrix(inst.Y_true, inst.supports)
        bad = V.copy()
        r = inst.supports.row_support[0]
        bad[r, 0] += 2 * inst.lam / 4.0  # twice the allowed distance
        checks = verify_inexact_dual(
            np.zeros((64, 2)), inst.ensemble, inst.supports, V, inst.lam, 1.0,
            np.zeros((64, 2)), V=bad,
        )
        assert not checks["v_matches_directions_on_rows"].passed

    def test_golfing_certificates_pass_in_budget(self):
        passes = 0
        for seed in range(20):
            inst = in_budget_instance(seed)
            rep = certify_instance(inst, seed + 1000)
            passes += rep.inexact_dual.all_pass
        assert passes >= 18


class TestCertificateBounds:
    def test_clean_corruption_zeroes_first_bound(self):
        inst = in_budget_instance(16, kcol=0)
        rep = certify_instance(inst, 0)
        assert rep.bound_checks["sign_rows_off_support"].value == 0.0

    def test_residual_equals_final_norm(self):
        for seed in range(5):
            inst = in_budget_instance(seed + 30)
            cert, _ = build_certificate(inst, seed)
            sgn = sign_matrix(inst.S_true)
            checks = verify_certificate_bounds(cert, inst.ensemble, inst.supports,
                                               inst.lam, 1.0, sgn)
            assert checks["golfing_residual"].value == pytest.approx(
                float(np.linalg.norm(cert.Q[-1])), abs=1e-10
            )

    def test_in_budget_pass_rate(self):
        passes = 0
        for seed in range(20):
            inst = in_budget_instance(seed + 50)
            rep = certify_instance(inst, seed)
            passes += rep.bound_checks.all_pass
        assert passes >= 18

    def test_conditional_contraction(self):
        # Wherever the per-batch deviation meets its target, the sequence
        # contracts at least that fast; holds even out of budget.
        for seed in range(10):
            inst = generate_instance(make_specs("rademacher_rows", 64, 3), m=96,
                                     k_T=4, k_per_column=3, seed=seed)
            rep = certify_instance(inst, seed)
            for iso, ratio, target in zip(rep.batch_isometry,
                                          rep.contraction_ratios,
                                          rep.contraction_targets):
                if iso.passed:
                    assert ratio <= target


class TestNearIsometry:
    def test_orthonormal_full_sampling_is_exact(self):
        n = m = 8
        ens = orthonormal_column_ensemble(n, m, 2, seed=17)
        sup = SupportPattern(n=n, m=m, L=2, row_support=(0, 3, 5),
                             col_supports=((), ()))
        res = near_isometry_check(ens, sup, "identity_form")
        assert res.passed
        assert max(res.values) <= 1e-10

    def test_empty_support_vacuous(self):
        inst = in_budget_instance(18, n=32, m=64, kT=0)
        res = near_isometry_check(inst.ensemble, inst.supports, "identity_form")
        assert res.passed and res.values == [0.0, 0.0]

    def test_in_budget_rate(self):
        ok = 0
        for seed in range(20):
            inst = generate_instance(make_specs("rademacher_rows", 256, 4), m=128,
                                     k_T=4, k_per_column=2, seed=seed)
            res = near_isometry_check(inst.ensemble, inst.supports, "identity_form")
            ok += res.passed
        assert ok >= 19

    def test_sigma_inverse_form_against_svd_oracle(self):
        rng = np.random.default_rng(19)
        B = rng.standard_normal((5, 5))
        spec = correlated_gaussian(B @ B.T + 5 * np.eye(5))
        ens = sample_ensemble([spec], 24, 20)
        sup = SupportPattern(n=5, m=24, L=1, row_support=(1, 3), col_supports=((2, 7),))
        res = near_isometry_check(ens, sup, "sigma_inverse_form")
        assert res.threshold == pytest.approx(ens.kappa_max / 2.0)
        rows = np.asarray(sup.omega_star[0])
        T = [1, 3]
        scale = 24 / (24 - 2)
        dense = scale * (ens.sigma_inv[0] @ ens.A[0].T @ np.diag(
            np.isin(np.arange(24), rows).astype(float)) @ ens.A[0] @ ens.sigma_inv[0]
        ) - ens.sigma_inv[0]
        block = dense[np.ix_(T, T)]
        assert res.values[0] == pytest.approx(jacobi_svd_values(block)[0], abs=1e-8)

    def test_batch_mode_needs_plan(self):
        inst = in_budget_instance(21, n=32, m=64)
        with pytest.raises(ValidationError):
            near_isometry_check(inst.ensemble, inst.supports, "batch")


class TestOffSupport:
    def test_full_row_support_vacuous(self):
        inst = in_budget_instance(22, n=16, m=4096, L=2, kT=16, kcol=0)
        chk = off_support_check(inst.ensemble, inst.supports)
        assert chk.passed and chk.value == 0.0

    def test_orthogonal_design_is_zero(self):
        n = m = 8
        ens = orthonormal_column_ensemble(n, m, 1, seed=23)
        sup = SupportPattern(n=n, m=m, L=1, row_support=(0, 4), col_supports=((),))
        chk = off_support_check(ens, sup)
        assert chk.value <= 1e-12

    def test_in_budget_rate(self):
        ok = 0
        for seed in range(20):
            inst = generate_instance(make_specs("rademacher_rows", 256, 4), m=128,
                                     k_T=4, k_per_column=2, seed=seed)
            ok += off_support_check(inst.ensemble, inst.supports).passed
        assert ok >= 19


class TestCrossModuleImplication:
    def test_exact_dual_certificate_implies_recovery(self):
        # Theorem-level implication at desk scale: wherever the oracle
        # certificate verifies, the solver returns the truth.
        from oracles import baseline_rank_condition

        confirmed = 0
        for seed in range(10):
            inst = generate_instance(make_specs("rademacher_rows", 8, 2), m=8,
                                     k_T=1, k_per_column=1, seed=seed)
            if not baseline_rank_condition(inst):
                continue
            W, V, sgn = min_norm_exact_dual_W(inst)
            checks = verify_exact_dual(W, inst.ensemble, inst.supports, V, inst.lam, sgn)
            if not checks.all_pass:
                continue
            rep = solve_rgl(inst.M, inst.ensemble, inst.lam,
                            SolverOptions(tol_primal=1e-9, tol_dual=1e-9))
            err_Y = np.linalg.norm(rep.Y_hat - inst.Y_true)
            err_S = np.linalg.norm(rep.S_hat - inst.S_true)
            assert err_Y <= 1e-5 * max(1.0, np.linalg.norm(inst.Y_true))
            assert err_S <= 1e-5 * max(1.0, np.linalg.norm(inst.S_true))
            confirmed += 1
        assert confirmed >= 3
