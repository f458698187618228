import numpy as np
import pytest
from pydantic import ValidationError
from scipy.optimize import linprog

from app.exceptions import PreconditionError
from app.matrix import relative_error
from app.solvers import (
    L1Config,
    SolverConfig,
    bp_residual_oracle,
    default_lambda,
    l1_fit,
    l1_fit_detailed,
    l1_fit_noisy,
    l1_objective,
    l1_optimality_gap,
    noise_budget,
    pcp_alm,
    pcp_objective,
    project_fro_ball,
    soft_threshold,
    stable_pcp,
    sv_threshold,
)
from tests.conftest import low_rank_plus_sparse


def lp_l1_objective(A, b):
    """Reference min ||b - A x||_1 by linear programming."""
    m, n = A.shape
    c = np.concatenate([np.zeros(n), np.ones(2 * m)])
    A_eq = np.hstack([A, np.eye(m), -np.eye(m)])
    bounds = [(None, None)] * n + [(0, None)] * (2 * m)
    res = linprog(c, A_eq=A_eq, b_eq=b, bounds=bounds, method="highs")
    return res.fun


def circle_design(m=10):
    theta = 2 * np.pi * np.arange(m) / m
    return np.sqrt(2.0 / m) * np.column_stack([np.cos(theta), np.sin(theta)])


# -----------------------------------------------------------------------------
# Proximal maps
# -----------------------------------------------------------------------------


def test_soft_threshold():
    out = soft_threshold(np.array([-3.0, -0.5, 0.0, 0.5, 2.0]), 1.0)
    np.testing.assert_array_equal(out, [-2.0, 0.0, 0.0, 0.0, 1.0])


def test_sv_threshold_shrinks_spectrum(rng):
    X = rng.standard_normal((8, 6))
    s = np.linalg.svd(X, compute_uv=False)
    tau = s[2]
    out = np.linalg.svd(sv_threshold(X, tau), compute_uv=False)
    np.testing.assert_allclose(out[:2], s[:2] - tau, atol=1e-10)
    assert np.all(out[2:] < 1e-10)


def test_project_fro_ball(rng):
    X = rng.standard_normal((4, 4))
    assert np.linalg.norm(project_fro_ball(X, 1.0)) == pytest.approx(1.0)
    np.testing.assert_array_equal(project_fro_ball(X, 100.0), X)


def test_thresholds_at_zero_are_identity(rng):
    X = rng.standard_normal((7, 5))
    np.testing.assert_array_equal(soft_threshold(X, 0.0), X)
    np.testing.assert_allclose(sv_threshold(X, 0.0), X, atol=1e-12)


def test_noise_budget_covers_gaussian_noise(rng):
    assert noise_budget((30, 40), 0.0) == 0.0
    assert noise_budget((30, 40), 1e-3) == pytest.approx(1e-3 * np.sqrt(1200 + np.sqrt(9600)))
    assert noise_budget((50,), 2.0) == noise_budget((50, 1), 2.0)
    covered = [
        np.linalg.norm(1e-3 * rng.standard_normal((30, 40))) <= noise_budget((30, 40), 1e-3)
        for _ in range(200)
    ]
    assert np.mean(covered) >= 0.9
    with pytest.raises(PreconditionError):
        noise_budget((3, 3), -1.0)


def test_default_lambda():
    assert default_lambda((400, 100)) == pytest.approx(0.05)


def test_solver_config_validation():
    with pytest.raises(ValidationError):
        SolverConfig(mu_growth=1.0)
    with pytest.raises(ValidationError):
        SolverConfig(lam=0.0)
    with pytest.raises(ValidationError):
        SolverConfig(tol=-1.0)


# -----------------------------------------------------------------------------
# Principal component pursuit
# -----------------------------------------------------------------------------


class TestPcpAlm:
    def test_exact_low_rank(self, rng):
        D = rng.standard_normal((20, 2)) @ rng.standard_normal((2, 20))
        dec = pcp_alm(D, SolverConfig(lam=1 / np.sqrt(20)))
        assert dec.converged
        assert dec.low_rank.shape == dec.sparse.shape == D.shape
        assert relative_error(D, dec.low_rank) <= 1e-5
        assert np.linalg.norm(dec.sparse) <= 1e-6 * np.linalg.norm(D)

    def test_recovers_corrupted_low_rank(self, rng):
        L, S = low_rank_plus_sparse(rng, 200, 200, 5, 0.02)
        dec = pcp_alm(L + S, SolverConfig(lam=1 / np.sqrt(200)))
        assert dec.converged
        assert dec.primal_residual <= SolverConfig().tol
        assert relative_error(L, dec.low_rank) <= 5e-3

    def test_single_spike_is_all_sparse(self):
        D = np.zeros((10, 10))
        D[3, 7] = 1.0
        dec = pcp_alm(D)
        assert np.abs(dec.low_rank).max() <= 1e-4
        np.testing.assert_allclose(dec.sparse, D, atol=1e-4)

    def test_zero_matrix_rejected(self):
        with pytest.raises(PreconditionError):
            pcp_alm(np.zeros((3, 3)))

    def test_non_convergence_is_reported(self, rng):
        L, S = low_rank_plus_sparse(rng, 30, 30, 3, 0.05)
        dec = pcp_alm(L + S, SolverConfig(max_iter=2))
        assert not dec.converged
        assert dec.iterations == 2

    @pytest.mark.parametrize("shape,r", [((100, 15), 3), ((400, 25), 5), ((60, 1050), 5)])
    def test_clean_sketches_converge(self, rng, shape, r):
        D = rng.standard_normal((shape[0], r)) @ rng.standard_normal((r, shape[1]))
        dec = pcp_alm(D)
        assert dec.converged
        assert dec.primal_residual <= SolverConfig().tol

    def test_dual_tolerance_is_optional(self, rng):
        L, S = low_rank_plus_sparse(rng, 40, 40, 2, 0.02)
        loose = pcp_alm(L + S)
        strict = pcp_alm(L + S, SolverConfig(dual_tol=1e-9))
        assert loose.converged
        assert strict.iterations >= loose.iterations

    def test_primal_residual_is_truthful(self, rng):
        L, S = low_rank_plus_sparse(rng, 50, 50, 3, 0.05)
        D = L + S
        for cfg in (SolverConfig(), SolverConfig(max_iter=3)):
            dec = pcp_alm(D, cfg)
            actual = np.linalg.norm(D - dec.low_rank - dec.sparse) / np.linalg.norm(D)
            assert abs(dec.primal_residual - actual) <= 1e-14

    def test_no_feasible_perturbation_does_better(self, rng):
        L, S = low_rank_plus_sparse(rng, 60, 60, 3, 0.02)
        lam = default_lambda(L.shape)
        dec = pcp_alm(L + S)
        best = dec.objective(lam)
        for _ in range(20):
            delta = 1e-2 * rng.standard_normal(L.shape)
            moved = pcp_objective(dec.low_rank + delta, dec.sparse - delta, lam)
            assert moved >= best - 1e-4 * best

    def test_objective(self):
        L = np.diag([2.0, 0.0])
        S = np.array([[0.0, -1.0], [0.0, 0.0]])
        assert pcp_objective(L, S, 0.5) == pytest.approx(2.5)


class TestStablePcp:
    def test_zero_budget_matches_pcp(self, rng):
        L, S = low_rank_plus_sparse(rng, 40, 40, 2, 0.02)
        a = stable_pcp(L + S, eps_n=0.0)
        b = pcp_alm(L + S)
        assert relative_error(b.low_rank, a.low_rank) <= 1e-6

    def test_noise_budget(self, rng):
        L, S = low_rank_plus_sparse(rng, 60, 60, 3, 0.02)
        sigma = 1e-3
        N = sigma * rng.standard_normal(L.shape)
        dec = stable_pcp(L + S + N, eps_n=np.linalg.norm(N))
        D = L + S + N
        assert np.linalg.norm(D - dec.low_rank - dec.sparse) <= (
            np.linalg.norm(N) + dec.constraint_residual * np.linalg.norm(D) + 1e-12
        )
        bound = 10 * sigma * 60 / np.linalg.norm(L)
        assert relative_error(L, dec.low_rank) <= bound

    def test_negative_budget(self, rng):
        with pytest.raises(PreconditionError):
            stable_pcp(rng.standard_normal((3, 3)), eps_n=-1.0)

    def test_pure_noise_is_all_noise(self, rng):
        G = rng.standard_normal((30, 30))
        sigma = 1e-2
        D = sigma * G * (30 / np.linalg.norm(G))
        dec = stable_pcp(D, eps_n=noise_budget(D.shape, sigma))
        assert np.linalg.norm(dec.low_rank) <= 1e-6 * np.linalg.norm(D)
        assert np.linalg.norm(dec.sparse) <= 1e-6 * np.linalg.norm(D)
        np.testing.assert_allclose(dec.noise, D, atol=1e-6 * np.linalg.norm(D))


# -----------------------------------------------------------------------------
# l1 regression
# -----------------------------------------------------------------------------


class TestL1Fit:
    def test_consistent_system(self, rng):
        A = rng.standard_normal((20, 3))
        X0 = rng.standard_normal((3, 4))
        np.testing.assert_allclose(l1_fit(A, A @ X0), X0, atol=1e-8)

    def test_identity_design(self, rng):
        B = rng.standard_normal((4, 3))
        np.testing.assert_allclose(l1_fit(np.eye(4), B), B)

    def test_vector_right_hand_side(self, rng):
        A = rng.standard_normal((12, 2))
        x = l1_fit(A, A @ np.array([1.0, -2.0]))
        assert x.shape == (2,)
        np.testing.assert_allclose(x, [1.0, -2.0], atol=1e-8)

    @pytest.mark.parametrize("corrupt", range(10))
    def test_single_corruption_is_ignored(self, corrupt):
        A = circle_design()
        q = np.array([0.7, -1.3])
        b = A @ q
        b[corrupt] += 5.0
        np.testing.assert_allclose(l1_fit(A, b), q, atol=1e-10)

    def test_matches_linear_programming(self, rng):
        for _ in range(100):
            A = rng.standard_normal((25, 4))
            b = A @ rng.standard_normal(4) + rng.laplace(size=25)
            result = l1_fit_detailed(A, b)
            assert result.all_certified
            assert l1_optimality_gap(A, b, result.solution) <= 1e-6
            assert l1_objective(A, b[:, None], result.solution[:, None])[0] <= (
                lp_l1_objective(A, b) * (1 + 1e-9) + 1e-9
            )

    def test_no_random_step_does_better(self, rng):
        A = rng.standard_normal((30, 3))
        b = A @ rng.standard_normal(3) + rng.laplace(size=30) * (rng.random(30) < 0.3)
        x = l1_fit(A, b)
        best = np.abs(b - A @ x).sum()
        for scale in np.logspace(-6, 0, 100):
            step = scale * rng.standard_normal(3)
            assert np.abs(b - A @ (x + step)).sum() >= best - 1e-9

    def test_certificate_scales_with_the_column(self, rng):
        A = rng.standard_normal((25, 3))
        b = A @ rng.standard_normal(3)
        b[[2, 9]] += 3.0
        x = l1_fit(A, b)
        small = l1_optimality_gap(A, b, x)
        assert small <= 1e-6
        assert l1_optimality_gap(A, 1e6 * b, 1e6 * x) == pytest.approx(small, abs=1e-6)

    def test_residual_floor_certifies_a_perturbed_basis(self, rng, caplog):
        A = rng.standard_normal((60, 3))
        X0 = rng.standard_normal((3, 5))
        B = A @ X0
        B[rng.random(B.shape) < 0.05] += 2.0
        A_hat = A + 1e-8 * rng.standard_normal(A.shape)
        for j in range(5):
            assert l1_optimality_gap(A_hat, B[:, j], X0[:, j], residual_floor=1e-6) <= 1e-6
        with caplog.at_level("WARNING", logger="app.solvers"):
            result = l1_fit_detailed(A_hat, B, L1Config(residual_floor=1e-6))
        assert result.all_certified
        assert not caplog.records
        np.testing.assert_allclose(result.solution, X0, atol=1e-6)

    def test_rank_deficient_design(self, rng):
        a = rng.standard_normal(8)
        with pytest.raises(PreconditionError, match="design matrix rank-deficient"):
            l1_fit(np.column_stack([a, 2 * a]), rng.standard_normal(8))

    def test_too_few_rows(self, rng):
        with pytest.raises(PreconditionError, match="rank-deficient"):
            l1_fit(rng.standard_normal((2, 3)), rng.standard_normal(2))

    def test_threaded_fallback_matches_serial(self, rng):
        A = rng.standard_normal((15, 3))
        B = A @ rng.standard_normal((3, 6)) + rng.standard_cauchy((15, 6))
        serial = l1_fit(A, B, L1Config(max_workers=1))
        threaded = l1_fit(A, B, L1Config(max_workers=4))
        np.testing.assert_allclose(
            l1_objective(A, B, serial), l1_objective(A, B, threaded), rtol=1e-8
        )


class TestL1FitNoisy:
    def test_zero_budget_is_l1_fit(self, rng):
        A = rng.standard_normal((20, 3))
        B = rng.standard_normal((20, 2))
        X, E = l1_fit_noisy(A, B, 0.0)
        np.testing.assert_array_equal(X, l1_fit(A, B))
        assert not np.any(E)

    def test_noise_budget(self, rng):
        A = rng.standard_normal((40, 4))
        X0 = rng.standard_normal((4, 3))
        N = 1e-3 * rng.standard_normal((40, 3))
        delta = np.linalg.norm(N)
        X, E = l1_fit_noisy(A, A @ X0 + N, delta)
        assert np.linalg.norm(E) <= delta * (1 + 1e-9)
        sigma_min = np.linalg.svd(A, compute_uv=False)[-1]
        assert np.linalg.norm(X - X0) <= 10 * delta / sigma_min

    def test_huge_budget_on_consistent_data(self, rng):
        A = rng.standard_normal((20, 3))
        X0 = rng.standard_normal((3, 2))
        X, E = l1_fit_noisy(A, A @ X0, 1e6)
        np.testing.assert_allclose(X, X0, atol=1e-8)
        assert np.abs(E).max() <= 1e-8


class TestResidualOracle:
    def test_range_vector_gives_zero(self, rng):
        U = np.linalg.qr(rng.standard_normal((30, 3)))[0]
        z = bp_residual_oracle(U, U @ rng.standard_normal(3))
        np.testing.assert_allclose(z, 0.0, atol=1e-9)

    def test_recovers_sparse_residual(self, rng):
        U = np.linalg.qr(rng.standard_normal((30, 3)))[0]
        s = np.zeros(30)
        s[[4, 17]] = [5.0, -3.0]
        z = bp_residual_oracle(U, U @ rng.standard_normal(3) + s)
        np.testing.assert_allclose(z, s, atol=1e-7)

    def test_agrees_with_l1_fit(self, rng):
        for _ in range(50):
            U = np.linalg.qr(rng.standard_normal((25, 3)))[0]
            d = U @ rng.standard_normal(3) + rng.laplace(size=25)
            z = bp_residual_oracle(U, d)
            q = l1_fit(U, d)
            fit_obj = np.abs(d - U @ q).sum()
            assert np.abs(z).sum() == pytest.approx(fit_obj, rel=1e-6)

    def test_square_basis_has_no_complement(self):
        with pytest.raises(PreconditionError, match="complement is empty"):
            bp_residual_oracle(np.eye(3), np.ones(3))
