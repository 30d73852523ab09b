"""Semilinear fixed-point iteration and solution verification."""

import numpy as np
import pytest

from phiheat.errors import BallEscapeError, ConfigError, DivergenceError, DomainError, PhiHeatError
from phiheat.fields import Field, Grid
from phiheat.geometry import PhiModel
from phiheat.holder import PairSampler, WeightedSpaceSpec, weighted_holder_norm
from phiheat.picard import (
    PicardConfig,
    affine_forcing,
    choose_constants,
    combined,
    estimate_lipschitz,
    picard_solve,
    quadratic_zero,
    verify_solution,
    weighted_frame_dx,
)
from phiheat.solver import discretize, heat_convolve


@pytest.fixture(scope="module")
def model():
    return PhiModel.exact_product(1, 1, x_range=(0.08, 1.0))


@pytest.fixture(scope="module")
def grid(model):
    return Grid.build(model, n_x=64, K=2, L=2, T=0.1, n_t=26, max_step_ratio=1.1)


@pytest.fixture(scope="module")
def op(model, grid):
    return discretize(model, grid)


def forcing(grid, model, scale=0.05):
    ell = Field.zeros(grid, model)
    m = grid.mode_index()
    prof = np.exp(-(((grid.x_nodes - 0.4) / 0.15) ** 2))
    ell.values[:, m[(0, 0)], :] = scale * prof[:, None]
    ell.values[:, m[(1, 0)], :] = 0.4 * scale * prof[:, None]
    ell.values[:, m[(-1, 0)], :] = 0.4 * scale * prof[:, None]
    return ell


class TestChooseConstants:
    def test_unit_values(self):
        assert choose_constants(1.0, 1.0) == (pytest.approx(1 / 3), pytest.approx(1 / 9))

    def test_doubling_opnorm(self):
        assert choose_constants(2.0, 1.0) == (pytest.approx(1 / 6), pytest.approx(1 / 36))

    def test_homogeneity(self):
        e1, t1 = choose_constants(1.0, 1.0)
        e2, t2 = choose_constants(1.0, 2.0)
        assert e2 == pytest.approx(e1 / 2)
        assert t2 == pytest.approx(t1 / 4)

    def test_domain(self):
        with pytest.raises(DomainError):
            choose_constants(0.0, 1.0)


class TestWeightedFrameDx:
    def test_plain_field(self, grid, model):
        u = Field.from_function(grid, model, lambda x, y, z, t: x)
        out = weighted_frame_dx(u)
        m0 = grid.mode_index()[(0, 0)]
        np.testing.assert_allclose(out.values[:, m0, 0].real, grid.x_nodes**2, rtol=1e-9)

    def test_factored_field(self, grid, model):
        # u = x * 1 factored at gamma = 1: x^2 d_x (x) = x^2 = x * (x),
        # i.e. stripped part x at weight 1.
        u = Field.from_function(grid, model, lambda x, y, z, t: np.ones_like(x), gamma=1.0)
        out = weighted_frame_dx(u)
        assert out.gamma == 1.0
        m0 = grid.mode_index()[(0, 0)]
        np.testing.assert_allclose(out.values[:, m0, 0].real, grid.x_nodes, rtol=1e-9)


class TestPicardSolve:
    def test_zero_rhs_one_iteration(self, model, grid):
        rhs = affine_forcing(Field.zeros(grid, model), 0.0)
        rhs.C_eta = 1e-6
        cfg = PicardConfig(eta=0.5, T_prime=0.1, opnorm=1.0, tol=1e-6)
        res = picard_solve(rhs, cfg, model, grid, allow_unsafe=True)
        assert res.converged and len(res.diffs) == 1
        assert np.max(np.abs(res.solution.values)) == 0.0

    def test_pure_forcing_two_iterations(self, model, grid, op):
        rhs = affine_forcing(forcing(grid, model), 0.0)
        rhs.C_eta = 1e-6
        cfg = PicardConfig(eta=2.0, T_prime=0.1, opnorm=1.0, tol=1e-6)
        res = picard_solve(rhs, cfg, model, grid, op=op, allow_unsafe=True)
        assert res.converged and len(res.diffs) == 2
        want = heat_convolve(op, forcing(grid, model))
        np.testing.assert_allclose(res.solution.values, want.values, atol=1e-14)

    def test_combined_contracts_within_paper_rate(self, model, grid, op):
        rhs = combined(forcing(grid, model), c=0.15, q=0.3)
        C_eta = estimate_lipschitz(rhs, model, grid, eta=0.5, n_pairs=40, pool_size=8, seed=3, norm_pairs=400)
        eta_max, t_max = choose_constants(2.5, C_eta)
        cfg = PicardConfig(eta=min(eta_max, 0.5), T_prime=min(t_max, 0.1), opnorm=2.5, tol=1e-6)
        assert cfg.T_prime >= grid.T  # mild constants admit the grid horizon
        res = picard_solve(rhs, cfg, model, grid, op=op)
        assert res.converged
        assert res.residual <= 1e-6
        assert max(res.contraction_factors[1:]) <= 2.0 / 3.0 + 0.05
        # fixed-point identity: one more application stays put
        again = heat_convolve(op, rhs(res.solution))
        d = weighted_holder_norm(
            again - res.solution, WeightedSpaceSpec(2, 0.5, 0.0), PairSampler(400, seed=5)
        ).total
        assert d <= 1e-6

    def test_two_starting_points_agree(self, model, grid, op):
        rhs = combined(forcing(grid, model), c=0.15, q=0.3)
        rhs.C_eta = 0.1
        cfg = PicardConfig(eta=0.5, T_prime=0.1, opnorm=2.5, tol=1e-6)
        a = picard_solve(rhs, cfg, model, grid, op=op, allow_unsafe=True)
        vals = np.zeros((grid.n_x, grid.n_modes, grid.n_t), dtype=complex)
        vals[:, grid.mode_index()[(0, 0)], :] = 0.02 * (grid.t_nodes / grid.T)[None, :]
        seed_field = Field(vals, grid, model, 0.0)
        b = picard_solve(rhs, cfg, model, grid, op=op, u_start=seed_field, allow_unsafe=True)
        gap = weighted_holder_norm(
            a.solution - b.solution, WeightedSpaceSpec(2, 0.5, 0.0), PairSampler(600, seed=8)
        ).total
        assert gap <= 2.0 * cfg.tol

    def test_ball_escape(self, model, grid, op):
        rhs = combined(forcing(grid, model, scale=0.5), c=0.0, q=0.0)
        rhs.C_eta = 1e-6
        cfg = PicardConfig(eta=1e-4, T_prime=0.1, opnorm=1.0, tol=1e-6)
        with pytest.raises(BallEscapeError):
            picard_solve(rhs, cfg, model, grid, op=op, allow_unsafe=True)

    def test_unsafe_constants_rejected_without_flag(self, model, grid):
        rhs = combined(forcing(grid, model), c=0.15, q=0.3)
        rhs.C_eta = 10.0  # makes (eta_max, T_max) tiny
        cfg = PicardConfig(eta=0.5, T_prime=0.1, opnorm=2.5, tol=1e-6)
        with pytest.raises(ConfigError):
            picard_solve(rhs, cfg, model, grid)

    def test_negative_control_violent_quadratic(self, model, grid, op):
        # Deliberately inadmissible: huge quadratic coefficient and forcing.
        rhs = combined(forcing(grid, model, scale=3.0), c=0.0, q=300.0)
        rhs.C_eta = 1e-6
        cfg = PicardConfig(eta=1e6, T_prime=0.1, opnorm=1.0, tol=1e-12, max_iter=25)
        try:
            res = picard_solve(rhs, cfg, model, grid, op=op, allow_unsafe=True)
            ok = res.converged or (res.contraction_factors and max(res.contraction_factors) >= 1.0)
            assert ok
        except (BallEscapeError, DivergenceError, ConfigError, OverflowError, FloatingPointError):
            pass

    def test_starting_point_must_vanish_at_zero(self, model, grid):
        rhs = affine_forcing(Field.zeros(grid, model), 0.0)
        rhs.C_eta = 1e-6
        cfg = PicardConfig(eta=0.5, T_prime=0.1, opnorm=1.0)
        bad = Field(np.ones((grid.n_x, grid.n_modes, grid.n_t), dtype=complex), grid, model)
        with pytest.raises(DomainError):
            picard_solve(rhs, cfg, model, grid, u_start=bad, allow_unsafe=True)


class TestVerifySolution:
    def test_zero_everything(self, model, grid, op):
        rhs = affine_forcing(Field.zeros(grid, model), 0.0)
        rep = verify_solution(Field.zeros(grid, model), rhs, op)
        assert rep.sup_residual == 0.0 and rep.initial_norm == 0.0

    def test_affine_solution_residual_matches_benchmark(self, model, grid, op):
        # The fixed point of pure forcing is the convolution itself; its
        # strong residual is pure discretization error, the benchmark scale.
        ell = forcing(grid, model)
        rhs = affine_forcing(ell, 0.0)
        rhs.C_eta = 1e-6
        cfg = PicardConfig(eta=2.0, T_prime=0.1, opnorm=1.0, tol=1e-8)
        res = picard_solve(rhs, cfg, model, grid, op=op, allow_unsafe=True)
        rep = verify_solution(res.solution, rhs, op)
        base = verify_solution(heat_convolve(op, ell), rhs, op)
        assert rep.sup_residual <= 10.0 * max(base.sup_residual, 1e-14)

    def test_perturbation_triangle_bound(self, model, grid, op):
        ell = forcing(grid, model)
        rhs = combined(ell, c=0.1, q=0.2)
        rhs.C_eta = 0.1
        cfg = PicardConfig(eta=0.5, T_prime=0.1, opnorm=2.5, tol=1e-7)
        res = picard_solve(rhs, cfg, model, grid, op=op, allow_unsafe=True)
        u = res.solution
        base = verify_solution(u, rhs, op)

        bump = Field.from_function(grid, model, lambda x, y, z, t: 0.1 * x)
        pert = u + bump
        rep = verify_solution(pert, rhs, op)

        # Delta = (d_t + L)(0.1 x) - [F(u + 0.1x) - F(u)] on the same stencil.
        from phiheat.fields import diff_matrix

        Dt = diff_matrix(grid.t_nodes, 1, stencil=3)
        bw = bump.values
        dbdt = (Dt @ bw.reshape(-1, grid.n_t).T).T.reshape(bw.shape)
        dF = rhs(pert).values - rhs(u).values
        delta = dbdt + op.apply(bw) - dF
        delta_sup = float(np.max(np.abs(delta[2:-2, :, 1:-1])))
        assert rep.sup_residual >= delta_sup - base.sup_residual - 1e-12
        assert rep.sup_residual <= delta_sup + base.sup_residual + 1e-12


class TestQuadraticCatalog:
    def test_quadratic_zero_squares(self, grid, model):
        u = Field.from_function(grid, model, lambda x, y, z, t: np.cos(y[0]) + 0 * x)
        rhs = quadratic_zero(2.0)
        out = rhs.f2(u)
        want = Field.from_function(grid, model, lambda x, y, z, t: 2.0 * (0.5 + 0.5 * np.cos(2 * y[0])) + 0 * x)
        np.testing.assert_allclose(out.values, want.values, atol=1e-12)

    def test_lipschitz_estimate_scales_with_coefficient(self, model, grid):
        rhs_small = combined(forcing(grid, model), c=0.05, q=0.0)
        rhs_big = combined(forcing(grid, model), c=0.5, q=0.0)
        kw = dict(eta=0.5, n_pairs=30, pool_size=6, seed=11, norm_pairs=300)
        c_small = estimate_lipschitz(rhs_small, model, grid, **kw)
        c_big = estimate_lipschitz(rhs_big, model, grid, **kw)
        assert c_big == pytest.approx(10.0 * c_small, rel=1e-9)
