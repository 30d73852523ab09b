"""Grid construction, stencils, mode transforms, and field IO."""

import math

import numpy as np
import pytest

from phiheat.errors import ConfigError
from phiheat.fields import Field, Grid, diff_matrix, fornberg_weights, tensor_modes
from phiheat.geometry import PERIOD, PhiModel


@pytest.fixture
def model():
    return PhiModel.exact_product(1, 1, x_range=(0.05, 1.0))


@pytest.fixture
def grid(model):
    return Grid.build(model, n_x=64, K=2, L=2, T=0.5, n_t=11)


class TestStencils:
    def test_fornberg_matches_uniform_central(self):
        xs = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
        w1 = fornberg_weights(xs, 0.0, 1)
        np.testing.assert_allclose(w1, [1 / 12, -8 / 12, 0.0, 8 / 12, -1 / 12], atol=1e-14)
        w2 = fornberg_weights(xs, 0.0, 2)
        np.testing.assert_allclose(w2, [-1 / 12, 16 / 12, -30 / 12, 16 / 12, -1 / 12], atol=1e-13)

    def test_diff_matrix_exact_on_quartics(self):
        nodes = np.geomspace(0.05, 1.0, 40)
        D = diff_matrix(nodes, 1)
        for p in range(5):
            got = D @ nodes**p
            want = p * nodes ** max(p - 1, 0) if p else np.zeros_like(nodes)
            np.testing.assert_allclose(got, want, atol=1e-9 * max(1.0, p))

    def test_diff_matrix_fourth_order(self):
        interior, ends = [], []
        for n in (60, 120, 240):
            nodes = np.geomspace(0.1, 1.0, n)
            D = diff_matrix(nodes, 1)
            err = np.abs(D @ np.sin(5 * nodes) - 5 * np.cos(5 * nodes))
            interior.append(err[3:-3].max())
            ends.append(max(err[:3].max(), err[-3:].max()))
        assert math.log2(interior[0] / interior[1]) > 3.5
        assert math.log2(interior[1] / interior[2]) > 3.5
        # One-sided closures converge too, just with a larger constant.
        assert ends[0] > ends[1] > ends[2]


class TestGrid:
    def test_build_invariants(self, grid):
        assert grid.n_x == 64
        assert grid.n_modes == 25
        assert grid.dt == pytest.approx(0.05)

    def test_step_ratio_guard(self, model):
        with pytest.raises(ConfigError):
            Grid.build(model, n_x=32, K=1, L=1, T=0.1, n_t=3)

    def test_too_few_nodes(self, model):
        with pytest.raises(ConfigError):
            Grid.build(model, n_x=16, K=1, L=1, T=0.1, n_t=3, max_step_ratio=2.0)

    def test_mode_symmetry_enforced(self, model):
        modes = np.array([[1, 0], [0, 0]])  # missing (-1, 0)
        with pytest.raises(ConfigError):
            Grid(np.geomspace(0.05, 1, 32), modes, np.linspace(0, 1, 3), 1, 1)

    def test_mode_shape(self, grid):
        assert grid.mode_shape() == (5, 5)

    def test_refined(self, grid):
        fine = grid.refined()
        assert fine.n_x == 127 and fine.n_t == 21
        assert fine.T == pytest.approx(grid.T)


class TestFieldTransforms:
    def test_from_function_band_limited_exact(self, grid, model):
        fn = lambda x, y, z, t: x * np.cos(2 * y[0]) * np.sin(z[0]) + t
        fld = Field.from_function(grid, model, fn)
        assert fld.is_hermitian(1e-12)
        rng = np.random.default_rng(0)
        ix = rng.integers(0, grid.n_x, 50)
        it = rng.integers(0, grid.n_t, 50)
        y = rng.uniform(0, PERIOD, (50, 1))
        z = rng.uniform(0, PERIOD, (50, 1))
        got = fld.eval_samples(ix, y, z, it)
        want = np.array(
            [fn(grid.x_nodes[i], yy, zz, grid.t_nodes[j]) for i, yy, zz, j in zip(ix, y, z, it)]
        )
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_weight_factoring(self, grid, model):
        fn = lambda x, y, z, t: np.cos(y[0]) + 0 * x
        v = Field.from_function(grid, model, fn)
        u = v.with_weight(0.0)  # no-op
        assert u is v
        w = Field(v.values.copy(), grid, model, gamma=1.0)  # represents x * cos(y)
        rng = np.random.default_rng(1)
        ix = rng.integers(0, grid.n_x, 20)
        y = rng.uniform(0, PERIOD, (20, 1))
        z = np.zeros((20, 1))
        it = np.zeros(20, dtype=int)
        np.testing.assert_allclose(
            w.eval_samples(ix, y, z, it),
            grid.x_nodes[ix] * np.cos(y[:, 0]),
            atol=1e-12,
        )
        back = w.with_weight(0.0)  # same function, weight absorbed into values
        np.testing.assert_allclose(
            back.eval_samples(ix, y, z, it), w.eval_samples(ix, y, z, it), rtol=1e-12
        )

    def test_dealiased_product(self, grid, model):
        f1 = Field.from_function(grid, model, lambda x, y, z, t: np.cos(y[0]) + 0 * x)
        f2 = Field.from_function(grid, model, lambda x, y, z, t: np.cos(y[0]) + 0 * x)
        prod = f1.multiply(f2)
        # cos^2(y) = 1/2 + cos(2y)/2 is inside the band limit: exact.
        want = Field.from_function(grid, model, lambda x, y, z, t: 0.5 + 0.5 * np.cos(2 * y[0]) + 0 * x)
        np.testing.assert_allclose(prod.values, want.values, atol=1e-12)

    def test_product_of_edge_modes_truncates_without_aliasing(self, grid, model):
        f = Field.from_function(grid, model, lambda x, y, z, t: np.cos(2 * y[0]) + 0 * x)
        prod = f.multiply(f)
        # cos^2(2y) = 1/2 + cos(4y)/2; the 4-mode exceeds the band and must
        # be dropped, not wrapped onto a low mode.
        want = Field.from_function(grid, model, lambda x, y, z, t: 0.5 + 0 * x)
        np.testing.assert_allclose(prod.values, want.values, atol=1e-12)


class TestFieldIO:
    def test_binary_round_trip(self, grid, model):
        rng = np.random.default_rng(5)
        vals = rng.normal(size=(grid.n_x, grid.n_modes, grid.n_t)) + 1j * rng.normal(
            size=(grid.n_x, grid.n_modes, grid.n_t)
        )
        fld = Field(vals, grid, model, gamma=0.5)
        back = Field.from_binary(fld.to_binary())
        np.testing.assert_array_equal(back.values, fld.values)
        np.testing.assert_array_equal(back.grid.x_nodes, grid.x_nodes)
        np.testing.assert_array_equal(back.grid.modes, grid.modes)
        assert back.gamma == 0.5
        assert back.model == model

    def test_csv_header_and_determinism(self, grid, model):
        fld = Field.zeros(grid, model)
        text = fld.to_csv()
        assert text.splitlines()[0] == "t,x,mode,re,im"
        assert text == fld.to_csv()

    def test_nonfinite_rejected(self, grid, model):
        vals = np.zeros((grid.n_x, grid.n_modes, grid.n_t), dtype=complex)
        vals[0, 0, 0] = np.nan
        with pytest.raises(ConfigError):
            Field(vals, grid, model)


def test_tensor_modes_symmetric():
    modes = tensor_modes(2, 1, b=1, f=1)
    assert modes.shape == (15, 2)
    keys = {tuple(r) for r in modes.tolist()}
    assert all(tuple(-v for v in r) in keys for r in keys)
