"""Ensemble generation and empirical mapping bounds."""

import numpy as np
import pytest

from phiheat.errors import ConfigError
from phiheat.fields import Grid
from phiheat.geometry import PhiModel
from phiheat.holder import WeightedSpaceSpec, alpha_norm_estimate, PairSampler
from phiheat.schauder import (
    SQRT_T_VARIANT,
    T_ALPHA_HALF_VARIANT,
    Ensemble,
    EnsembleSpec,
    MappingReport,
    generate_ensemble,
    mapping_bound_check,
    time_weight_check,
)
from phiheat.solver import discretize


@pytest.fixture(scope="module")
def model():
    return PhiModel.exact_product(1, 1, x_range=(0.05, 1.0))


@pytest.fixture(scope="module")
def grid(model):
    return Grid.build(model, n_x=64, K=2, L=2, T=0.5, n_t=41)


@pytest.fixture(scope="module")
def rough(model, grid):
    spec = EnsembleSpec(n_functions=20, roughness=0.5, seed=42, norm_pairs=600)
    return generate_ensemble(spec, model, grid)


class TestGenerateEnsemble:
    def test_unit_norm(self, rough):
        for i, u in enumerate(rough):
            est = alpha_norm_estimate(u, rough.spec.alpha, rough.spec.member_sampler(i))
            assert est.total == pytest.approx(1.0, rel=1e-9)

    def test_deterministic(self, model, grid):
        spec = EnsembleSpec(20, 0.5, seed=7, norm_pairs=400)
        a = generate_ensemble(spec, model, grid)
        b = generate_ensemble(spec, model, grid)
        for ua, ub in zip(a, b):
            np.testing.assert_array_equal(ua.values, ub.values)

    def test_gamma_factored_exactly(self, model, grid):
        s0 = EnsembleSpec(20, 0.5, seed=7, gamma=0.0, norm_pairs=400)
        s1 = EnsembleSpec(20, 0.5, seed=7, gamma=1.0, norm_pairs=400)
        e0 = generate_ensemble(s0, model, grid)
        e1 = generate_ensemble(s1, model, grid)
        for u0, u1 in zip(e0, e1):
            np.testing.assert_array_equal(u0.values, u1.values)
            assert u1.gamma == 1.0 and u0.gamma == 0.0

    def test_smooth_ensemble_has_margin(self, model, grid):
        # Very smooth members: the alpha = 0.5 norm stays well clear of the
        # sampled-estimate ceiling under sample refinement.
        spec = EnsembleSpec(20, 0.99, seed=3, norm_pairs=500)
        ens = generate_ensemble(spec, model, grid)
        u = ens.members[0]
        coarse = alpha_norm_estimate(u, 0.5, PairSampler(500, seed=1))
        fine = alpha_norm_estimate(u, 0.5, PairSampler(4000, seed=1))
        assert fine.total <= 2.0 * max(coarse.total, 1e-12)

    def test_spec_validation(self):
        with pytest.raises(ConfigError):
            EnsembleSpec(5, 0.5, seed=0)
        with pytest.raises(ConfigError):
            EnsembleSpec(20, 1.5, seed=0)


class TestMappingBound:
    def test_ratios_finite_positive(self, rough):
        rep = mapping_bound_check(rough, WeightedSpaceSpec(0, 0.5, 0.0), WeightedSpaceSpec(2, 0.5, 0.0))
        assert np.all(np.isfinite(rep.ratios)) and np.all(rep.ratios > 0)
        assert rep.max_ratio == rep.ratios.max()
        assert not rep.excluded

    def test_zero_member_excluded(self, model, grid, rough):
        ens = Ensemble(rough.spec, list(rough.members), model, grid)
        ens.members[3] = 0.0 * ens.members[3]
        rep = mapping_bound_check(ens, WeightedSpaceSpec(0, 0.5, 0.0), WeightedSpaceSpec(2, 0.5, 0.0))
        assert rep.excluded == [3]
        assert len(rep.ratios) == len(ens) - 1

    def test_constant_member_maps_to_t(self, model, grid):
        # H applied to the constant 1 is t: finite out-norm, finite ratio.
        spec = EnsembleSpec(20, 0.5, seed=5, norm_pairs=400)
        ens = generate_ensemble(spec, model, grid)
        const = ens.members[0].copy()
        const.values[:] = 0.0
        const.values[:, grid.mode_index()[(0, 0)], :] = 1.0
        ens.members[0] = const
        rep = mapping_bound_check(ens, WeightedSpaceSpec(0, 0.5, 0.0), WeightedSpaceSpec(2, 0.5, 0.0))
        assert np.isfinite(rep.ratios[0]) and rep.ratios[0] > 0

    def test_weight_invariance_bitwise(self, model, grid):
        spec1 = EnsembleSpec(20, 0.5, seed=9, gamma=1.0, norm_pairs=400)
        e1 = generate_ensemble(spec1, model, grid)
        op = discretize(model, grid)
        rep_w = mapping_bound_check(e1, WeightedSpaceSpec(0, 0.5, 1.0), WeightedSpaceSpec(2, 0.5, 1.0), op=op)
        rep_0 = mapping_bound_check(
            e1.stripped(), WeightedSpaceSpec(0, 0.5, 0.0), WeightedSpaceSpec(2, 0.5, 0.0),
            op=op, conjugation=1.0,
        )
        np.testing.assert_array_equal(rep_w.ratios, rep_0.ratios)
        np.testing.assert_array_equal(rep_w.split_space, rep_0.split_space)

    def test_monotone_reporting(self, rough, model, grid):
        rep_all = mapping_bound_check(rough, WeightedSpaceSpec(0, 0.5, 0.0), WeightedSpaceSpec(2, 0.5, 0.0))
        # dropping members never increases the max ratio
        sub = Ensemble(rough.spec, rough.members[:10], model, grid)
        rep_sub = mapping_bound_check(sub, WeightedSpaceSpec(0, 0.5, 0.0), WeightedSpaceSpec(2, 0.5, 0.0))
        assert rep_sub.max_ratio <= rep_all.max_ratio + 1e-15

    def test_split_quotients_dominate_mixed(self, rough):
        rep = mapping_bound_check(rough, WeightedSpaceSpec(0, 0.5, 0.0), WeightedSpaceSpec(2, 0.5, 0.0))
        # the mixed seminorm part of each ratio is bounded by the sum of the
        # split parts plus the sup part (the decomposition bound)
        mixed = rep.ratios - rep.split_sup
        assert np.all(mixed <= rep.split_space + rep.split_time + 1e-9)

    def test_mismatched_weights_rejected(self, rough):
        with pytest.raises(ConfigError):
            mapping_bound_check(rough, WeightedSpaceSpec(0, 0.5, 0.0), WeightedSpaceSpec(2, 0.5, 1.0))

    def test_json_round_trip(self, rough):
        rep = mapping_bound_check(rough, WeightedSpaceSpec(0, 0.5, 0.0), WeightedSpaceSpec(2, 0.5, 0.0))
        import json

        payload = json.loads(rep.to_json())
        assert payload["max_ratio"] == rep.max_ratio
        assert len(payload["ratios"]) == len(rep.ratios)


class TestTimeWeights:
    def test_constant_source_sqrt_variant_bounded(self, model, grid):
        spec = EnsembleSpec(20, 0.5, seed=13, norm_pairs=400)
        ens = generate_ensemble(spec, model, grid)
        const = ens.members[0].copy()
        const.values[:] = 0.0
        const.values[:, grid.mode_index()[(0, 0)], :] = 1.0
        ens.members[0] = const
        rep = time_weight_check(ens, SQRT_T_VARIANT)
        assert np.all(np.isfinite(rep.ratios))

    def test_t_alpha_half_slope(self, rough):
        rep = time_weight_check(rough, T_ALPHA_HALF_VARIANT)
        assert rep.t_scaling_slope is not None
        assert rep.t_scaling_slope >= rough.spec.alpha / 2 - 0.1

    def test_smooth_slope_at_least_rough(self, model, grid):
        smooth_spec = EnsembleSpec(20, 0.9, seed=42, norm_pairs=600)
        smooth = generate_ensemble(smooth_spec, model, grid)
        rough_spec = EnsembleSpec(20, 0.5, seed=42, norm_pairs=600)
        rough_ens = generate_ensemble(rough_spec, model, grid)
        s = time_weight_check(smooth, T_ALPHA_HALF_VARIANT).t_scaling_slope
        r = time_weight_check(rough_ens, T_ALPHA_HALF_VARIANT).t_scaling_slope
        assert s >= r - 0.05

    def test_unknown_variant(self, rough):
        with pytest.raises(ConfigError):
            time_weight_check(rough, "bogus")
