"""Weighting schemes, cascades, branchingales, and the hierarchical ansatz."""

import math

import numpy as np
import pytest
from scipy.special import ndtri

from ermlab.cascade import (
    Branchingale,
    CascadeWeights,
    HierarchicalSet,
    IncrementSpec,
    TreeSpec,
    WeightingScheme,
    balanced_increments,
    build_branchingale,
    check_branchingale,
    fixed_weights,
    gem_stick_breaking,
    gem_weights,
    pd_second_moment_gem,
    phi,
    rsb_gamma,
    sample_cascade,
    weighting_to_gamma,
    zero_increments,
)
from ermlab.errors import CapabilityError, ValidationError
from ermlab.exchtest import CylinderSpec, two_sample_cylinder_test
from ermlab.rng import SeedContext, index_uniforms, substream


class TestWeightingToGamma:
    def test_degenerate_value_law_gives_half_kernels(self):
        ws = WeightingScheme(quantiles=lambda u: 0.0, k_max=3,
                             weights_gen=fixed_weights([0.2, 0.3, 0.5]))
        gamma = weighting_to_gamma(ws, grid_depth=3, ctx=SeedContext(1, ("w",)))
        for kern in gamma.kernels:
            np.testing.assert_array_equal(kern.probs[:, 1], 0.5)

    def test_two_point_law_pushforward(self):
        # value uniform on {-c, c}: the kernel takes phi(-c) and phi(c)
        # on the two half-cells, matching the exact two-point pushforward
        c = 1.3
        ws = WeightingScheme(quantiles=lambda u: -c if u < 0.5 else c, k_max=1,
                             weights_gen=fixed_weights([1.0]))
        gamma = weighting_to_gamma(ws, grid_depth=4, ctx=SeedContext(2, ("w",)))
        p = gamma.kernels[0].probs[:, 1]
        np.testing.assert_allclose(p[:8], phi(-c), atol=1e-15)
        np.testing.assert_allclose(p[8:], phi(c), atol=1e-15)

    def test_marginal_law_matches_quantile_oracle(self):
        # Gaussian value law through its quantile vs direct draws of
        # phi(X); compared through threshold indicator cylinders
        quantile = lambda u: float(ndtri(u + 2.0**-54))
        ws = WeightingScheme(quantiles=quantile, k_max=1,
                             weights_gen=fixed_weights([1.0]))
        gamma = weighting_to_gamma(ws, grid_depth=9, ctx=SeedContext(3, ("w",)))
        p_table = gamma.kernels[0].probs[:, 1]
        thresholds = (0.3, 0.5, 0.7)

        def grid_sampler(ctx, count):
            u = index_uniforms(ctx, count)
            vals = p_table[np.minimum((u * len(p_table)).astype(int), len(p_table) - 1)]
            return {t: (vals < t).astype(int) for t in thresholds}

        def oracle_sampler(ctx, count):
            x = ndtri(index_uniforms(ctx, count) + 2.0**-54)
            vals = phi(x)
            return {t: (vals < t).astype(int) for t in thresholds}

        report = two_sample_cylinder_test(
            grid_sampler, oracle_sampler,
            [CylinderSpec([(t, 1)]) for t in thresholds],
            20_000, SeedContext(4, ("mar",)),
        )
        assert report.passed

    def test_missing_quantiles_is_capability_error(self):
        ws = WeightingScheme(quantiles=None, k_max=2,
                             weights_gen=fixed_weights([0.5, 0.5]))
        with pytest.raises(CapabilityError):
            weighting_to_gamma(ws, 3, SeedContext(5, ("w",)))

    def test_random_weights_normalized(self):
        ws = WeightingScheme(quantiles=lambda u: u, k_max=16,
                             weights_gen=gem_weights(0.5))
        gamma = weighting_to_gamma(ws, 3, SeedContext(6, ("w",)))
        assert gamma.weights.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(gamma.weights >= 0)


class TestCascade:
    def test_leaf_weights_normalized(self):
        tree = TreeSpec(depth=2, branching=64)
        w = sample_cascade(tree, [0.3, 0.6], SeedContext(7, ("c",)))
        flat = w.flat()
        assert np.all(flat >= 0)
        assert abs(flat.sum() - 1.0) <= 1e-12

    def test_depth_one_second_moment_against_gem_oracle(self):
        m = 0.5
        tree = TreeSpec(depth=1, branching=4096)
        ctx = SeedContext(8, ("pd",))
        draws = 200
        cas = np.asarray([
            sample_cascade(tree, [m], substream(ctx, f"d{k}")).sum_squares()
            for k in range(draws)
        ])
        gem = pd_second_moment_gem(m, draws, 4096, substream(ctx, "gem"))
        se = math.hypot(cas.std(ddof=1) / math.sqrt(draws),
                        gem.std(ddof=1) / math.sqrt(draws))
        assert abs(cas.mean() - gem.mean()) < 3 * se
        assert abs(cas.mean() - (1 - m)) < 3 * cas.std(ddof=1) / math.sqrt(draws)

    def test_spread_increases_with_parameter(self):
        ctx = SeedContext(9, ("mono",))
        means = []
        for m in (0.3, 0.6, 0.9):
            tree = TreeSpec(depth=1, branching=1024)
            vals = [
                sample_cascade(tree, [m], substream(ctx, f"m{m}-{k}")).sum_squares()
                for k in range(150)
            ]
            means.append(np.mean(vals))
        assert means[0] > means[1] > means[2]

    def test_non_increasing_parameters_rejected(self):
        tree = TreeSpec(depth=2, branching=64)
        with pytest.raises(ValidationError):
            sample_cascade(tree, [0.6, 0.3], SeedContext(10, ("v",)))
        with pytest.raises(ValidationError):
            sample_cascade(tree, [0.4, 1.2], SeedContext(10, ("v",)))

    def test_truncation_floor(self):
        tree = TreeSpec(depth=1, branching=8)
        with pytest.raises(ValidationError):
            sample_cascade(tree, [0.5], SeedContext(11, ("v",)))

    def test_truncation_must_match_tree(self):
        tree = TreeSpec(depth=1, branching=64)
        with pytest.raises(ValidationError):
            sample_cascade(tree, [0.5], SeedContext(12, ("v",)), truncation=128)


class TestBranchingale:
    def test_zero_increments_constant_paths(self):
        tree = TreeSpec(depth=3, branching=2)
        b = build_branchingale(tree, zero_increments(0.5, 3), SeedContext(13, ("b",)))
        for leaf in tree.leaves():
            np.testing.assert_array_equal(b.node_table(leaf), 0.5)
        assert check_branchingale(b).max_martingale_defect == 0.0

    def test_balanced_increments_recover_parent_exactly(self):
        tree = TreeSpec(depth=2, branching=3)
        b = build_branchingale(
            tree, balanced_increments(0.5, (0.25, 0.125)), SeedContext(14, ("b",))
        )
        report = check_branchingale(b)
        assert report.max_martingale_defect == 0.0
        assert report.homogeneous
        assert report.conditional_independence_structural
        leaf = b.node_table((0, 0))
        assert set(np.round(np.abs(leaf - 0.5), 6).ravel()) <= {0.125, 0.375}

    def test_mean_violating_spec_rejected(self):
        def drift(level, parent, node_ctx):
            return np.stack([parent + 0.1, parent + 0.1], axis=-1)

        spec = IncrementSpec(root_value=0.5, bits=(1,), refine=drift)
        with pytest.raises(ValidationError):
            build_branchingale(TreeSpec(depth=1, branching=2), spec,
                               SeedContext(15, ("b",)))

    def test_corrupted_leaf_defect_equals_average_shift(self):
        tree = TreeSpec(depth=1, branching=2)
        b = build_branchingale(tree, zero_increments(0.5, 1), SeedContext(16, ("b",)))
        tables = dict(b.f)
        corrupted = tables[(0,)].copy()
        corrupted[0] += 0.25
        tables[(0,)] = corrupted
        bad = Branchingale(tree=tree, bits=b.bits, f=tables)
        # one of two equal-mass cells moved by 0.25, so the cell average
        # moves by 0.25 / 2
        assert check_branchingale(bad).max_martingale_defect == 0.125

    def test_single_node_tree_vacuously_valid(self):
        tree = TreeSpec(depth=0, branching=2)
        b = build_branchingale(tree, IncrementSpec(0.25, (), None), SeedContext(17, ("b",)))
        assert check_branchingale(b).max_martingale_defect == 0.0

    def test_homogeneity_across_paths(self):
        # joint sign pattern of the martingale increments along two
        # different root-leaf paths, resampled across seeds
        tree = TreeSpec(depth=2, branching=2)
        spec = balanced_increments(0.5, (0.25, 0.125))

        def path_sampler(leaf):
            def sample(ctx, count):
                keys = {f"s{lvl}": np.empty(count, dtype=int) for lvl in (1, 2)}
                for s in range(count):
                    b = build_branchingale(tree, spec, substream(ctx, f"r{s}"))
                    vals = b.path_values(leaf, (0, 0))
                    keys["s1"][s] = 1 if vals[1] > vals[0] else 0
                    keys["s2"][s] = 1 if vals[2] > vals[1] else 0
                return keys

            return sample

        cylinders = [
            CylinderSpec([("s1", 1)]),
            CylinderSpec([("s2", 1)]),
            CylinderSpec([("s1", 1), ("s2", 0)]),
        ]
        report = two_sample_cylinder_test(
            path_sampler((0, 0)), path_sampler((1, 1)), cylinders,
            800, SeedContext(18, ("hom",)),
        )
        assert report.passed


class TestRsbGamma:
    def test_depth_one_constant_branchingale_is_point_mass(self):
        tree = TreeSpec(depth=1, branching=64)
        cw = sample_cascade(tree, [0.5], SeedContext(19, ("r",)))
        b = build_branchingale(tree, zero_increments(0.5, 1), SeedContext(20, ("r",)))
        gamma = rsb_gamma(cw, b)
        assert len(gamma.kernels) == 64
        first = gamma.kernels[0].probs
        for kern in gamma.kernels:
            np.testing.assert_array_equal(kern.probs, first)

    def test_composed_parts_give_valid_measure(self):
        tree = TreeSpec(depth=2, branching=64)
        cw = sample_cascade(tree, [0.3, 0.7], SeedContext(21, ("r",)))
        b = build_branchingale(
            tree, balanced_increments(0.5, (0.25, 0.125), proportional=True),
            SeedContext(22, ("r",)),
        )
        gamma = rsb_gamma(cw, b)
        assert abs(gamma.weights.sum() - 1.0) <= 1e-12
        assert len(gamma.kernels) == 64 * 64

    def test_tree_mismatch_rejected(self):
        cw = sample_cascade(TreeSpec(depth=1, branching=64), [0.5],
                            SeedContext(23, ("r",)))
        b = build_branchingale(TreeSpec(depth=1, branching=128),
                               zero_increments(0.5, 1), SeedContext(24, ("r",)))
        with pytest.raises(ValidationError):
            rsb_gamma(cw, b)

    def test_out_of_range_leaves_rejected(self):
        tree = TreeSpec(depth=1, branching=64)
        cw = sample_cascade(tree, [0.5], SeedContext(25, ("r",)))
        b = build_branchingale(tree, balanced_increments(0.5, (0.75,)),
                               SeedContext(26, ("r",)))
        with pytest.raises(ValidationError):
            rsb_gamma(cw, b)

    def test_hierarchical_set_extraction(self):
        tree = TreeSpec(depth=2, branching=2)
        b = build_branchingale(tree, balanced_increments(0.5, (0.25, 0.125)),
                               SeedContext(27, ("r",)))
        h = HierarchicalSet.from_branchingale(b)
        assert h.depth == 2 and len(h.leaf_functions) == 4


class TestGem:
    def test_stick_weights_subprobability(self):
        w = gem_stick_breaking(0.4, 500, SeedContext(28, ("g",)))
        assert np.all(w >= 0)
        assert w.sum() <= 1.0

    def test_parameter_range(self):
        with pytest.raises(ValidationError):
            gem_stick_breaking(1.5, 10, SeedContext(29, ("g",)))

    def test_second_moment_oracle_value(self):
        # E sum v^2 = 1 - m for the (m, 0) law
        vals = pd_second_moment_gem(0.3, 300, 2000, SeedContext(30, ("g",)))
        assert abs(vals.mean() - 0.7) < 3 * vals.std(ddof=1) / math.sqrt(300)


def test_cascade_weight_invariant_checked():
    tree = TreeSpec(depth=1, branching=64)
    with pytest.raises(ValidationError):
        CascadeWeights(tree=tree, m=(0.5,), leaf_weights=np.full(64, 2.0 / 64))
