"""Array sampling, quenching, replicas, and mixture-form samplers."""

import itertools
import math

import numpy as np
import pytest

from ermlab import exchtest
from ermlab.erm import (
    DirectingRandomMeasure,
    Kernel,
    QuenchedERM,
    RowColumnDirecting,
    TwoLayerDirecting,
    bipartition_directing,
    draw_replicas,
    empirical_measure,
    erpm_directing,
    quench,
    rce_kernel_readoff,
    replica_matrix,
    sample_kernel_mixture,
    sample_row_column,
    sample_slice,
)
from ermlab.errors import ValidationError
from ermlab.rng import SeedContext, SubsetKey, substream
from ermlab.skewprod import SkewProductTuple

E = SubsetKey(())
S1 = SubsetKey((1,))


def _two_layer(f1, f0=lambda a: 0):
    return TwoLayerDirecting(SkewProductTuple(k=1, components=(f0, f1), input_arity=2))


CONST = _two_layer(lambda a: 7)
V_COIN = _two_layer(lambda a: 1 if a[S1][1] < 0.5 else 0)  # ignores u entirely
U_COIN = _two_layer(lambda a: 1 if a[S1][0] < 0.5 else 0)  # ignores v entirely


class TestSampleSlice:
    def test_constant_tuple_constant_slice(self):
        s = sample_slice(CONST, 5, SeedContext(1, ("s",)))
        assert set(s.vector()) == {7}

    def test_bernoulli_mean_within_band(self):
        # i.i.d. fair coins: 1e5 entries, binomial 3-sigma band around 0.5
        ctx = SeedContext(2, ("bern",))
        hits = 0
        n, draws = 500, 200
        for d in range(draws):
            hits += sample_slice(V_COIN, n, substream(ctx, f"d{d}")).vector().sum()
        total = n * draws
        assert abs(hits / total - 0.5) < 3 * math.sqrt(0.25 / total)


class TestQuench:
    def test_v_ignoring_tuple_is_point_mass(self):
        q = quench(U_COIN, 6, u_seed=11)
        reps = draw_replicas(q, 4, SeedContext(5, ("d",)))
        mat = replica_matrix(reps)
        assert np.all(mat == mat[0])

    def test_u_ignoring_tuple_quench_irrelevant(self):
        # conditional law equals unconditional law: the quenched measure
        # does not depend on the u seed, tested on cylinders
        def arm(u_seed):
            def sampler(ctx, count):
                q = quench(V_COIN, 3, u_seed)
                cols = {i: np.empty(count, dtype=int) for i in (1, 2, 3)}
                for s in range(count):
                    vec = replica_matrix(draw_replicas(q, 1, substream(ctx, f"s{s}")))[0]
                    for i in (1, 2, 3):
                        cols[i][s] = vec[i - 1]
                return cols

            return sampler

        cylinders = [
            exchtest.CylinderSpec([(1, 1)]),
            exchtest.CylinderSpec([(2, 0)]),
            exchtest.CylinderSpec([(1, 1), (2, 1)]),
        ]
        report = exchtest.two_sample_cylinder_test(
            arm(123), arm(456), cylinders, 1500, SeedContext(6, ("uirr",))
        )
        assert report.passed

    def test_bipartition_two_atom_quenched_measure(self):
        # fixed sides: draws alternate between the two all-or-nothing
        # edge slices with a fair v-coin
        q = quench(bipartition_directing(), 6, u_seed=3)
        reps = draw_replicas(q, 400, SeedContext(7, ("bip",)))
        slices = {tuple(sorted((k.elements, v) for k, v in s.values.items() if len(k) == 2))
                  for s in reps}
        assert len(slices) == 2
        first = reps[0]
        freq = np.mean([
            all(s.values[k] == first.values[k] for k in s.values if len(k) == 2)
            for s in reps
        ])
        assert abs(freq - 0.5) < 3 * math.sqrt(0.25 / 400)


class TestReplicas:
    def test_replica_count_validated(self):
        q = quench(U_COIN, 3, 1)
        with pytest.raises(ValidationError):
            draw_replicas(q, 0, SeedContext(1, ("r",)))

    def test_erpm_matched_entry_covariance(self):
        # per-position mixing parameters are quenched, so matched entries
        # across replicas have covariance Var_t(m(t)); grid oracle below
        cells = 64
        p_plus = (np.arange(cells) + 0.5) / cells
        kern = Kernel.binary(p_plus)
        m = 2 * p_plus - 1
        oracle = float(np.mean(m**2) - np.mean(m) ** 2)
        directing = erpm_directing(kern)
        ctx = SeedContext(9, ("erpm",))
        n, quenches = 30, 120
        per_quench = []
        for d in range(quenches):
            q = quench(directing, n, u_seed=10_000 + d)
            mat = replica_matrix(draw_replicas(q, 2, substream(ctx, f"d{d}"))).astype(float)
            per_quench.append(np.mean(mat[0] * mat[1]))
        per_quench = np.asarray(per_quench)
        est = per_quench.mean()  # E[m(t_i)^2]; the mean part is 0 by symmetry
        se = per_quench.std(ddof=1) / math.sqrt(quenches)
        assert abs(est - oracle) < 3 * se


class TestEmpiricalMeasure:
    def test_single_replica_own_value(self):
        assert empirical_measure(np.array([[1, 1, 1]]), [(0, 1)]) == 1.0

    def test_fair_coin_two_replica_cylinder(self):
        ctx = SeedContext(4, ("emp",))
        n = 40_000
        gamma = DirectingRandomMeasure(weights=[1.0], kernels=[Kernel.binary([0.5])])
        mat = sample_kernel_mixture(gamma, n, 2, ctx)
        val = empirical_measure(mat, [(0, 1), (1, 1)])
        assert abs(val - 0.25) < 3 * math.sqrt(0.25 * 0.75 / n)

    def test_monte_carlo_rate_as_positions_double(self):
        # |empirical - 0.25| should shrink like C / sqrt(N); slope check
        gamma = DirectingRandomMeasure(weights=[1.0], kernels=[Kernel.binary([0.5])])
        sizes = [250, 1000, 4000]
        mean_err = []
        for n in sizes:
            errs = []
            for seed in range(20):
                mat = sample_kernel_mixture(gamma, n, 2, SeedContext(seed, (f"lln{n}",)))
                errs.append(abs(empirical_measure(mat, [(0, 1), (1, 1)]) - 0.25))
            mean_err.append(np.mean(errs))
        slope = np.polyfit(np.log(sizes), np.log(mean_err), 1)[0]
        assert -0.80 < slope < -0.25

    def test_empty_replicas_rejected(self):
        with pytest.raises(ValidationError):
            empirical_measure(np.empty((0, 4)), [(0, 1)])


class TestKernelMixture:
    def test_point_mass_at_t_constant_kernel_is_iid(self):
        gamma = DirectingRandomMeasure(weights=[1.0], kernels=[Kernel.binary([0.25])])
        mat = sample_kernel_mixture(gamma, 3000, 3, SeedContext(1, ("iid",)))
        freq = (mat == 1).mean()
        assert abs(freq - 0.25) < 3 * math.sqrt(0.25 * 0.75 / mat.size)
        # entries independent across replicas: matched-pair joint frequency
        joint = np.mean((mat[0] == 1) & (mat[1] == 1))
        assert abs(joint - 0.0625) < 3 * math.sqrt(0.0625 * (1 - 0.0625) / mat.shape[1])

    def test_point_mass_linear_mean_kernel_moments(self):
        # kernel mean 2t-1; replicas share quenched kernels but draw
        # fresh t, so the within-replica product averages int m(t)^2 dt
        # = 1/3 while matched entries across replicas are uncorrelated
        cells = 256
        kern = Kernel.binary((np.arange(cells) + 0.5) / cells)
        m = 2 * (np.arange(cells) + 0.5) / cells - 1
        gamma = DirectingRandomMeasure(weights=[1.0], kernels=[kern])
        within, across = [], []
        for d in range(600):
            mat = sample_kernel_mixture(gamma, 30, 2, SeedContext(7000 + d, ("mx",))).astype(float)
            within.append(np.mean(mat[0, :-1] * mat[0, 1:]))
            across.append(np.mean(mat[0] * mat[1]))
        w_est, w_se = np.mean(within), np.std(within, ddof=1) / math.sqrt(600)
        a_est, a_se = np.mean(across), np.std(across, ddof=1) / math.sqrt(600)
        assert abs(w_est - np.mean(m**2)) < 3 * w_se
        assert abs(a_est - 0.0) < 3 * a_se

    def test_two_atom_cylinder_against_exhaustive_sum(self):
        # brute force: sum over atom assignments of the constrained
        # positions and over dyadic t-cells per replica
        ka = Kernel.binary(np.array([0.25, 0.75]))
        kb = Kernel.binary(np.array([0.875, 0.125]))
        weights = np.array([0.4, 0.6])
        gamma = DirectingRandomMeasure(weights=weights, kernels=[ka, kb])
        constraints = [(0, 1, 1), (0, 2, -1), (1, 1, 1)]  # (replica, position, value)

        def atom_prob(kern, cell, value):
            return kern.probs[cell, kern.alphabet.index(value)]

        positions = sorted({pos for _, pos, _ in constraints})
        replicas = sorted({rep for rep, _, _ in constraints})
        oracle = 0.0
        for assign in itertools.product([ka, kb], repeat=len(positions)):
            w = 1.0
            for pos, kern in zip(positions, assign):
                w *= weights[0] if kern is ka else weights[1]
            prob = 1.0
            for rep in replicas:
                cell_avg = 0.0
                for cell in range(2):
                    term = 1.0
                    for crep, pos, val in constraints:
                        if crep == rep:
                            term *= atom_prob(assign[positions.index(pos)], cell, val)
                    cell_avg += 0.5 * term
                prob *= cell_avg
            oracle += w * prob

        hits = 0
        draws = 4000
        for d in range(draws):
            mat = sample_kernel_mixture(gamma, 2, 2, SeedContext(100 + d, ("cyl",)))
            ok = all(mat[rep, pos - 1] == val for rep, pos, val in constraints)
            hits += ok
        freq = hits / draws
        assert abs(freq - oracle) < 3 * math.sqrt(oracle * (1 - oracle) / draws)

    def test_erpm_factorization_single_t_atom(self):
        # t-constant kernels quench to a product measure, so conditional
        # on one quench the replicas are independent at every position:
        # matched-entry covariance within the quench vanishes
        gamma = DirectingRandomMeasure(
            weights=[0.5, 0.5],
            kernels=[Kernel.binary([0.3]), Kernel.binary([0.8])],
        )
        n, pairs = 20, 400
        ctx = SeedContext(3000, ("fac",))
        mat = sample_kernel_mixture(gamma, n, 2 * pairs, ctx).astype(float)
        a, b = mat[0::2], mat[1::2]  # paired replicas, same quench
        cov = (a * b).mean(axis=0) - a.mean(axis=0) * b.mean(axis=0)
        est = cov.mean()
        se = cov.std(ddof=1) / math.sqrt(n)
        assert abs(est) < max(3 * se, 3.0 / math.sqrt(pairs * n))


class TestRowColumn:
    def test_w_only_directing_gives_iid_matrix(self):
        f = RowColumnDirecting(func=lambda z, u, v, w: 1 if w < 0.5 else 0)
        mat = sample_row_column(f, 40, 40, SeedContext(2, ("rc",)))
        freq = mat.mean()
        assert abs(freq - 0.5) < 3 * math.sqrt(0.25 / mat.size)

    def test_row_constant_directing(self):
        f = RowColumnDirecting(func=lambda z, u, v, w: 1 if u < 0.5 else 0)
        mat = sample_row_column(f, 300, 4, SeedContext(3, ("rows",)))
        assert np.all(mat == mat[:, :1])  # constant rows
        assert abs(mat[:, 0].mean() - 0.5) < 3 * math.sqrt(0.25 / 300)

    def test_kernel_readoff_matches_monte_carlo(self):
        rng = np.random.default_rng(5)
        table = np.where(rng.random((4, 4, 4, 4)) < 0.5, -1, 1)
        f = RowColumnDirecting(grid_depth=2, table=table)
        z, u = 0.1, 0.6
        kern = rce_kernel_readoff(f, z, u)
        # Monte Carlo at a fixed t-cell: draws of f(z, u, t, W)
        t = 0.3
        cell = kern.cell(t)
        draws = 20_000
        ctx = SeedContext(6, ("mcread",))
        from ermlab.rng import index_uniforms

        w = index_uniforms(ctx, draws)
        vals = f(np.full(draws, z), np.full(draws, u), np.full(draws, t), w)
        for a_idx, a in enumerate(kern.alphabet):
            p = kern.probs[cell, a_idx]
            emp = (vals == a).mean()
            band = 3 * math.sqrt(max(p * (1 - p), 1e-12) / draws)
            assert abs(emp - p) <= band + 1e-12


class TestValidationPaths:
    def test_gamma_weights_validated(self):
        with pytest.raises(ValidationError):
            DirectingRandomMeasure(weights=[0.5, 0.4], kernels=[Kernel.binary([0.5])] * 2)

    def test_kernel_rows_validated(self):
        with pytest.raises(ValidationError):
            Kernel(grid_depth=0, alphabet=(-1, 1), probs=np.array([[0.5, 0.6]]))

    def test_arity_validated(self):
        with pytest.raises(ValidationError):
            TwoLayerDirecting(SkewProductTuple(k=1, components=(lambda a: 0,) * 2))

    def test_quenched_type_fields(self):
        q = quench(U_COIN, 4, 9)
        assert isinstance(q, QuenchedERM) and q.n == 4
