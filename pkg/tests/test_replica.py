"""Replica-ensemble statistics: overlaps, histograms, RSB and ultrametricity tools.

Exact identities (symmetry maps, mass conservation, commutation) are
asserted to 1e-12; statistical values come from analytic laws or from
Monte-Carlo samples whose margins were measured before freezing.
"""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from scipy import stats

from cavityglass.couplings import EnsembleSpec, sample_sk
from cavityglass.energy import SpinConfiguration
from cavityglass.replica import (
    BootstrapResult,
    OverlapHistogram,
    binder_ratio,
    bootstrap,
    build_histogram,
    cluster,
    ensemble_diagnostics,
    estimate_tc,
    hellinger,
    ktri_distribution,
    magnetization,
    overlap,
    pair_overlaps,
    paramagnetic_plateau,
    parisi_aggregate,
    plateau,
)


def philox(seed):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def uniform_ensemble(m, n, seed):
    rng = philox(seed)
    return [SpinConfiguration(rng.uniform(0, 2 * np.pi, n)) for _ in range(m)]


angle_arrays = hnp.arrays(
    np.float64,
    st.integers(min_value=1, max_value=12),
    elements=st.floats(0.0, 2 * np.pi, exclude_max=True),
)


class TestOverlapMaps:
    def test_self_overlap_is_one(self):
        s = SpinConfiguration(np.array([0.3, 1.2, 4.4]))
        p = overlap(s, s)
        assert p.q == pytest.approx(1.0, abs=1e-12)

    def test_pi_shifted_partner_is_minus_one(self):
        s = SpinConfiguration(np.array([0.3, 1.2, 4.4]))
        t = SpinConfiguration(s.thetas + np.pi)
        p = overlap(s, t)
        assert p.q == pytest.approx(-1.0, abs=1e-12)

    def test_orthogonal_partner_has_zero_q(self):
        s = SpinConfiguration(np.array([0.3, 1.2, 4.4, 2.0]))
        t = SpinConfiguration(s.thetas + np.pi / 2)
        assert overlap(s, t).q == pytest.approx(0.0, abs=1e-12)

    def test_mismatched_lengths_rejected(self):
        with pytest.raises(ValueError, match="equal length"):
            overlap(SpinConfiguration(np.zeros(3)), SpinConfiguration(np.zeros(4)))

    @settings(max_examples=40, deadline=None)
    @given(angle_arrays, st.integers(0, 2**31 - 1))
    def test_flip_and_negation_maps(self, th, seed):
        rng = philox(seed)
        a = SpinConfiguration(th)
        b = SpinConfiguration(rng.uniform(0, 2 * np.pi, len(th)))
        p = overlap(a, b)
        # pi shift of one replica: (Q, R) -> (-Q, -R)
        pf = overlap(SpinConfiguration(a.thetas + np.pi), b)
        assert pf.q == pytest.approx(-p.q, abs=1e-12)
        assert pf.r == pytest.approx(-p.r, abs=1e-12)
        # negation of one replica's angles: (Q, R) -> (R, Q)
        pn = overlap(SpinConfiguration(-a.thetas), b)
        assert pn.q == pytest.approx(p.r, abs=1e-12)
        assert pn.r == pytest.approx(p.q, abs=1e-12)
        # bounds
        assert -1.0 - 1e-12 <= p.q <= 1.0 + 1e-12
        assert -1.0 - 1e-12 <= p.r <= 1.0 + 1e-12

    def test_pair_overlaps_matches_pairwise_calls(self):
        ens = uniform_ensemble(6, 5, seed=1)
        q, r, q_self = pair_overlaps(ens)
        k = 0
        for i in range(6):
            assert q_self[i] == pytest.approx(overlap(ens[i], ens[i]).q, abs=1e-12)
            for j in range(i + 1, 6):
                p = overlap(ens[i], ens[j])
                assert q[k] == pytest.approx(p.q, abs=1e-12)
                assert r[k] == pytest.approx(p.r, abs=1e-12)
                k += 1

    def test_pair_overlaps_needs_two(self):
        with pytest.raises(ValueError, match="two replicas"):
            pair_overlaps(uniform_ensemble(1, 4, seed=0))


class TestHistogram:
    def test_mass_conserved(self):
        ens = uniform_ensemble(30, 8, seed=2)
        for sym in (False, True):
            h = build_histogram(ens, bins=40, symmetrize=sym)
            assert h.counts.sum() == pytest.approx(h.n_pairs, abs=1e-9)
            assert h.normalized_counts().sum() == pytest.approx(1.0, abs=1e-12)
            assert h.q_marginal().sum() == pytest.approx(1.0, abs=1e-12)

    def test_symmetrize_equals_point_reflection(self):
        ens = uniform_ensemble(25, 8, seed=3)
        plain = build_histogram(ens, bins=32, symmetrize=False).counts
        sym = build_histogram(ens, bins=32, symmetrize=True).counts
        np.testing.assert_allclose(sym, 0.5 * (plain + plain[::-1, ::-1]), atol=1e-12)

    def test_save_load_roundtrip(self, tmp_path):
        h = build_histogram(uniform_ensemble(12, 6, seed=4), bins=16)
        path = tmp_path / "overlaps.csv"
        h.save(path)
        back = OverlapHistogram.load(path)
        np.testing.assert_allclose(back.counts, h.counts, atol=1e-12)
        np.testing.assert_allclose(back.q_edges, h.q_edges, atol=1e-15)
        assert back.n_pairs == h.n_pairs
        assert back.symmetrized == h.symmetrized

    def test_aggregate_is_instance_weighted(self):
        # one instance with many pairs must not dominate the aggregate
        narrow = build_histogram(uniform_ensemble(40, 8, seed=5), bins=16)
        wide = build_histogram(uniform_ensemble(5, 8, seed=6), bins=16)
        agg = parisi_aggregate([narrow, wide])
        manual = 0.5 * (narrow.normalized_counts() + wide.normalized_counts())
        np.testing.assert_allclose(agg.counts, manual, atol=1e-12)
        assert agg.normalized

    def test_aggregate_commutes_with_symmetrization(self):
        ens_a = uniform_ensemble(20, 8, seed=7)
        ens_b = uniform_ensemble(15, 8, seed=8)
        agg_sym = parisi_aggregate(
            [build_histogram(e, bins=24, symmetrize=True) for e in (ens_a, ens_b)]
        ).counts
        agg_plain = parisi_aggregate(
            [build_histogram(e, bins=24, symmetrize=False) for e in (ens_a, ens_b)]
        ).counts
        np.testing.assert_allclose(agg_sym, 0.5 * (agg_plain + agg_plain[::-1, ::-1]),
                                   atol=1e-12)

    def test_aggregate_rejects_mixed_binning(self):
        a = build_histogram(uniform_ensemble(8, 4, seed=9), bins=16)
        b = build_histogram(uniform_ensemble(8, 4, seed=9), bins=20)
        with pytest.raises(ValueError, match="binning"):
            parisi_aggregate([a, b])


class TestPlateau:
    def test_uniform_density_gives_half(self):
        h = OverlapHistogram(
            counts=np.ones((80, 80)), q_edges=np.linspace(-1, 1, 81),
            r_edges=np.linspace(-1, 1, 81), n_pairs=6400,
            symmetrized=True, normalized=False,
        )
        assert plateau(h, 0.26) == pytest.approx(0.5, abs=1e-12)
        assert plateau(h, 0.5) == pytest.approx(0.5, abs=1e-12)

    def test_goalposts_only_gives_zero(self):
        counts = np.zeros((80, 80))
        counts[0, 40] = counts[-1, 40] = 7.0
        h = OverlapHistogram(
            counts=counts, q_edges=np.linspace(-1, 1, 81),
            r_edges=np.linspace(-1, 1, 81), n_pairs=14,
            symmetrized=True, normalized=False,
        )
        assert plateau(h, 0.26) == 0.0

    def test_bad_q0_rejected(self):
        h = build_histogram(uniform_ensemble(5, 4, seed=10), bins=8)
        for bad in (0.0, -0.1, 1.5):
            with pytest.raises(ValueError, match="q0"):
                plateau(h, bad)

    def test_uniform_spins_match_analytic_default_variance(self):
        # full pipeline against the closed form at variance 1/(2n)
        ens = uniform_ensemble(400, 8, seed=101)
        x = plateau(build_histogram(ens, bins=80), 0.26)
        assert x == pytest.approx(paramagnetic_plateau(8, 0.26), rel=0.05)  # -1.6% measured

    def test_truncated_gaussian_sample_matches_variance_n_convention(self):
        rng = philox(102)
        q = rng.normal(0.0, np.sqrt(8.0), 400_000)
        q = q[(q >= -1) & (q <= 1)]
        r = rng.uniform(-1, 1, len(q))
        counts, edges, _ = np.histogram2d(q, r, bins=[np.linspace(-1, 1, 81)] * 2)
        h = OverlapHistogram(counts=counts, q_edges=edges, r_edges=edges.copy(),
                             n_pairs=len(q), symmetrized=False, normalized=False)
        x = plateau(h, 0.26)
        assert x == pytest.approx(paramagnetic_plateau(8, 0.26, variance=8.0),
                                  rel=0.05)  # -0.07% measured

    def test_analytic_limits(self):
        # huge variance -> flat density -> 0.5; tiny variance -> all mass
        # inside |Q| <= q0 -> 1/(2 q0)
        assert paramagnetic_plateau(8, 0.26, variance=1e9) == pytest.approx(0.5, rel=1e-6)
        assert paramagnetic_plateau(8, 0.26, variance=1e-12) == pytest.approx(
            1 / 0.52, rel=1e-9)
        # monotone decreasing in variance
        xs = [paramagnetic_plateau(8, 0.26, variance=v) for v in (0.01, 0.1, 1.0, 8.0)]
        assert all(a > b for a, b in zip(xs, xs[1:]))


class TestBinder:
    def test_coin_flip_is_exactly_one(self):
        assert binder_ratio(np.array([1.0, -1.0] * 10)) == 1.0

    def test_gaussian_is_near_zero(self):
        g = binder_ratio(philox(103).normal(0.0, 1.0, 1_000_000))
        assert abs(g) < 0.01  # measured +0.0009

    def test_heavy_tails_go_negative(self):
        g = binder_ratio(philox(103).laplace(0.0, 1.0, 200_000))
        assert g < -1.3  # Laplace analytic value -1.5; measured -1.547

    def test_degenerate_rejected(self):
        with pytest.raises(ValueError, match="degenerate"):
            binder_ratio(np.zeros(10))


class TestHellinger:
    def test_identical_is_zero(self):
        p = np.array([0.2, 0.3, 0.5])
        assert hellinger(p, p) == pytest.approx(0.0, abs=1e-12)

    def test_disjoint_is_one(self):
        assert hellinger([1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0, abs=1e-12)

    def test_known_value(self):
        # affinity of [1,0] vs [1/2,1/2] is sqrt(1/2)
        d = hellinger([1.0, 0.0], [0.5, 0.5])
        assert d == pytest.approx(1.0 - np.sqrt(0.5), abs=1e-12)

    def test_symmetric_and_scale_invariant(self):
        rng = philox(11)
        p, q = rng.random(50), rng.random(50)
        assert hellinger(p, q) == pytest.approx(hellinger(q, p), abs=1e-12)
        assert hellinger(3.7 * p, q) == pytest.approx(hellinger(p, 11.0 * q), abs=1e-12)


class TestKtri:
    def test_equilateral_triplet_is_zero(self):
        # three single-spin replicas at mutual angle 2pi/3: all pair
        # distances equal, so the top-two gap vanishes identically
        ens = [SpinConfiguration(np.array([a])) for a in (0.0, 2 * np.pi / 3, 4 * np.pi / 3)]
        r = ktri_distribution(ens)
        assert r.n_triplets == 1
        assert r.values[0] == pytest.approx(0.0, abs=1e-12)

    def test_identical_ensemble_defined_as_zero(self):
        ens = [SpinConfiguration(np.full(4, 0.7))] * 5
        r = ktri_distribution(ens)
        assert np.all(r.values == 0.0)

    def test_needs_three(self):
        with pytest.raises(ValueError, match="three"):
            ktri_distribution(uniform_ensemble(2, 4, seed=0))

    def test_relabeling_invariance(self):
        ens = uniform_ensemble(20, 8, seed=12)
        r1 = ktri_distribution(ens)
        order = philox(13).permutation(20)
        r2 = ktri_distribution([ens[i] for i in order])
        assert r1.exact and r2.exact
        assert r2.mean == pytest.approx(r1.mean, abs=1e-12)
        np.testing.assert_allclose(np.sort(r2.values), np.sort(r1.values), atol=1e-12)

    def test_uniform_reference_value(self):
        # frozen seeded ensemble, exact enumeration
        ens = uniform_ensemble(60, 8, seed=105)
        r = ktri_distribution(ens)
        assert r.exact and r.n_triplets == 34220
        assert r.mean == pytest.approx(0.5482, abs=5e-3)

    def test_sampled_path_is_seed_deterministic(self):
        ens = uniform_ensemble(25, 6, seed=14)
        a = ktri_distribution(ens, max_exact=10, n_sample=2000, seed=3)
        b = ktri_distribution(ens, max_exact=10, n_sample=2000, seed=3)
        assert not a.exact
        np.testing.assert_array_equal(a.values, b.values)


class TestCluster:
    def _three_state_ensemble(self):
        rng = philox(104)
        centers = [rng.uniform(0, 2 * np.pi, 16) for _ in range(3)]
        ens = []
        for c, size in zip(centers, (10, 8, 6)):
            for _ in range(size):
                ens.append(SpinConfiguration(c + rng.normal(0.0, 0.1, 16)))
        return ens

    def test_three_state_mixture_recovered(self):
        d = cluster(self._three_state_ensemble())
        # the two cross-cluster merges sit far above every intra merge
        assert d.heights[:-2].max() < 0.05     # measured 0.0128
        assert d.heights[-2:].min() > d.heights[:-2].max() + 0.3  # measured gap ~0.8
        # leaves come out grouped, heavier limb first
        blocks = [set(d.leaf_order[:10]), set(d.leaf_order[10:18]), set(d.leaf_order[18:])]
        assert blocks == [set(range(0, 10)), set(range(10, 18)), set(range(18, 24))]

    def test_heights_monotone(self):
        d = cluster(uniform_ensemble(15, 8, seed=15))
        assert np.all(np.diff(d.heights) >= -1e-12)

    def test_json_tree_covers_all_leaves(self):
        d = cluster(self._three_state_ensemble())
        doc = d.to_json()

        def leaves(node):
            if "replica" in node:
                return [node["replica"]]
            return leaves(node["left"]) + leaves(node["right"])

        assert sorted(leaves(doc)) == list(range(24))

    def test_json_file_written(self, tmp_path):
        d = cluster(uniform_ensemble(6, 4, seed=16))
        p = tmp_path / "tree.json"
        d.to_json(p)
        import json
        doc = json.loads(p.read_text())
        assert "height" in doc


class TestBootstrap:
    def test_identical_replicas_give_zero(self):
        ens = [SpinConfiguration(np.full(6, 1.1))] * 10
        r = bootstrap(ens, n_boot=20, seed=0, bins=20)
        assert r.level == "replica"
        assert r.mean == pytest.approx(0.0, abs=1e-12)

    def test_single_histogram_disorder_level_is_zero(self):
        h = build_histogram(uniform_ensemble(10, 6, seed=17), bins=16)
        r = bootstrap([h], n_boot=15, seed=1)
        assert r.level == "disorder"
        assert r.mean == pytest.approx(0.0, abs=1e-12)

    def test_seed_determinism_and_spread(self):
        ens = uniform_ensemble(30, 8, seed=18)
        r1 = bootstrap(ens, n_boot=25, seed=5, bins=20)
        r2 = bootstrap(ens, n_boot=25, seed=5, bins=20)
        np.testing.assert_array_equal(r1.distances, r2.distances)
        assert isinstance(r1, BootstrapResult)
        assert len(r1.distances) == 25
        assert np.all(r1.distances >= 0)
        assert r1.mean > 0  # resampling 30 replicas must move the density

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="no data"):
            bootstrap([])


class TestEstimateTc:
    def test_exact_linear_intersection(self):
        t = np.linspace(0.2, 3.0, 15)
        m = np.where(t < 1.8, 1.0 - 0.5 * t, 0.1)
        tc = estimate_tc(t, m, (0.2, 1.0), (2.0, 3.0))
        assert tc == pytest.approx(1.8, abs=1e-9)

    def test_parallel_lines_rejected(self):
        t = np.linspace(0.2, 3.0, 15)
        m = 2.0 - t
        with pytest.raises(ValueError, match="parallel"):
            estimate_tc(t, m, (0.2, 1.0), (2.0, 3.0))

    def test_short_window_rejected(self):
        t = np.linspace(0.2, 3.0, 15)
        m = 2.0 - t
        with pytest.raises(ValueError, match="fewer than 3"):
            estimate_tc(t, m, (0.2, 0.3), (2.0, 3.0))


class TestDiagnosticsAndMagnetization:
    def test_spacings_match_goe_reference(self):
        sets = [sample_sk(EnsembleSpec(n=24, seed=200 + i, mean_j=0.0, std_j=1.0,
                                       std_k=0.5)) for i in range(12)]
        d = ensemble_diagnostics(sets, n_reference=400, seed=7)
        ks = stats.ks_2samp(d.spacings, d.reference_spacings)
        assert ks.pvalue > 0.05  # measured 0.955
        assert d.spacings.mean() == pytest.approx(1.0, abs=1e-9)  # unfolded

    def test_too_few_instances_rejected(self):
        sets = [sample_sk(EnsembleSpec(n=8, seed=i, mean_j=0.0, std_j=1.0, std_k=0.5))
                for i in range(5)]
        with pytest.raises(ValueError, match="10 instances"):
            ensemble_diagnostics(sets)

    def test_magnetization_of_aligned_ensemble(self):
        ens = [SpinConfiguration(np.zeros(8))] * 7
        h = magnetization(ens, bins=80)
        assert h.counts.sum() == 7
        assert h.counts[79, 40] == 7  # m = (1, 0): +1 folds into the last bin
        assert h.n_pairs == 7
