"""Parallel-tempering Monte Carlo: unit and statistical tests.

Statistical thresholds follow analytic laws (Metropolis acceptance
arithmetic, uniform stationary law of a free spin, pair-overlap variance
1/(2n) for independent uniform angles) or a brute-force Boltzmann
quadrature oracle; every stochastic test uses a frozen seed.
"""
import numpy as np
import pytest
from scipy import stats

from cavityglass.couplings import CouplingSet, EnsembleSpec, sample_sk
from cavityglass.energy import SpinConfiguration, energy_angle_only
from cavityglass.ptmc import (
    PtmcParams,
    PtmcRun,
    default_ladder,
    metropolis_step,
    read_records_csv,
    run,
    run_batch,
    swap_pass,
    write_records_csv,
)
from cavityglass.replica import build_histogram, hellinger, pair_overlaps


def manual_set(jn, kk):
    jn = np.asarray(jn, dtype=float)
    n = len(jn)
    return CouplingSet(
        j_local=np.zeros((n, n)),
        j_non=jn,
        k=np.asarray(kk, dtype=float),
        scale=1.0,
        provenance={"kind": "manual"},
    )


def philox(seed):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


class TestParams:
    def test_descending_ladder_rejected(self):
        with pytest.raises(ValueError, match="increasing"):
            PtmcParams(temperatures=(1.0, 0.5), steps=10, swap_interval=1,
                       record_interval=1, burn_in=0, seed=0)

    def test_duplicate_temperature_rejected(self):
        with pytest.raises(ValueError, match="increasing"):
            PtmcParams(temperatures=(0.5, 0.5, 1.0), steps=10, swap_interval=1,
                       record_interval=1, burn_in=0, seed=0)

    def test_non_positive_temperature_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            PtmcParams(temperatures=(0.0, 1.0), steps=10, swap_interval=1,
                       record_interval=1, burn_in=0, seed=0)

    def test_counts_out_of_range_rejected(self):
        good = dict(temperatures=(1.0,), steps=10, swap_interval=1,
                    record_interval=1, burn_in=0, seed=0)
        for field, bad in (("steps", 0), ("swap_interval", 0),
                           ("record_interval", 0), ("burn_in", -1)):
            with pytest.raises(ValueError, match=field):
                PtmcParams(**{**good, field: bad})

    def test_sweeps_conversion(self):
        p = PtmcParams(temperatures=(1.0,), steps=8000, swap_interval=1,
                       record_interval=1, burn_in=0, seed=0)
        assert p.sweeps(8) == 1000.0
        assert p.sweeps(32) == 250.0

    def test_default_ladder_geometric(self):
        t = default_ladder()
        assert len(t) == 20
        assert t[0] == pytest.approx(0.1, abs=1e-15)
        assert t[-1] == pytest.approx(2.0, abs=1e-15)
        ratios = np.diff(np.log(np.array(t)))
        assert np.ptp(ratios) < 1e-12


class TestMetropolisStep:
    def test_zero_cost_proposals_always_accepted(self):
        # free spin: every proposal has dE = 0, so the angle always moves
        c = manual_set([[0.0]], [[0.0]])
        rng = philox(0)
        s = SpinConfiguration(np.array([1.0]))
        for _ in range(200):
            s2 = metropolis_step(c, s, 0.3, rng)
            assert s2.thetas[0] != s.thetas[0]
            s = s2

    def test_infinite_temperature_always_accepts(self):
        c = manual_set([[5.0]], [[0.0]])  # stiff potential, hot bath
        rng = philox(1)
        s = SpinConfiguration(np.array([0.0]))
        for _ in range(200):
            s2 = metropolis_step(c, s, 1e12, rng)
            assert s2.thetas[0] != s.thetas[0]
            s = s2

    def test_deterministic_given_stream(self):
        c = manual_set([[0.7]], [[0.4]])
        out = []
        for _ in range(2):
            rng = philox(3)
            s = SpinConfiguration(np.array([0.3]))
            for _ in range(50):
                s = metropolis_step(c, s, 0.5, rng)
            out.append(s.thetas[0])
        assert out[0] == out[1]

    def test_free_spin_stationary_law_uniform(self):
        # thin by 100 steps so the accumulated proposal spread (pi/8)*10
        # exceeds pi and consecutive samples decorrelate
        c = manual_set([[0.0]], [[0.0]])
        rng = philox(8)
        s = SpinConfiguration(np.array([1.0]))
        keep = []
        for t in range(100_000):
            s = metropolis_step(c, s, 1.0, rng)
            if (t + 1) % 100 == 0:
                keep.append(s.thetas[0])
        ks = stats.kstest(np.array(keep) / (2 * np.pi), "uniform")
        assert ks.pvalue > 0.01  # measured 0.215

    def test_detailed_balance_binned_transitions(self):
        # n=1 with a cos/sin(2theta) potential; reversibility makes the
        # antisymmetric part of the binned transition counts pure noise:
        # z = (C_ij - C_ji)/sqrt(C_ij + C_ji) should be standard normal
        c = manual_set([[0.7]], [[0.4]])
        rng = philox(5)
        s = SpinConfiguration(np.array([0.3]))
        nb, steps, burn = 64, 150_000, 5_000
        states = np.empty(steps)
        for t in range(steps):
            s = metropolis_step(c, s, 0.5, rng)
            states[t] = s.thetas[0]
        b = np.minimum((states[burn:] / (2 * np.pi) * nb).astype(int), nb - 1)
        cmat = np.zeros((nb, nb))
        np.add.at(cmat, (b[:-1], b[1:]), 1.0)
        iu = np.triu_indices(nb, 1)
        cij, cji = cmat[iu], cmat.T[iu]
        tot = cij + cji
        mask = tot >= 20
        assert mask.sum() > 200
        z = (cij[mask] - cji[mask]) / np.sqrt(tot[mask])
        assert stats.kstest(z, "norm").pvalue > 0.01  # measured 0.92


class TestSwapPass:
    def test_equal_energies_always_swap(self):
        rng = philox(0)
        cfgs = [SpinConfiguration(np.array([float(i)])) for i in range(4)]
        _, _, acc = swap_pass(cfgs, [2.0, 2.0, 2.0, 2.0], [0.2, 0.5, 1.0, 2.0], "even", rng)
        assert acc == [True, False, True]
        _, _, acc = swap_pass(cfgs, [2.0, 2.0, 2.0, 2.0], [0.2, 0.5, 1.0, 2.0], "odd", rng)
        assert acc == [False, True, False]

    def test_equal_temperatures_always_swap(self):
        rng = philox(0)
        cfgs = [SpinConfiguration(np.array([0.0])), SpinConfiguration(np.array([1.0]))]
        _, _, acc = swap_pass(cfgs, [0.0, 100.0], [1.0, 1.0], "even", rng)
        assert acc == [True]

    def test_two_temperature_toy_rate(self):
        # fixed energies E=(0,1) at beta=(2,1): exponent (2-1)(0-1) = -1,
        # so the acceptance probability is exactly exp(-1)
        rng = philox(13)
        s0 = SpinConfiguration(np.array([0.0]))
        s1 = SpinConfiguration(np.array([1.0]))
        trials = 20_000
        hits = 0
        for _ in range(trials):
            _, _, acc = swap_pass([s0, s1], [0.0, 1.0], [0.5, 1.0], "even", rng)
            hits += acc[0]
        expected = np.exp(-1.0)
        sigma = np.sqrt(expected * (1 - expected) / trials)
        assert abs(hits / trials - expected) < 3 * sigma  # measured 0.3670

    def test_swap_moves_configurations_not_values(self):
        rng = philox(2)
        cfgs = [SpinConfiguration(np.array([0.1 * i, 0.2 * i])) for i in range(5)]
        before = sorted(tuple(s.thetas) for s in cfgs)
        out, en, _ = swap_pass(cfgs, [0.0, -1.0, 2.0, -3.0, 4.0],
                               [0.2, 0.4, 0.8, 1.2, 2.0], "odd", rng)
        assert sorted(tuple(s.thetas) for s in out) == before
        assert sorted(en) == sorted([0.0, -1.0, 2.0, -3.0, 4.0])

    def test_bad_parity_rejected(self):
        with pytest.raises(ValueError, match="parity"):
            swap_pass([SpinConfiguration(np.array([0.0]))] * 2, [0.0, 0.0],
                      [0.5, 1.0], "diagonal", philox(0))


class TestRunMechanics:
    def _small(self, seed=5, **kw):
        c = sample_sk(EnsembleSpec(n=4, seed=2, mean_j=0.0, std_j=1.0, std_k=0.5))
        defaults = dict(temperatures=(0.4, 0.8, 1.4, 2.0), steps=1000, swap_interval=10,
                        record_interval=100, burn_in=400, seed=seed)
        return c, PtmcParams(**{**defaults, **kw})

    def test_identical_seeds_identical_runs(self):
        c, p = self._small()
        r1, r2 = run(c, p), run(c, p)
        assert np.array_equal(r1.thetas, r2.thetas)
        assert np.array_equal(r1.energies, r2.energies)
        assert np.array_equal(r1.swap_accepts, r2.swap_accepts)

    def test_different_seed_differs(self):
        c, p1 = self._small(seed=5)
        _, p2 = self._small(seed=6)
        assert not np.array_equal(run(c, p1).thetas, run(c, p2).thetas)

    def test_batch_member_independent_of_batch(self):
        # stream-per-chain isolation: a batch member's records are
        # bit-identical whether or not other instances share the batch
        c, p = self._small()
        other = sample_sk(EnsembleSpec(n=4, seed=99, mean_j=0.0, std_j=1.0, std_k=0.5))
        alone = run_batch([c], p)[0]
        batched = run_batch([c, other], p)[0]
        assert np.array_equal(alone.thetas, batched.thetas)
        assert np.array_equal(alone.energies, batched.energies)
        # repeating one instance yields independent chains, not copies
        twice = run_batch([c, c], p)
        assert not np.array_equal(twice[0].thetas, twice[1].thetas)

    def test_record_cadence(self):
        c, p = self._small()
        r = run(c, p)
        assert list(r.recorded_steps) == [500, 600, 700, 800, 900, 1000]
        assert r.thetas.shape == (4, 6, 4)
        assert r.energies.shape == (4, 6)
        assert r.n == 4

    def test_swap_attempt_parity_split(self):
        # 100 passes alternate even/odd: pairs (0,2) touched on the 50 even
        # passes, pair 1 on the 50 odd ones
        c, p = self._small()
        r = run(c, p)
        assert list(r.swap_attempts) == [50, 50, 50]
        rates = r.swap_rates
        assert np.all((rates >= 0) & (rates <= 1))

    def test_recorded_energies_match_recomputation(self):
        c, p = self._small()
        r = run(c, p)
        for ti in range(4):
            for ri in range(r.thetas.shape[1]):
                e = energy_angle_only(c, SpinConfiguration(r.thetas[ti, ri]))
                assert e == pytest.approx(r.energies[ti, ri], abs=1e-9)

    def test_csv_roundtrip(self, tmp_path):
        c, p = self._small()
        r = run(c, p)
        path = tmp_path / "records.csv"
        write_records_csv(path, "demo", r)
        back = read_records_csv(path)
        assert len(back) == 4 * 6
        flat = r.thetas.reshape(-1, 4)
        for got, want in zip(back, flat):
            np.testing.assert_allclose(got.thetas, want, atol=1e-15)
        chain2 = read_records_csv(path, chain_index=2)
        assert len(chain2) == 6
        np.testing.assert_allclose(
            np.stack([s.thetas for s in chain2]), r.thetas[2], atol=1e-15
        )


class TestStatisticalLaws:
    def test_free_spins_pair_overlap_variance(self):
        # zero couplings: records are independent uniform angles, so the
        # pair overlap Q has mean 0 and variance 1/(2n) exactly
        n = 8
        c = manual_set(np.zeros((n, n)), np.zeros((n, n)))
        p = PtmcParams(temperatures=(1.0,), steps=130_000, swap_interval=10**9,
                       record_interval=512, burn_in=2_000, seed=42)
        r = run(c, p)
        ens = [SpinConfiguration(th) for th in r.thetas[0]]
        q, rr, _ = pair_overlaps(ens)
        assert len(ens) == 250
        assert abs(np.mean(q)) < 0.01                      # measured +0.0009
        assert np.var(q) == pytest.approx(1 / (2 * n), abs=0.004)   # measured 0.0618
        assert np.var(rr) == pytest.approx(1 / (2 * n), abs=0.004)  # measured 0.0626

    def test_two_spin_boltzmann_quadrature(self):
        # fast variant of the acceptance-level oracle: midpoint quadrature
        # of exp(-E/T) on a 64x64 angle grid, aggregated to 8x8 bins
        jn = np.array([[0.3, 1.0], [1.0, -0.2]])
        kk = np.array([[0.0, 0.4], [0.4, 0.0]])
        c = manual_set(jn, kk)
        temp = 0.7
        g = 64
        th = (np.arange(g) + 0.5) * 2 * np.pi / g
        t1, t2 = np.meshgrid(th, th, indexing="ij")
        e = -(2 * jn[0, 1] * np.cos(t1 + t2) + jn[0, 0] * np.cos(2 * t1)
              + jn[1, 1] * np.cos(2 * t2) + 2 * kk[0, 1] * np.sin(t1 + t2))
        w = np.exp(-(e - e.min()) / temp)
        w /= w.sum()
        oracle = w.reshape(8, 8, 8, 8).sum(axis=(1, 3))

        p = PtmcParams(temperatures=(temp, 1.4), steps=120_000, swap_interval=4,
                       record_interval=25, burn_in=10_000, seed=9)
        r = run(c, p)
        rec = r.thetas[0]
        hist = np.histogram2d(rec[:, 0], rec[:, 1],
                              bins=[np.linspace(0, 2 * np.pi, 9)] * 2)[0]
        assert hellinger(hist, oracle) < 0.02  # measured 0.0024

    def test_ferromagnet_goalposts(self):
        # strong uniform couplings at low temperature: essentially all
        # cross-chain pair overlaps sit at |Q| > 0.8
        c = sample_sk(EnsembleSpec(n=8, seed=3, mean_j=5.0, std_j=1.0, std_k=0.5))
        p = PtmcParams(temperatures=(0.21, 0.45, 0.95, 2.0), steps=8_000,
                       swap_interval=2, record_interval=250, burn_in=4_000, seed=11)
        runs = run_batch([c] * 4, p)
        ens = [SpinConfiguration(r.thetas[0, w]) for r in runs
               for w in range(runs[0].thetas.shape[1])]
        q, _, _ = pair_overlaps(ens)
        assert np.mean(np.abs(q) > 0.8) >= 0.70  # measured 1.00

    def test_mean_energy_monotone_in_temperature(self):
        c = sample_sk(EnsembleSpec(n=6, seed=8, mean_j=0.0, std_j=1.0, std_k=0.5))
        p = PtmcParams(temperatures=tuple(np.geomspace(0.15, 2.0, 8)), steps=60_000,
                       swap_interval=2, record_interval=500, burn_in=10_000, seed=21)
        r = run(c, p)
        me = r.energies.mean(axis=1)
        se = r.energies.std(axis=1) / np.sqrt(r.energies.shape[1] / 8)
        gaps = np.diff(me)
        comb = np.sqrt(se[:-1] ** 2 + se[1:] ** 2)
        assert np.all(gaps > -3 * comb)  # measured: every gap positive

    def test_global_flip_leaves_overlaps_invariant(self):
        c, p = TestRunMechanics()._small()
        r = run(c, p)
        ens = [SpinConfiguration(th) for th in r.thetas[0]]
        flipped = [SpinConfiguration(s.thetas + np.pi) for s in ens]
        q0, r0, _ = pair_overlaps(ens)
        q1, r1, _ = pair_overlaps(flipped)
        np.testing.assert_allclose(q1, q0, atol=1e-12)
        np.testing.assert_allclose(r1, r0, atol=1e-12)

    def test_single_replica_flip_invariant_after_symmetrization(self):
        c, p = TestRunMechanics()._small()
        r = run(c, p)
        ens = [SpinConfiguration(th) for th in r.thetas[0]]
        # shift one replica by pi, which sends (Q, R) -> (-Q, -R) for
        # every pair touching it: exactly the images symmetrization adds
        half = [SpinConfiguration(s.thetas + np.pi) if i == 0 else s
                for i, s in enumerate(ens)]
        h0 = build_histogram(ens, bins=16, symmetrize=True)
        h1 = build_histogram(half, bins=16, symmetrize=True)
        np.testing.assert_allclose(h1.counts, h0.counts, atol=1e-12)
