"""Parallel-tempering Monte Carlo for the angle-only energy.

A ladder of chains, one per temperature, evolves by single-spin Metropolis
updates (Gaussian angle proposals) interleaved with deterministic
even/odd replica-exchange passes.  Counting convention: a *step* is one
attempted single-spin update of one chain; a *sweep* is n steps.  Exchange
passes run every ``swap_interval`` steps and alternate the pair parity.

Randomness comes from counter-based Philox streams, one per (chain,
purpose) plus one swap stream per instance, all spawned from the master
seed; results are therefore bit-reproducible and independent of batching
or thread scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .energy import SpinConfiguration, energy_angle_only

__all__ = [
    "PtmcParams",
    "PtmcRun",
    "default_ladder",
    "metropolis_step",
    "swap_pass",
    "run",
    "run_batch",
    "write_records_csv",
    "read_records_csv",
]


def default_ladder(n_temps: int = 20, t_min: float = 0.1, t_max: float = 2.0):
    """Geometric temperature ladder, ascending, in units of the coupling scale."""
    return tuple(np.geomspace(t_min, t_max, n_temps))


@dataclass(frozen=True)
class PtmcParams:
    """Run parameters.  ``steps``/``burn_in``/intervals count single-spin steps."""

    temperatures: tuple
    steps: int
    swap_interval: int
    record_interval: int
    burn_in: int
    seed: int
    proposal_std: float = np.pi / 8.0

    def __post_init__(self):
        t = tuple(float(x) for x in self.temperatures)
        if len(t) < 1 or any(x <= 0 for x in t):
            raise ValueError("temperatures must be positive")
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError("temperatures must be strictly increasing")
        object.__setattr__(self, "temperatures", t)
        for name in ("steps", "swap_interval", "record_interval", "burn_in"):
            if int(getattr(self, name)) < (0 if name == "burn_in" else 1):
                raise ValueError(f"{name} out of range")

    def sweeps(self, n: int) -> float:
        """Total steps expressed in sweeps of the given system size."""
        return self.steps / n


@dataclass(frozen=True)
class PtmcRun:
    """Recorded output of one disorder instance.

    thetas : (n_temps, n_records, n) recorded configurations
    energies : (n_temps, n_records) angle-only energies at record times
    swap_attempts, swap_accepts : (n_temps - 1,) per adjacent pair
    """

    temperatures: tuple
    thetas: np.ndarray
    energies: np.ndarray
    recorded_steps: np.ndarray
    swap_attempts: np.ndarray
    swap_accepts: np.ndarray
    params: PtmcParams

    @property
    def n(self) -> int:
        return self.thetas.shape[2]

    @property
    def swap_rates(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.swap_attempts > 0, self.swap_accepts / self.swap_attempts, np.nan)

    def replicas(self, t_index: int):
        """Recorded configurations at one temperature as SpinConfigurations."""
        return [SpinConfiguration(th) for th in self.thetas[t_index]]


def metropolis_step(c, s: SpinConfiguration, temperature: float, rng, proposal_std=np.pi / 8.0):
    """One single-spin Metropolis update; returns the (possibly new) state.

    Draw order: site index, Gaussian increment, acceptance uniform.
    """
    n = c.n
    i = int(rng.integers(0, n))
    dtheta = rng.normal(0.0, proposal_std)
    u = rng.random()
    co, si = np.cos(s.thetas), np.sin(s.thetas)
    jd, kd = c.j_non[i, i], c.k[i, i]
    a = float(c.j_non[i] @ co) - jd * co[i]
    b = float(c.j_non[i] @ si) - jd * si[i]
    uu = float(c.k[i] @ co) - kd * co[i]
    v = float(c.k[i] @ si) - kd * si[i]
    aa, bb = 2.0 * (a + v), 2.0 * (uu - b)

    def site(t):
        return -aa * np.cos(t) - bb * np.sin(t) - jd * np.cos(2 * t) - kd * np.sin(2 * t)

    old = s.thetas[i]
    new = old + dtheta
    de = site(new) - site(old)
    if de <= 0.0 or u < np.exp(-de / temperature):
        th = s.thetas.copy()
        th[i] = new
        return SpinConfiguration(th)
    return s


def swap_pass(configs, energies, temperatures, parity: str, rng):
    """One replica-exchange pass over adjacent pairs of the given parity.

    Pair (k, k+1) swaps configurations with probability
    min(1, exp[(beta_k - beta_{k+1})(E_k - E_{k+1})]).  Returns
    (configs, energies, accepted flags per adjacent pair).
    """
    if parity not in ("even", "odd"):
        raise ValueError("parity must be 'even' or 'odd'")
    configs = list(configs)
    energies = list(np.asarray(energies, dtype=float))
    betas = 1.0 / np.asarray(temperatures, dtype=float)
    m = len(configs)
    accepted = [False] * (m - 1)
    start = 0 if parity == "even" else 1
    for k in range(start, m - 1, 2):
        arg = (betas[k] - betas[k + 1]) * (energies[k] - energies[k + 1])
        if arg >= 0.0 or rng.random() < np.exp(arg):
            configs[k], configs[k + 1] = configs[k + 1], configs[k]
            energies[k], energies[k + 1] = energies[k + 1], energies[k]
            accepted[k] = True
    return configs, energies, accepted


def _full_energies(jn, kk, co, si):
    """Angle-only energies for a (C, n) batch against per-chain matrices."""
    # jn, kk are (C, n, n) views (possibly broadcast from one instance)
    jc = np.einsum("cij,cj->ci", jn, co)
    js = np.einsum("cij,cj->ci", jn, si)
    ks = np.einsum("cij,cj->ci", kk, si)
    return -(np.einsum("ci,ci->c", co, jc) - np.einsum("ci,ci->c", si, js)) - 2.0 * np.einsum(
        "ci,ci->c", co, ks
    )


def _engine(coupling_sets, p: PtmcParams, seed_seqs):
    """Shared vectorized core: many instances x one temperature ladder.

    Chains are laid out instance-major; each chain owns three Philox
    streams (site index, proposal, acceptance) and each instance owns one
    swap stream, so per-instance results do not depend on what else is in
    the batch.
    """
    n_inst = len(coupling_sets)
    n = coupling_sets[0].n
    if any(c.n != n for c in coupling_sets):
        raise ValueError("all instances in a batch must share n")
    temps = np.asarray(p.temperatures)
    n_t = len(temps)
    cc = n_inst * n_t

    jn_all = np.stack([c.j_non for c in coupling_sets])
    kk_all = np.stack([c.k for c in coupling_sets])
    inst_of_chain = np.repeat(np.arange(n_inst), n_t)
    jn_c = jn_all[inst_of_chain]  # (C, n, n) views by fancy index (copies; n small)
    kk_c = kk_all[inst_of_chain]
    jd_c = np.einsum("cii->ci", jn_c)
    kd_c = np.einsum("cii->ci", kk_c)
    t_of_chain = np.tile(temps, n_inst)

    streams = []
    swap_rngs = []
    for g in range(n_inst):
        kids = seed_seqs[g].spawn(3 * n_t + 1)
        for j in range(n_t):
            streams.append(
                tuple(np.random.Generator(np.random.Philox(kids[3 * j + kk])) for kk in range(3))
            )
        swap_rngs.append(np.random.Generator(np.random.Philox(kids[3 * n_t])))

    th = np.stack([streams[ci][0].uniform(0.0, 2.0 * np.pi, n) for ci in range(cc)])
    co, si = np.cos(th), np.sin(th)
    en = _full_energies(jn_c, kk_c, co, si)

    n_pairs = n_t - 1
    swap_att = np.zeros((n_inst, n_pairs), dtype=np.int64)
    swap_acc = np.zeros((n_inst, n_pairs), dtype=np.int64)
    betas = 1.0 / temps

    rec_steps = [
        s
        for s in range(1, p.steps + 1)
        if s > p.burn_in and (s - p.burn_in) % p.record_interval == 0
    ]
    rec_th = np.empty((cc, len(rec_steps), n))
    rec_en = np.empty((cc, len(rec_steps)))
    rec_ptr = 0

    rows = np.arange(cc)
    block = 2048  # steps of randomness drawn per stream at a time
    drawn = 0  # steps consumed by completed blocks
    blk_len = 0
    idx = prop = uni = None
    swap_count = 0

    for step in range(1, p.steps + 1):
        j = step - 1 - drawn
        if j >= blk_len:
            drawn += blk_len
            blk_len = min(block, p.steps - drawn)
            idx = np.stack([streams[ci][0].integers(0, n, blk_len) for ci in range(cc)])
            prop = np.stack(
                [streams[ci][1].normal(0.0, p.proposal_std, blk_len) for ci in range(cc)]
            )
            uni = np.stack([streams[ci][2].random(blk_len) for ci in range(cc)])
            j = 0

        i = idx[:, j]
        jr = jn_c[rows, i]  # (C, n)
        kr = kk_c[rows, i]
        ci_old = co[rows, i]
        si_old = si[rows, i]
        a = np.einsum("cj,cj->c", jr, co) - jd_c[rows, i] * ci_old
        b = np.einsum("cj,cj->c", jr, si) - jd_c[rows, i] * si_old
        u = np.einsum("cj,cj->c", kr, co) - kd_c[rows, i] * ci_old
        v = np.einsum("cj,cj->c", kr, si) - kd_c[rows, i] * si_old
        aa = 2.0 * (a + v)
        bb = 2.0 * (u - b)
        old = th[rows, i]
        new = old + prop[:, j]
        jd_i = jd_c[rows, i]
        kd_i = kd_c[rows, i]
        de = (
            -aa * np.cos(new)
            - bb * np.sin(new)
            - jd_i * np.cos(2 * new)
            - kd_i * np.sin(2 * new)
        ) - (
            -aa * ci_old
            - bb * si_old
            - jd_i * np.cos(2 * old)
            - kd_i * np.sin(2 * old)
        )
        acc = (de <= 0.0) | (uni[:, j] < np.exp(-np.clip(de / t_of_chain, -700, 700)))
        th[rows[acc], i[acc]] = np.mod(new[acc], 2.0 * np.pi)
        co[rows[acc], i[acc]] = np.cos(new[acc])
        si[rows[acc], i[acc]] = np.sin(new[acc])
        en[acc] += de[acc]

        if step % p.swap_interval == 0:
            parity = swap_count % 2
            swap_count += 1
            e2 = en.reshape(n_inst, n_t)
            ks = np.arange(parity, n_pairs, 2)
            if len(ks):
                u_sw = np.stack([swap_rngs[g].random(len(ks)) for g in range(n_inst)])
                arg = (betas[ks] - betas[ks + 1])[None, :] * (e2[:, ks] - e2[:, ks + 1])
                do = (arg >= 0.0) | (u_sw < np.exp(np.clip(arg, -700, 700)))
                swap_att[:, ks] += 1
                swap_acc[:, ks] += do
                gi, pj = np.nonzero(do)
                ca = gi * n_t + ks[pj]
                cb = ca + 1
                for arr in (th, co, si):
                    tmp = arr[ca].copy()
                    arr[ca] = arr[cb]
                    arr[cb] = tmp
                en[ca], en[cb] = en[cb].copy(), en[ca].copy()

        if rec_ptr < len(rec_steps) and step == rec_steps[rec_ptr]:
            # refresh energies from scratch at record times to cancel drift
            en = _full_energies(jn_c, kk_c, co, si)
            rec_th[:, rec_ptr] = th
            rec_en[:, rec_ptr] = en
            rec_ptr += 1

    runs = []
    for g in range(n_inst):
        sl = slice(g * n_t, (g + 1) * n_t)
        runs.append(
            PtmcRun(
                temperatures=p.temperatures,
                thetas=rec_th[sl].copy(),
                energies=rec_en[sl].copy(),
                recorded_steps=np.asarray(rec_steps, dtype=np.int64),
                swap_attempts=swap_att[g].copy(),
                swap_accepts=swap_acc[g].copy(),
                params=p,
            )
        )
    return runs


def run(c, p: PtmcParams) -> PtmcRun:
    """Run the full ladder for one disorder instance."""
    return _engine([c], p, [np.random.SeedSequence(p.seed)])[0]


def run_batch(coupling_sets, p: PtmcParams):
    """Run many instances in lockstep (shared ladder and step counts).

    Instance g uses the g-th spawn of the master seed, so the result is
    identical to running each instance alone with that child sequence.
    """
    kids = np.random.SeedSequence(p.seed).spawn(len(coupling_sets))
    return _engine(list(coupling_sets), p, kids)


def write_records_csv(path, run_id: str, runs_or_thetas, t_index=None):
    """Write recorded configurations as CSV rows.

    Columns: run_id, chain_index, step, theta_0..theta_{n-1}.  Either pass a
    PtmcRun (all temperatures, ``chain_index`` = temperature index) or a
    list of SpinConfigurations with t_index used as the fixed chain label.
    """
    if isinstance(runs_or_thetas, PtmcRun):
        r = runs_or_thetas
        n = r.n
        with open(path, "w") as fh:
            fh.write("run_id,chain_index,step," + ",".join(f"theta_{i}" for i in range(n)) + "\n")
            for ti in range(len(r.temperatures)):
                for ri, step in enumerate(r.recorded_steps):
                    vals = ",".join(f"{x:.17g}" for x in r.thetas[ti, ri])
                    fh.write(f"{run_id},{ti},{step},{vals}\n")
    else:
        configs = list(runs_or_thetas)
        n = configs[0].n
        label = 0 if t_index is None else int(t_index)
        with open(path, "w") as fh:
            fh.write("run_id,chain_index,step," + ",".join(f"theta_{i}" for i in range(n)) + "\n")
            for ri, s in enumerate(configs):
                vals = ",".join(f"{x:.17g}" for x in s.thetas)
                fh.write(f"{run_id},{label},{ri},{vals}\n")


def read_records_csv(path, chain_index=None):
    """Load configurations back from a records CSV.

    Returns a list of SpinConfigurations, optionally filtered to one chain.
    """
    import csv

    out = []
    with open(path) as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header[:3] != ["run_id", "chain_index", "step"]:
            raise ValueError(f"{path}: unexpected records header {header[:3]}")
        for row in rd:
            if chain_index is not None and int(row[1]) != chain_index:
                continue
            out.append(SpinConfiguration(np.array([float(x) for x in row[3:]])))
    return out
