"""Energy functions for planar spins on a coupled vertex network.

Two levels of description share the same coupling matrices:

- the angle-only energy for unit-length spins,
      E = - sum_ij [ J_non_ij cos(theta_i + theta_j) + K_ij sin(theta_i + theta_j) ],
  which is what the equilibrium samplers work with (note the sum runs over
  all ordered pairs including i = j, so diagonal entries contribute second
  harmonics cos 2theta_i, sin 2theta_i);
- the semiclassical energy for spins with transverse length s_i <= 1 and a
  longitudinal component S_i^z, adding the local self-energy and a
  transverse-field term.

Energies are reported in units of the coupling scale (matrix entries are
dimensionless); nothing here ever multiplies by the physical scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SpinConfiguration",
    "EnergyReport",
    "GroundState",
    "energy_angle_only",
    "energy_semiclassical",
    "ground_state",
    "fit_effective_temperature",
    "append_energy_report",
]


@dataclass(frozen=True)
class SpinConfiguration:
    """Planar spin state: angles wrapped to [0, 2pi), optional radii <= 1."""

    thetas: np.ndarray
    radii: np.ndarray | None = None

    def __post_init__(self):
        th = np.mod(np.asarray(self.thetas, dtype=float).ravel(), 2.0 * np.pi)
        if not np.all(np.isfinite(th)):
            raise ValueError("angles must be finite")
        r = self.radii
        if r is None:
            r = np.ones_like(th)
        else:
            r = np.asarray(r, dtype=float).ravel()
            if r.shape != th.shape:
                raise ValueError("radii must match thetas in length")
            if np.any(r < 0) or np.any(r > 1.0 + 1e-9):
                raise ValueError("radii must lie in [0, 1]")
        th.flags.writeable = False
        r.flags.writeable = False
        object.__setattr__(self, "thetas", th)
        object.__setattr__(self, "radii", r)

    @property
    def n(self) -> int:
        return len(self.thetas)

    @property
    def sx(self) -> np.ndarray:
        return self.radii * np.cos(self.thetas)

    @property
    def sy(self) -> np.ndarray:
        return self.radii * np.sin(self.thetas)


@dataclass(frozen=True)
class EnergyReport:
    """Scalar energy of one replica, normalized by the ground-state magnitude."""

    replica_id: int
    energy: float
    energy_over_abs_ground: float


@dataclass(frozen=True)
class GroundState:
    """Annealed minimum: best configuration, its energy, per-restart energies."""

    spins: SpinConfiguration
    energy: float
    restart_energies: np.ndarray


def _require_unit_radii(s: SpinConfiguration):
    if np.any(np.abs(s.radii - 1.0) > 1e-12):
        raise ValueError("angle-only energy requires unit radii")


def energy_angle_only(c, s: SpinConfiguration) -> float:
    """E = - sum_ij [J_non cos(theta_i + theta_j) + K sin(theta_i + theta_j)].

    Expanded in single-spin trig factors: with co = cos(theta), si = sin(theta),

        E = -(co.J co - si.J si) - 2 co.K si
    """
    _require_unit_radii(s)
    if len(s.thetas) != c.n:
        raise ValueError("configuration size does not match couplings")
    co = np.cos(s.thetas)
    si = np.sin(s.thetas)
    return float(-(co @ c.j_non @ co - si @ c.j_non @ si) - 2.0 * (co @ c.k @ si))


def energy_semiclassical(c, s: SpinConfiguration, sz, field: float) -> float:
    """Semiclassical energy with longitudinal components and transverse field.

    E = field * sum_i Sz_i - sum_i J_local_ii (Sx_i^2 + Sy_i^2)
        - sum_ij [ J_non_ij (Sx_i Sx_j - Sy_i Sy_j) + K_ij (Sx_i Sy_j + Sy_i Sx_j) ]

    Each (Sx, Sy, Sz) must fit inside the unit sphere.
    """
    sz = np.asarray(sz, dtype=float).ravel()
    if sz.shape != s.thetas.shape:
        raise ValueError("sz must match configuration length")
    sx, sy = s.sx, s.sy
    norms = sx**2 + sy**2 + sz**2
    if np.any(norms > 1.0 + 1e-6):
        raise ValueError(f"spin vector leaves the unit sphere (max norm^2 {norms.max():.3g})")
    e_field = field * float(np.sum(sz))
    e_local = float(np.sum(np.diag(c.j_local) * (sx**2 + sy**2)))
    e_pair = float(sx @ c.j_non @ sx - sy @ c.j_non @ sy + 2.0 * (sx @ c.k @ sy))
    return e_field - e_local - e_pair


def _single_site_fields(c, co, si):
    """Per-spin conditional energy coefficients.

    Holding all other spins fixed, the energy of spin i is (up to a constant)

        E_i(t) = -A_i cos t - B_i sin t - Jnn_ii cos 2t - K_ii sin 2t

    with A = 2 (a + v), B = 2 (u - b) built from the off-diagonal local
    fields a = sum'_j J_ij co_j, b = sum'_j J_ij si_j, u = sum'_j K_ij co_j,
    v = sum'_j K_ij si_j.
    """
    jd = np.diag(c.j_non)
    kd = np.diag(c.k)
    a = c.j_non @ co - jd * co
    b = c.j_non @ si - jd * si
    u = c.k @ co - kd * co
    v = c.k @ si - kd * si
    return 2.0 * (a + v), 2.0 * (u - b), jd, kd


def _site_energy(t, aa, bb, cc, dd):
    return -aa * np.cos(t) - bb * np.sin(t) - cc * np.cos(2.0 * t) - dd * np.sin(2.0 * t)


def _best_angle(aa, bb, cc, dd):
    """Minimize -aa cos t - bb sin t - cc cos 2t - dd sin 2t over t.

    The two-harmonic slice is minimized by scanning a coarse grid and
    polishing the best point with Newton iterations; with at most two local
    minima per period the 64-point grid always brackets the global one.
    """
    if cc == 0.0 and dd == 0.0:
        return np.arctan2(bb, aa)
    grid = np.linspace(0.0, 2.0 * np.pi, 64, endpoint=False)
    t = grid[np.argmin(_site_energy(grid, aa, bb, cc, dd))]
    for _ in range(40):
        g = aa * np.sin(t) - bb * np.cos(t) + 2.0 * cc * np.sin(2.0 * t) - 2.0 * dd * np.cos(2.0 * t)
        h = aa * np.cos(t) + bb * np.sin(t) + 4.0 * cc * np.cos(2.0 * t) + 4.0 * dd * np.sin(2.0 * t)
        if h <= 0.0:
            t -= 0.1 * np.sign(g) if g != 0.0 else 0.0
            continue
        step = g / h
        t -= step
        if abs(step) < 1e-14:
            break
    return t


def _polish(c, thetas, sweeps=200):
    """Coordinate descent: exact per-spin minimization, cycling until flat."""
    th = thetas.copy()
    n = len(th)
    co, si = np.cos(th), np.sin(th)
    for _ in range(sweeps):
        moved = 0.0
        for i in range(n):
            aa, bb, jd, kd = _single_site_fields(c, co, si)
            t = _best_angle(aa[i], bb[i], jd[i], kd[i])
            if _site_energy(t, aa[i], bb[i], jd[i], kd[i]) < _site_energy(
                th[i], aa[i], bb[i], jd[i], kd[i]
            ) - 1e-15:
                moved = max(moved, abs(t - th[i]))
                th[i] = t
                co[i], si[i] = np.cos(t), np.sin(t)
        if moved < 1e-12:
            break
    return th


def ground_state(c, seed: int, restarts: int = 8, anneal_steps=None) -> GroundState:
    """Simulated annealing plus per-spin polish for the angle-only energy.

    Geometric temperature schedule from 2 to 0.001 (units of the coupling
    scale) over ``anneal_steps`` single-spin proposals (default 2e4 * n),
    Gaussian angle proposals of std pi/8, best of ``restarts`` independent
    runs.  Deterministic given ``seed``.  Restricted to n <= 64, where this
    budget is a certified heuristic; raise for larger systems.
    """
    n = c.n
    if n > 64:
        raise ValueError("ground_state is certified for n <= 64 only")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    steps = int(2e4 * n) if anneal_steps is None else int(anneal_steps)
    temps = np.geomspace(2.0, 0.001, steps)
    children = np.random.SeedSequence(seed).spawn(restarts)

    # all restarts run in lockstep as a (restarts, n) batch
    rngs = [np.random.Generator(np.random.Philox(ss)) for ss in children]
    th = np.stack([rng.uniform(0.0, 2.0 * np.pi, n) for rng in rngs])
    co, si = np.cos(th), np.sin(th)
    idx = np.stack([rng.integers(0, n, steps) for rng in rngs])
    prop = np.stack([rng.normal(0.0, np.pi / 8.0, steps) for rng in rngs])
    uni = np.stack([rng.random(steps) for rng in rngs])
    rows = np.arange(restarts)
    jd = np.diag(c.j_non)
    kd = np.diag(c.k)

    for t in range(steps):
        i = idx[:, t]
        jr = c.j_non[i]  # (restarts, n)
        kr = c.k[i]
        a = np.einsum("rj,rj->r", jr, co) - jd[i] * co[rows, i]
        b = np.einsum("rj,rj->r", jr, si) - jd[i] * si[rows, i]
        u = np.einsum("rj,rj->r", kr, co) - kd[i] * co[rows, i]
        v = np.einsum("rj,rj->r", kr, si) - kd[i] * si[rows, i]
        aa, bb = 2.0 * (a + v), 2.0 * (u - b)
        old = th[rows, i]
        new = old + prop[:, t]
        de = _site_energy(new, aa, bb, jd[i], kd[i]) - _site_energy(old, aa, bb, jd[i], kd[i])
        acc = (de <= 0.0) | (uni[:, t] < np.exp(-np.clip(de / temps[t], -700, 700)))
        th[rows[acc], i[acc]] = np.mod(new[acc], 2.0 * np.pi)
        co[rows[acc], i[acc]] = np.cos(new[acc])
        si[rows[acc], i[acc]] = np.sin(new[acc])

    energies = np.empty(restarts)
    best_th = []
    for r in range(restarts):
        pt = _polish(c, th[r])
        best_th.append(pt)
        energies[r] = energy_angle_only(c, SpinConfiguration(pt))
    best = int(np.argmin(energies))
    return GroundState(
        spins=SpinConfiguration(best_th[best]),
        energy=float(energies[best]),
        restart_energies=energies,
    )


def fit_effective_temperature(energies, e_ground: float, n: int):
    """Maximum-likelihood effective temperature from replica energies.

    For n planar spins the energy above the ground state is chi-squared
    distributed with n degrees of freedom at temperature T, so the MLE is

        T_hat = (2 / n) * mean(E - E_ground)

    with standard error T_hat / sqrt(m n / 2) for m samples.
    Returns (t_hat, stderr).
    """
    e = np.asarray(energies, dtype=float).ravel()
    if len(e) < 10:
        raise ValueError("need at least 10 energy samples")
    if np.any(e < e_ground - 1e-9):
        raise ValueError("sample energy below the stated ground state")
    t_hat = (2.0 / n) * float(np.mean(e - e_ground))
    stderr = t_hat / np.sqrt(len(e) * n / 2.0)
    return t_hat, stderr


def append_energy_report(path, reports):
    """Append EnergyReport rows to a CSV (header written if file is new)."""
    import os

    new = not os.path.exists(path)
    with open(path, "a") as fh:
        if new:
            fh.write("replica_id,E,E_over_abs_Egs\n")
        for r in reports:
            fh.write(f"{r.replica_id},{r.energy:.17g},{r.energy_over_abs_ground:.17g}\n")
