"""Interaction matrices for the cavity-mediated vector spin network.

A network of n vertices at planar positions r_i (lengths in um) interacts
through three symmetric n x n matrices:

- ``J_local``: self-interaction kernel, strictly local for well-separated
  vertices, with the mirror image -r contributing a second Gaussian lobe;
- ``J_non``: sign-alternating nonlocal exchange, cosine of 2 r_i.r_j / w_eff^2
  under a Gaussian envelope;
- ``K``: gradient-sourced cross coupling between the two spin components,
  sharing the envelope of ``J_non``.

All three follow from the even-parity harmonic propagator ``greens_plus``
evaluated for Gaussian vertex densities of rms width sigma_a; the closed
forms implemented here are what that integral gives.  Entries are stored in
units of the overall interaction scale, so the numbers in the matrices are
dimensionless and O(1); the physical scale is carried separately in
``CouplingSet.scale`` metadata.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "VertexConfig",
    "CouplingSet",
    "EnsembleSpec",
    "greens_plus",
    "from_geometry",
    "sample_sk",
    "gauge_transform",
    "threshold",
    "read_positions_csv",
    "write_json",
    "read_json",
]

# positions closer than this fraction of sigma_a (directly or via the mirror
# image) make the closed-form kernels ill-conditioned and are rejected
COINCIDENCE_TOL = 0.1


def greens_plus(r, rp, phi, w0):
    """Even-parity propagator kernel of the degenerate resonator.

    G+(r, r', phi) = [G(r, r', phi) + G(r, -r', phi)] / 2 with

        G(r, r', phi) = e^phi / (2 sinh phi)
                        * exp(-(r - r')^2 / (2 w0^2 tanh(phi/2))
                              -(r + r')^2 * tanh(phi/2) / (2 w0^2))

    ``phi`` may be complex; phi = i pi/2 is the self-imaging point where the
    mirror-image term in G+ becomes exact.  Singular at phi = i pi k.
    """
    r = np.asarray(r, dtype=float)
    rp = np.asarray(rp, dtype=float)
    phi = complex(phi)
    sh = np.sinh(phi)
    if abs(sh) < 1e-12:
        raise ValueError("greens_plus is singular at phi = i*pi*k (sinh(phi) = 0)")
    th = np.tanh(phi / 2.0)

    def one(rp_):
        d2 = float(np.sum((r - rp_) ** 2))
        s2 = float(np.sum((r + rp_) ** 2))
        return np.exp(phi) / (2.0 * sh) * np.exp(-d2 / (2.0 * w0**2 * th) - s2 * th / (2.0 * w0**2))

    return 0.5 * (one(rp) + one(-rp))


@dataclass(frozen=True)
class VertexConfig:
    """Geometry of a vertex network.

    positions : (n, 2) array, um
    sigma_a : rms width of the Gaussian vertex density, um
    w0 : resonator waist, um
    atom_numbers : (n,) atoms per vertex
    coupling_scale : physical interaction scale attached to the unit entries
    """

    positions: np.ndarray
    sigma_a: float
    w0: float
    atom_numbers: np.ndarray | None = None
    coupling_scale: float = 1.0

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if pos.ndim != 2 or pos.shape[1] != 2:
            raise ValueError(f"positions must be (n, 2), got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        if self.sigma_a <= 0 or self.w0 <= 0:
            raise ValueError("sigma_a and w0 must be positive")
        atoms = self.atom_numbers
        if atoms is None:
            atoms = np.ones(len(pos))
        atoms = np.asarray(atoms, dtype=float)
        if atoms.shape != (len(pos),) or np.any(atoms <= 0):
            raise ValueError("atom_numbers must be positive, one per vertex")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "atom_numbers", atoms)
        self._check_coincidence()

    def _check_coincidence(self):
        pos = self.positions
        n = len(pos)
        tol = COINCIDENCE_TOL * self.sigma_a
        for i in range(n):
            for j in range(i + 1, n):
                if np.linalg.norm(pos[i] - pos[j]) < tol:
                    raise ValueError(f"vertices {i} and {j} coincide within {tol:g} um")
                if np.linalg.norm(pos[i] + pos[j]) < tol:
                    raise ValueError(
                        f"vertex {j} coincides with the mirror image of vertex {i} within {tol:g} um"
                    )

    @property
    def n(self) -> int:
        return len(self.positions)


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class CouplingSet:
    """Immutable triple of symmetric interaction matrices plus provenance."""

    j_local: np.ndarray
    j_non: np.ndarray
    k: np.ndarray
    scale: float = 1.0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        jl = np.asarray(self.j_local, dtype=float)
        jn = np.asarray(self.j_non, dtype=float)
        kk = np.asarray(self.k, dtype=float)
        n = jl.shape[0]
        for name, m in (("j_local", jl), ("j_non", jn), ("k", kk)):
            if m.shape != (n, n):
                raise ValueError(f"{name} must be square with matching size, got {m.shape}")
            if not np.all(np.isfinite(m)):
                raise ValueError(f"{name} contains non-finite entries")
            scale = max(np.max(np.abs(m)), 1.0)
            if np.max(np.abs(m - m.T)) > 1e-12 * scale:
                raise ValueError(f"{name} is not symmetric within 1e-12 relative tolerance")
        object.__setattr__(self, "j_local", _freeze(jl))
        object.__setattr__(self, "j_non", _freeze(jn))
        object.__setattr__(self, "k", _freeze(kk))

    @property
    def n(self) -> int:
        return self.j_local.shape[0]


def _symmetrize_exact(a: np.ndarray) -> np.ndarray:
    # rebuild from the upper triangle so A == A.T holds bit for bit
    u = np.triu(a)
    return u + np.triu(a, 1).T


def from_geometry(cfg: VertexConfig) -> CouplingSet:
    """Closed-form coupling matrices for Gaussian vertex densities.

    With w_eff^2 = w0^2 (1 + 4 sigma_a^4 / w0^4) and the shared envelope
    env_ij = exp(-(2 sigma_a^2/w_eff^2)(r_i^2 + r_j^2)/w0^2):

        J_local_ij = (w0^2 / 8 sigma_a^2) [exp(-(r_i - r_j)^2 / 4 sigma_a^2)
                                           + exp(-(r_i + r_j)^2 / 4 sigma_a^2)]
        J_non_ij   = (w0^2 / w_eff^2) env_ij cos(2 r_i.r_j / w_eff^2)
        K_ij       = (2 sigma_a^2 / w_eff^2) env_ij
                     [ (4 w0^2 r_i.r_j / w_eff^4) sin(2 r_i.r_j / w_eff^2)
                     + (4 sigma_a^2 (r_i^2 + r_j^2) / w_eff^4) cos(2 r_i.r_j / w_eff^2) ]

    Entries are in units of ``cfg.coupling_scale``.
    """
    pos = cfg.positions
    w0, sa = cfg.w0, cfg.sigma_a
    r2 = np.sum(pos**2, axis=1)
    dots = pos @ pos.T
    r2sum = r2[:, None] + r2[None, :]

    diff2 = r2sum - 2.0 * dots
    sum2 = r2sum + 2.0 * dots
    jl = (w0**2 / (8.0 * sa**2)) * (np.exp(-diff2 / (4.0 * sa**2)) + np.exp(-sum2 / (4.0 * sa**2)))

    weff2 = w0**2 * (1.0 + 4.0 * sa**4 / w0**4)
    env = np.exp(-(2.0 * sa**2 / weff2) * r2sum / w0**2)
    arg = 2.0 * dots / weff2
    jn = (w0**2 / weff2) * env * np.cos(arg)
    kk = (2.0 * sa**2 / weff2) * env * (
        (4.0 * w0**2 * dots / weff2**2) * np.sin(arg)
        + (4.0 * sa**2 * r2sum / weff2**2) * np.cos(arg)
    )

    prov = {
        "kind": "geometry",
        "sigma_a_um": sa,
        "w0_um": w0,
        "positions_um": pos.tolist(),
        "atom_numbers": cfg.atom_numbers.tolist(),
    }
    return CouplingSet(
        j_local=_symmetrize_exact(jl),
        j_non=_symmetrize_exact(jn),
        k=_symmetrize_exact(kk),
        scale=cfg.coupling_scale,
        provenance=prov,
    )


@dataclass(frozen=True)
class EnsembleSpec:
    """All-to-all Gaussian disorder: J_non entries N(mean_j/n, std_j^2/n),
    K entries N(0, std_k^2/n), J_local = local_ratio * std_j on the diagonal.

    Defaults give the reference disorder family: std_k/std_j = 0.5 and a
    local-to-nonlocal weight of 100 used by the mean-field trajectory runs.
    """

    n: int
    seed: int
    mean_j: float = 0.0
    std_j: float = 1.0
    std_k: float = 0.5
    local_ratio: float = 100.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.std_j < 0 or self.std_k < 0:
            raise ValueError("scales must be non-negative")


def sample_sk(spec: EnsembleSpec) -> CouplingSet:
    """Draw one disorder instance.  Deterministic in ``spec.seed``.

    The diagonal is part of the i.i.d. draw: self-terms enter the angle
    energy through cos(2 theta_i) and are physical here.
    """
    n = spec.n
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(spec.seed)))
    iu = np.triu_indices(n)
    jn = np.zeros((n, n))
    jn[iu] = rng.normal(spec.mean_j / n, spec.std_j / np.sqrt(n), size=len(iu[0]))
    jn = jn + np.triu(jn, 1).T
    kk = np.zeros((n, n))
    kk[iu] = rng.normal(0.0, spec.std_k / np.sqrt(n), size=len(iu[0]))
    kk = kk + np.triu(kk, 1).T
    jl = np.diag(np.full(n, spec.local_ratio * spec.std_j))
    prov = {
        "kind": "sk",
        "seed": spec.seed,
        "mean_j": spec.mean_j,
        "std_j": spec.std_j,
        "std_k": spec.std_k,
        "local_ratio": spec.local_ratio,
    }
    return CouplingSet(j_local=jl, j_non=jn, k=kk, scale=spec.std_j, provenance=prov)


def gauge_transform(c: CouplingSet, flips) -> CouplingSet:
    """Negate row i and column i of J_non and K for each flipped vertex.

    This is the local symmetry move of the angle energy (theta_i -> theta_i
    + pi on the flipped set); J_local is untouched.  Involution: applying
    the same flips twice returns the original matrices exactly.
    """
    flips = np.asarray(list(flips), dtype=int)
    if flips.size and (flips.min() < 0 or flips.max() >= c.n):
        raise ValueError("flip index out of range")
    sign = np.ones(c.n)
    sign[flips] = -1.0
    outer = np.outer(sign, sign)
    prov = dict(c.provenance)
    prov["gauge_flips"] = prov.get("gauge_flips", []) + [sorted(set(flips.tolist()))]
    return CouplingSet(
        j_local=c.j_local.copy(),
        j_non=c.j_non * outer,
        k=c.k * outer,
        scale=c.scale,
        provenance=prov,
    )


def threshold(c: CouplingSet):
    """Spectrum of the pump-threshold block matrix.

    M = [[J_local + J_non, K], [K, J_local - J_non]] is symmetric 2n x 2n;
    the superradiance condition compares the transverse-field rate against
    its largest eigenvalue.  Returns (lambda_max, all 2n eigenvalues
    ascending).
    """
    top = np.hstack([c.j_local + c.j_non, c.k])
    bot = np.hstack([c.k, c.j_local - c.j_non])
    m = np.vstack([top, bot])
    try:
        evals = np.linalg.eigvalsh(m)
    except np.linalg.LinAlgError as exc:  # surface solver failure explicitly
        raise RuntimeError(f"threshold eigensolve failed: {exc}") from exc
    return float(evals[-1]), evals


def read_positions_csv(path):
    """Read vertex positions from a CSV with header columns x_um, y_um, atoms.

    Returns (positions (n,2), atom_numbers (n,)).
    """
    data = np.genfromtxt(path, delimiter=",", names=True)
    if data.dtype.names is None or not {"x_um", "y_um", "atoms"} <= set(data.dtype.names):
        raise ValueError(f"{path}: expected header columns x_um, y_um, atoms")
    data = np.atleast_1d(data)
    pos = np.column_stack([data["x_um"], data["y_um"]])
    return pos, np.asarray(data["atoms"], dtype=float)


def write_json(c: CouplingSet, path):
    """Serialize a CouplingSet to JSON with full float precision."""
    doc = {
        "n": c.n,
        "J_local": c.j_local.tolist(),
        "J_non": c.j_non.tolist(),
        "K": c.k.tolist(),
        "scale": c.scale,
        "provenance": c.provenance,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def read_json(path) -> CouplingSet:
    """Load a CouplingSet; matrices are expected pre-symmetrized (checked)."""
    with open(path) as fh:
        doc = json.load(fh)
    try:
        return CouplingSet(
            j_local=np.array(doc["J_local"], dtype=float),
            j_non=np.array(doc["J_non"], dtype=float),
            k=np.array(doc["K"], dtype=float),
            scale=float(doc.get("scale", 1.0)),
            provenance=doc.get("provenance", {}),
        )
    except KeyError as exc:
        raise ValueError(f"{path}: missing coupling field {exc}") from exc
