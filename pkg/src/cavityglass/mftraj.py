"""Driven-dissipative mean-field trajectories through the superradiant ramp.

Each vertex carries one SU(3) triple (condensate, cosine mode, sine mode);
the state variable is the per-atom 8-vector of collective Gell-Mann
expectations x_i^k = <L_i^k> / N_i.  The stochastic flow has four pieces:

* a transverse rotation of the (x1, x2) and (x4, x5) pairs at the signed
  rate w(t) = 2 E_r + W^2(t) / (4 Delta_A),
* Hamiltonian pair couplings through the real fields
  tc_i = Jscale * sum_k N_k (Jc_ik x1_k + K_ik x4_k) and
  ts_i = Jscale * sum_k N_k (Js_ik x4_k + K_ik x1_k),
  where Jc = J_local + J_non, Js = J_local - J_non and
  Jscale(t) = coupling_per_power * W^2(t) converts dimensionless coupling
  matrices into rates (rad/ms),
* cavity-loss damping proportional to kappa/|Delta_C| times the diagonal
  entries of Jc, Js,
* measurement noise dS_a (a = c, s) built from the eigenchannels of the
  positive-semidefinite Jc, Js with per-step standard deviation
  sqrt(kappa/|Delta_C| * Jscale * dt * lambda_k) per channel.

Everything is integrated in milliseconds and rad/ms.  The integrator is a
Strang split: an exact half rotation, a Heun (two-stage) update of the
remaining drift plus an Euler-Maruyama noise kick evaluated at the left
point (Ito), and a second exact half rotation.  The plain Euler scheme
drifts the conserved quantities far too fast to certify energy and purity
conservation at practical step sizes, which is why the rotation is split
off exactly and the drift stage is second order.

Linearizing the flow around the normal state x3 = 1, x8 = 1/sqrt(3) gives
v'' = -w^2 v + 4 w Jscale M_N v for v = (x1; x4), with M_N the atom-number
weighted block coupling matrix.  The normal state therefore destabilizes
where w = 4 Jscale lambda_max(M_N), which fixes the critical pump power

    W_c^2 = 2 E_r / (4 coupling_per_power lambda_max(M_N) + 1/(4|Delta_A|)).

``calibrate_pump`` applies exactly this formula so that simulated
threshold crossings agree with the linear-stability prediction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import constants as _const

__all__ = [
    "GELL_MANN",
    "CavityConstants",
    "PumpSegment",
    "PumpSchedule",
    "PumpCalibration",
    "TrajectoryParams",
    "TrajectoryState",
    "TrajectoryOutcome",
    "EnsembleResult",
    "StepSizeError",
    "lindblad_decompose",
    "calibrate_pump",
    "init_state",
    "step",
    "run_trajectory",
    "run_ensemble",
]

_SQRT3 = math.sqrt(3.0)


def _gell_mann():
    g = np.zeros((8, 3, 3), dtype=complex)
    g[0, 0, 1] = g[0, 1, 0] = 1.0
    g[1, 0, 1], g[1, 1, 0] = -1j, 1j
    g[2, 0, 0], g[2, 1, 1] = 1.0, -1.0
    g[3, 0, 2] = g[3, 2, 0] = 1.0
    g[4, 0, 2], g[4, 2, 0] = -1j, 1j
    g[5, 1, 2] = g[5, 2, 1] = 1.0
    g[6, 1, 2], g[6, 2, 1] = -1j, 1j
    g[7] = np.diag([1.0, 1.0, -2.0]) / _SQRT3
    return g


GELL_MANN = _gell_mann()
GELL_MANN.setflags(write=False)


class StepSizeError(RuntimeError):
    """Raised when the integration produced non-finite state components."""


@dataclass(frozen=True)
class CavityConstants:
    """Physical rates of the cavity-atom system, in rad/ms.

    ``coupling_per_power`` converts squared pump Rabi frequency into the
    coupling-matrix rate scale:
    g0^2 |Delta_C| / (8 Delta_A^2 (Delta_C^2 + kappa^2)).
    """

    e_r: float
    delta_a: float
    delta_c: float
    kappa: float
    g0: float
    atom_number: float = 2.3e5

    @classmethod
    def rb87_defaults(cls) -> "CavityConstants":
        """780 nm recoil plus the measured cavity rates."""
        k_r = 2.0 * math.pi / 780e-9
        mass = 86.909180531 * _const.physical_constants["atomic mass constant"][0]
        e_r = _const.hbar * k_r * k_r / (2.0 * mass) / 1e3  # rad/s -> rad/ms
        two_pi = 2.0 * math.pi
        return cls(
            e_r=e_r,
            delta_a=-two_pi * 97.3e9 / 1e3,
            delta_c=-two_pi * 60e6 / 1e3,
            kappa=two_pi * 137e3 / 1e3,
            g0=two_pi * 1.47e6 / 1e3,
        )

    @property
    def kappa_over_delta_c(self) -> float:
        return self.kappa / abs(self.delta_c)

    @property
    def coupling_per_power(self) -> float:
        return (
            self.g0**2
            * abs(self.delta_c)
            / (8.0 * self.delta_a**2 * (self.delta_c**2 + self.kappa**2))
        )

    def transverse_field(self, omega_sq: float) -> float:
        """Signed rotation rate 2 E_r + W^2 / (4 Delta_A) of the spin pairs."""
        return 2.0 * self.e_r + omega_sq / (4.0 * self.delta_a)

    def coupling_scale(self, omega_sq: float) -> float:
        """Rate multiplying the dimensionless coupling matrices at pump W^2."""
        return self.coupling_per_power * omega_sq


@dataclass(frozen=True)
class PumpSegment:
    """Linear pump-power segment, in units of the critical power."""

    t0: float
    t1: float
    power_start: float
    power_end: float

    def power(self, t: float) -> float:
        if self.t1 == self.t0:
            return self.power_end
        f = (t - self.t0) / (self.t1 - self.t0)
        return self.power_start + f * (self.power_end - self.power_start)


@dataclass(frozen=True)
class PumpSchedule:
    """Piecewise-linear relative pump power W^2(t)/W_c^2 plus readout window."""

    segments: tuple
    readout_start: float
    readout_duration: float

    def __post_init__(self):
        if not self.segments:
            raise ValueError("schedule needs at least one segment")
        t = 0.0
        for seg in self.segments:
            if abs(seg.t0 - t) > 1e-12 or seg.t1 <= seg.t0:
                raise ValueError("segments must be contiguous from t = 0")
            if seg.power_start < 0.0 or seg.power_end < 0.0:
                raise ValueError("pump power cannot be negative")
            t = seg.t1
        end = self.readout_start + self.readout_duration
        if self.readout_duration <= 0.0 or self.readout_start < 0.0 or end > t + 1e-12:
            raise ValueError("readout window must sit inside the simulated span")

    @property
    def total_time(self) -> float:
        return self.segments[-1].t1

    def power_rel(self, t: float) -> float:
        for seg in self.segments:
            if t <= seg.t1 or seg is self.segments[-1]:
                return max(seg.power(min(t, seg.t1)), 0.0)
        raise ValueError(f"time {t} outside schedule")  # pragma: no cover

    @classmethod
    def experiment(cls) -> "PumpSchedule":
        """1.25 ms linear ramp at one critical power per ms, then 500 us at 2.5."""
        return cls(
            segments=(
                PumpSegment(0.0, 1.25, 0.0, 1.25),
                PumpSegment(1.25, 1.75, 2.5, 2.5),
            ),
            readout_start=1.25,
            readout_duration=0.5,
        )

    @classmethod
    def with_hold(cls, t_hold: float) -> "PumpSchedule":
        """Experimental ramp, then hold at 1.25 critical powers before readout."""
        if t_hold <= 0.0:
            return cls.experiment()
        return cls(
            segments=(
                PumpSegment(0.0, 1.25, 0.0, 1.25),
                PumpSegment(1.25, 1.25 + t_hold, 1.25, 1.25),
                PumpSegment(1.25 + t_hold, 1.75 + t_hold, 2.5, 2.5),
            ),
            readout_start=1.25 + t_hold,
            readout_duration=0.5,
        )

    @classmethod
    def linear_ramp(cls, t_ramp: float, peak: float = 2.0) -> "PumpSchedule":
        """Ramp to ``peak`` critical powers over t_ramp, hold 500 us for readout."""
        return cls(
            segments=(
                PumpSegment(0.0, t_ramp, 0.0, peak),
                PumpSegment(t_ramp, t_ramp + 0.5, peak, peak),
            ),
            readout_start=t_ramp,
            readout_duration=0.5,
        )

    def to_json(self) -> dict:
        return {
            "segments": [
                {
                    "t0_ms": s.t0,
                    "t1_ms": s.t1,
                    "power_start_rel": s.power_start,
                    "power_end_rel": s.power_end,
                }
                for s in self.segments
            ],
            "readout": {"start_ms": self.readout_start, "dur_ms": self.readout_duration},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PumpSchedule":
        segs = []
        for s in doc["segments"]:
            if "power_rel" in s:
                p0 = p1 = float(s["power_rel"])
            else:
                p0, p1 = float(s["power_start_rel"]), float(s["power_end_rel"])
            segs.append(PumpSegment(float(s["t0_ms"]), float(s["t1_ms"]), p0, p1))
        return cls(
            segments=tuple(segs),
            readout_start=float(doc["readout"]["start_ms"]),
            readout_duration=float(doc["readout"]["dur_ms"]),
        )


def lindblad_decompose(c, tol: float = 1e-10):
    """Eigen-decompositions of the loss kernels Jc = Jl + Jn, Js = Jl - Jn.

    Both must be positive semidefinite for a valid master equation;
    eigenvalues within -tol * lambda_max are clamped to zero, anything more
    negative is rejected.
    """
    out = []
    for mat in (c.j_local + c.j_non, c.j_local - c.j_non):
        w, v = np.linalg.eigh(mat)
        floor = -tol * max(w[-1], 0.0)
        if w[0] < floor:
            raise ValueError(
                f"loss kernel has negative eigenvalue {w[0]:.3e}; not a valid "
                "dissipator"
            )
        out.extend((np.clip(w, 0.0, None), v))
    return tuple(out)


@dataclass(frozen=True)
class PumpCalibration:
    """Critical pump power from linear stability of the normal state."""

    omega_c_sq: float
    lambda_max: float  # atom-number weighted block-matrix eigenvalue
    constants: CavityConstants

    def omega_sq(self, power_rel: float) -> float:
        return power_rel * self.omega_c_sq

    def coupling_scale(self, power_rel: float) -> float:
        return self.constants.coupling_scale(self.omega_sq(power_rel))

    def transverse_field(self, power_rel: float) -> float:
        return self.constants.transverse_field(self.omega_sq(power_rel))


def _weighted_lambda_max(c, atom_numbers) -> float:
    """Top eigenvalue of the atom-number weighted two-quadrature block matrix."""
    block = np.block([[c.j_local + c.j_non, c.k], [c.k, c.j_local - c.j_non]])
    root = np.sqrt(np.concatenate([atom_numbers, atom_numbers]))
    return float(np.linalg.eigvalsh(root[:, None] * block * root[None, :])[-1])


def calibrate_pump(c, constants: CavityConstants, atom_numbers=None) -> PumpCalibration:
    """Solve w(W_c^2) = 4 Jscale(W_c^2) lambda_max for the critical power."""
    nums = (
        np.full(c.n, constants.atom_number)
        if atom_numbers is None
        else np.asarray(atom_numbers, dtype=float)
    )
    lam = _weighted_lambda_max(c, nums)
    if lam <= 0.0:
        raise ValueError("coupling block matrix has no unstable direction")
    denom = 4.0 * constants.coupling_per_power * lam + 1.0 / (4.0 * abs(constants.delta_a))
    return PumpCalibration(
        omega_c_sq=2.0 * constants.e_r / denom, lambda_max=lam, constants=constants
    )


@dataclass(frozen=True)
class TrajectoryParams:
    """Integration controls; rates default to the measured apparatus."""

    dt: float = 5e-4  # ms
    perturbation_std: float = 0.01
    seed: int = 0
    constants: CavityConstants = field(default_factory=CavityConstants.rb87_defaults)
    omega_c_sq: float | None = None  # None: calibrate from the couplings
    superradiance_floor: float = 0.05  # per-atom readout amplitude for a valid shot
    max_rate_dt: float = 0.05

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.perturbation_std < 0.0:
            raise ValueError("perturbation_std must be non-negative")


@dataclass(frozen=True)
class TrajectoryState:
    """Per-atom Gell-Mann expectations, one 8-vector per vertex."""

    x: np.ndarray  # (n, 8)
    atom_numbers: np.ndarray  # (n,)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def casimir(self) -> np.ndarray:
        """Per-vertex squared Bloch length; 4/3 for pure product states."""
        return np.sum(self.x**2, axis=1)

    def spin_components(self):
        """(Sx, Sy, Sz) on the unit ball: Sx = x1, Sy = x4, Sz from x3, x8."""
        sx = self.x[:, 0].copy()
        sy = self.x[:, 3].copy()
        sz = 1.0 / 3.0 - self.x[:, 2] - self.x[:, 7] / _SQRT3
        return sx, sy, sz

    @classmethod
    def normal(cls, n: int, atom_numbers) -> "TrajectoryState":
        x = np.zeros((n, 8))
        x[:, 2] = 1.0
        x[:, 7] = 1.0 / _SQRT3
        return cls(x=x, atom_numbers=np.asarray(atom_numbers, dtype=float))


def init_state(c, params: TrajectoryParams, rng, atom_numbers=None) -> TrajectoryState:
    """Normal state with complex Gaussian symmetry-breaking perturbations.

    Each vertex gets a pure three-level vector (1 - a, b, c) with complex
    entries of standard deviation ``perturbation_std``; the Gell-Mann
    expectations of the normalized vector define the state, so the pure
    Casimir value 4/3 holds exactly.
    """
    n = c.n
    nums = (
        np.full(n, params.constants.atom_number)
        if atom_numbers is None
        else np.asarray(atom_numbers, dtype=float)
    )
    draws = rng.standard_normal((n, 3, 2)) * (params.perturbation_std / math.sqrt(2.0))
    pert = draws[..., 0] + 1j * draws[..., 1]
    psi = np.column_stack([1.0 - pert[:, 0], pert[:, 1], pert[:, 2]])
    psi /= np.linalg.norm(psi, axis=1, keepdims=True)
    x = np.einsum("vi,kij,vj->vk", psi.conj(), GELL_MANN, psi).real
    return TrajectoryState(x=x, atom_numbers=nums)


class _Workspace:
    """Precomputed coupling contractions shared by every step of a run."""

    def __init__(self, c, params: TrajectoryParams, atom_numbers):
        if params.omega_c_sq is None:
            self.calib = calibrate_pump(c, params.constants, atom_numbers)
        else:
            lam = max(_weighted_lambda_max(c, np.asarray(atom_numbers, dtype=float)), 0.0)
            self.calib = PumpCalibration(
                omega_c_sq=params.omega_c_sq, lambda_max=lam, constants=params.constants
            )
        jc = c.j_local + c.j_non
        js = c.j_local - c.j_non
        nums = np.asarray(atom_numbers, dtype=float)
        # Hamiltonian fields weight each source vertex by its atom number
        self.jc_w = jc * nums[None, :]
        self.js_w = js * nums[None, :]
        self.k_w = c.k * nums[None, :]
        self.d_c = np.diag(jc).copy()
        self.d_s = np.diag(js).copy()
        self.kbar = params.constants.kappa_over_delta_c
        if self.kbar > 0.0:
            wc, vc, ws, vs = lindblad_decompose(c)
            self.noise_c = vc * np.sqrt(wc)[None, :]  # dS_c = scale * noise_c @ xi
            self.noise_s = vs * np.sqrt(ws)[None, :]
        else:  # closed system: no dissipator to decompose
            self.noise_c = self.noise_s = None

    def max_rate(self, schedule: PumpSchedule) -> float:
        """Largest deterministic rate the discrete stages must resolve.

        The transverse rotation is integrated exactly, so the binding
        scales are the linear-instability growth rate
        sqrt(max(w (4 Jscale lambda_max - w), 0)), the rotation rate
        itself (kept as a sanity bound), and the damping rate; evaluated
        at every segment endpoint of the schedule.
        """
        probes = {0.0}
        for seg in schedule.segments:
            probes.update((seg.power_start, seg.power_end))
        dmax = float(max(np.max(4.0 * self.d_c + self.d_s), np.max(self.d_c + 4.0 * self.d_s)))
        rate = 0.0
        for p in probes:
            w = self.calib.transverse_field(p)
            drive = 4.0 * self.calib.coupling_scale(p) * self.calib.lambda_max
            growth = math.sqrt(max(w * (drive - w), 0.0))
            damping = self.kbar * self.calib.coupling_scale(p) * dmax
            rate = max(rate, abs(w), growth, damping)
        return rate


def _drift(x, ws: _Workspace, jscale: float):
    """Hamiltonian-coupling and damping drift (rotation handled separately)."""
    x1, x2, x3, x4 = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
    x5, x6, x7, x8 = x[..., 4], x[..., 5], x[..., 6], x[..., 7]
    tc = jscale * (x1 @ ws.jc_w.T + x4 @ ws.k_w.T)
    ts = jscale * (x4 @ ws.js_w.T + x1 @ ws.k_w.T)
    damp = ws.kbar * jscale
    f = np.empty_like(x)
    f[..., 0] = -2.0 * ts * x7 - damp * ws.d_s * x1
    f[..., 1] = 4.0 * tc * x3 - 2.0 * ts * x6 - damp * (4.0 * ws.d_c + ws.d_s) * x2
    f[..., 2] = (
        -4.0 * tc * x2
        - 2.0 * ts * x5
        - damp * ((4.0 * ws.d_c + ws.d_s) * x3 + _SQRT3 * ws.d_s * x8)
    )
    f[..., 3] = 2.0 * tc * x7 - damp * ws.d_c * x4
    f[..., 4] = (
        -2.0 * tc * x6
        + 2.0 * ts * (x3 + _SQRT3 * x8)
        - damp * (ws.d_c + 4.0 * ws.d_s) * x5
    )
    f[..., 5] = 2.0 * tc * x5 + 2.0 * ts * x2 - damp * (ws.d_c + ws.d_s) * x6
    f[..., 6] = -2.0 * tc * x4 + 2.0 * ts * x1 - damp * (ws.d_c + ws.d_s) * x7
    f[..., 7] = -2.0 * _SQRT3 * ts * x5 - damp * ws.d_s * (_SQRT3 * x3 + 3.0 * x8)
    return f


def _apply_noise(x, ds_c, ds_s):
    """State-dependent coupling of the measurement noise channels."""
    x1, x2, x3, x4 = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
    x5, x6, x7, x8 = x[..., 4], x[..., 5], x[..., 6], x[..., 7]
    g = np.empty_like(x)
    g[..., 0] = x7 * ds_s
    g[..., 1] = -2.0 * x3 * ds_c + x6 * ds_s
    g[..., 2] = 2.0 * x2 * ds_c + x5 * ds_s
    g[..., 3] = -x7 * ds_c
    g[..., 4] = x6 * ds_c - (x3 + _SQRT3 * x8) * ds_s
    g[..., 5] = -x5 * ds_c - x2 * ds_s
    g[..., 6] = x4 * ds_c - x1 * ds_s
    g[..., 7] = _SQRT3 * x5 * ds_s
    return g


def _rotate(x, angle):
    """Exact transverse rotation of the (x1, x2) and (x4, x5) pairs."""
    co, si = math.cos(angle), math.sin(angle)
    for a, b in ((0, 1), (3, 4)):
        xa = x[..., a] * co + x[..., b] * si
        xb = x[..., b] * co - x[..., a] * si
        x[..., a], x[..., b] = xa, xb


def _advance(x, ws: _Workspace, schedule, dt: float, t: float, xi=None):
    """One Strang step of the batch array x (T, n, 8), in place."""
    tm = t + 0.5 * dt
    power = schedule.power_rel(tm)
    omega = ws.calib.transverse_field(power)
    jscale = ws.calib.coupling_scale(power)
    _rotate(x, omega * dt * 0.5)
    f0 = _drift(x, ws, jscale)
    f1 = _drift(x + dt * f0, ws, jscale)
    if xi is not None and ws.noise_c is not None:
        scale = math.sqrt(ws.kbar * jscale * dt)
        ds_c = scale * (xi[:, 0, :] @ ws.noise_c.T)
        ds_s = scale * (xi[:, 1, :] @ ws.noise_s.T)
        kick = _apply_noise(x, ds_c, ds_s)  # Ito: noise couples to the left point
        x += 0.5 * dt * (f0 + f1) + kick
    else:
        x += 0.5 * dt * (f0 + f1)
    _rotate(x, omega * dt * 0.5)


def step(state: TrajectoryState, c, schedule, params, t, rng, *, workspace=None):
    """Public single-step update (one trajectory); returns the new state.

    Builds the coupling workspace on the fly when none is supplied, so
    repeated stepping should pass one in (or use run_trajectory).
    """
    ws = workspace or _Workspace(c, params, state.atom_numbers)
    x = state.x[None, :, :].copy()
    xi = rng.standard_normal((1, 2, state.n)) if rng is not None else None
    _advance(x, ws, schedule, params.dt, t, xi)
    if not np.all(np.isfinite(x)):
        raise StepSizeError(f"non-finite state after step at t = {t:.6f} ms")
    return TrajectoryState(x=x[0], atom_numbers=state.atom_numbers)


@dataclass(frozen=True)
class TrajectoryOutcome:
    """Readout of one trajectory: spin angles plus superradiance metadata."""

    spins: "object"  # SpinConfiguration
    superradiant: bool
    readout_amplitude: float  # mean per-atom |<L1 + i L4>| over the window
    vertex_amplitudes: np.ndarray
    final_state: TrajectoryState


@dataclass(frozen=True)
class EnsembleResult:
    """Trajectory ensemble with non-superradiant shots filtered out."""

    outcomes: tuple

    @property
    def spins(self):
        return [o.spins for o in self.outcomes if o.superradiant]

    @property
    def n_superradiant(self) -> int:
        return sum(o.superradiant for o in self.outcomes)

    @property
    def n_excluded(self) -> int:
        return len(self.outcomes) - self.n_superradiant

    def mean_amplitude(self) -> float:
        return float(np.mean([o.readout_amplitude for o in self.outcomes]))


_NOISE_BLOCK = 512


def _run_batch(c, schedule: PumpSchedule, params: TrajectoryParams, n_traj: int, atom_numbers):
    from .energy import SpinConfiguration

    n = c.n
    nums = (
        np.full(n, params.constants.atom_number)
        if atom_numbers is None
        else np.asarray(atom_numbers, dtype=float)
    )
    ws = _Workspace(c, params, nums)
    rate = ws.max_rate(schedule)
    if params.dt * rate >= params.max_rate_dt:
        raise ValueError(
            f"dt * max deterministic rate = {params.dt * rate:.3f} exceeds "
            f"{params.max_rate_dt}; reduce dt below {params.max_rate_dt / rate:.2e} ms"
        )

    gens = [
        np.random.Generator(np.random.Philox(s))
        for s in np.random.SeedSequence(params.seed).spawn(n_traj)
    ]
    x = np.stack([init_state(c, params, g, nums).x for g in gens])

    steps = int(round(schedule.total_time / params.dt))
    r0, r1 = schedule.readout_start, schedule.readout_start + schedule.readout_duration
    acc = np.zeros((n_traj, n), dtype=complex)
    n_acc = 0
    noisy = params.constants.kappa > 0.0
    xi_block, used = None, 0
    for k in range(steps):
        t = k * params.dt
        xi = None
        if noisy:
            if xi_block is None or used >= xi_block.shape[1]:
                blk = min(_NOISE_BLOCK, steps - k)
                xi_block = np.stack([g.standard_normal((blk, 2, n)) for g in gens])
                used = 0
            xi = xi_block[:, used]
            used += 1
        _advance(x, ws, schedule, params.dt, t, xi)
        t_end = t + params.dt
        if r0 - 1e-12 <= t_end <= r1 + 1e-12:
            acc += x[:, :, 0] + 1j * x[:, :, 3]
            n_acc += 1
        if (k + 1) % 256 == 0 or k + 1 == steps:
            if not np.all(np.isfinite(x)):
                raise StepSizeError(
                    f"non-finite state near t = {t_end:.4f} ms; reduce dt"
                )

    avg = acc / max(n_acc, 1)
    amps = np.abs(avg)
    outcomes = []
    for tr in range(n_traj):
        amp = float(np.mean(amps[tr]))
        flag = amp >= params.superradiance_floor
        outcomes.append(
            TrajectoryOutcome(
                spins=SpinConfiguration(thetas=np.angle(avg[tr])),
                superradiant=flag,
                readout_amplitude=amp,
                vertex_amplitudes=amps[tr],
                final_state=TrajectoryState(x=x[tr].copy(), atom_numbers=nums),
            )
        )
    return outcomes


def run_trajectory(c, schedule, params, atom_numbers=None) -> TrajectoryOutcome:
    """Integrate one trajectory and read out its replica spin configuration.

    The angle of vertex i is the complex phase of the time average of
    x1_i + i x4_i over the readout window; a shot whose mean amplitude
    stays below ``superradiance_floor`` is flagged non-superradiant
    instead of contributing a noise-dominated angle.
    """
    return _run_batch(c, schedule, params, 1, atom_numbers)[0]


def run_ensemble(c, schedule, params, n_traj: int, atom_numbers=None) -> EnsembleResult:
    """Independent trajectories from per-trajectory spawned RNG streams.

    Trajectory t draws from spawned stream t regardless of batch size or
    scheduling, so ensembles are reproducible for a fixed (seed, n_traj)
    and independent of thread count; run_ensemble(c, s, p, 1) is
    bit-identical to run_trajectory (stream 0 with the same block layout).
    """
    if n_traj < 1:
        raise ValueError("n_traj must be at least 1")
    return EnsembleResult(outcomes=tuple(_run_batch(c, schedule, params, n_traj, atom_numbers)))
