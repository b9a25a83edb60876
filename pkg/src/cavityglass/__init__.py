"""Simulation and analysis toolkit for a cavity-mediated vector (XY) spin glass.

Subpackage map:

- ``couplings``: interaction-matrix construction (geometry kernels, random
  ensembles, gauge moves, pump-threshold spectrum)
- ``energy``: energy functions, annealed ground states, effective temperatures
- ``ptmc``: parallel-tempering Monte Carlo equilibrium sampling
- ``mftraj``: driven-dissipative stochastic mean-field trajectories
- ``replica``: replica-ensemble overlap statistics, clustering, ultrametricity
- ``rsb``: replica-symmetric and replica-symmetry-broken saddle solvers
- ``cli``: config-driven pipeline runner
"""

__version__ = "0.1.0"

from . import couplings, energy, mftraj, ptmc, replica, rsb, cli  # noqa: E402

__all__ = ["cli", "couplings", "energy", "mftraj", "ptmc", "replica", "rsb"]
