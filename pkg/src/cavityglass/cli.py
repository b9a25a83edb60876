"""Config-driven batch runner binding disorder generation, simulation, and
analysis into reproducible pipelines.

One JSON document describes one run.  ``run_pipeline`` executes the stage
named by ``mode``, writes every artifact under the output directory, and
finishes with a ``manifest.json`` recording the config hash, input and
output content hashes, package versions, the master seed, and wall time.
Given an identical config the data outputs are byte-identical; only the
manifest's wall-time field varies.

Exit codes: 0 success, 2 config/schema error, 3 numerical failure,
4 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__ as _pkg_version
from . import couplings as cpl
from . import mftraj, ptmc, replica, rsb

__all__ = [
    "CONFIG_SCHEMA",
    "RunConfig",
    "ConfigError",
    "PipelineError",
    "run_pipeline",
    "generate_ensemble",
    "main",
]

MODES = ("couplings", "ptmc", "mftraj", "analyze", "rsb", "aggregate", "ensemble")

_SCHEDULE_SCHEMA = {
    "type": "object",
    "properties": {
        "named": {"type": "string", "enum": ["experiment", "with_hold", "linear_ramp"]},
        "t_hold_ms": {"type": "number", "minimum": 0},
        "t_ramp_ms": {"type": "number", "exclusiveMinimum": 0},
        "peak_rel": {"type": "number", "exclusiveMinimum": 0},
        "segments": {"type": "array", "minItems": 1},
        "readout": {"type": "object"},
    },
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "cavityglass run configuration",
    "type": "object",
    "required": ["mode"],
    "properties": {
        "mode": {"type": "string", "enum": list(MODES)},
        "seed": {"type": "integer", "minimum": 0},
        "out_dir": {"type": "string"},
        "threads": {"type": "integer", "minimum": 1},
        "couplings": {
            "type": "object",
            "required": ["positions_csv", "sigma_a_um", "w0_um"],
            "properties": {
                "positions_csv": {"type": "string"},
                "sigma_a_um": {"type": "number", "exclusiveMinimum": 0},
                "w0_um": {"type": "number", "exclusiveMinimum": 0},
                "coupling_scale": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "ensemble": {
            "type": "object",
            "required": ["count", "kind"],
            "properties": {
                "count": {"type": "integer", "minimum": 1},
                "kind": {"type": "string", "enum": ["sk", "geometric"]},
                "n": {"type": "integer", "minimum": 1},
                "mean_j": {"type": "number"},
                "std_j": {"type": "number", "minimum": 0},
                "std_k": {"type": "number", "minimum": 0},
                "local_ratio": {"type": "number", "minimum": 0},
                "sigma_a_um": {"type": "number", "exclusiveMinimum": 0},
                "w0_um": {"type": "number", "exclusiveMinimum": 0},
                "disc_radius_factor": {"type": "number", "exclusiveMinimum": 0},
                "atoms_per_vertex": {"type": "number", "exclusiveMinimum": 0},
                "coupling_scale": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "ptmc": {
            "type": "object",
            "required": ["coupling_files", "steps"],
            "properties": {
                "coupling_files": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                "temperatures": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                "n_temps": {"type": "integer", "minimum": 1},
                "t_min": {"type": "number", "exclusiveMinimum": 0},
                "t_max": {"type": "number", "exclusiveMinimum": 0},
                "steps": {"type": "integer", "minimum": 1},
                "swap_interval": {"type": "integer", "minimum": 1},
                "record_interval": {"type": "integer", "minimum": 1},
                "burn_in": {"type": "integer", "minimum": 0},
                "proposal_std": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "mftraj": {
            "type": "object",
            "required": ["coupling_files", "n_traj"],
            "properties": {
                "coupling_files": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                "n_traj": {"type": "integer", "minimum": 1},
                "dt_ms": {"type": "number", "exclusiveMinimum": 0},
                "perturbation_std": {"type": "number", "minimum": 0},
                "omega_c_sq": {"type": "number", "exclusiveMinimum": 0},
                "superradiance_floor": {"type": "number", "minimum": 0},
                "schedule": _SCHEDULE_SCHEMA,
            },
            "additionalProperties": False,
        },
        "analyze": {
            "type": "object",
            "required": ["records"],
            "properties": {
                "records": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                "chain_index": {"type": "integer", "minimum": 0},
                "bins": {"type": "integer", "minimum": 2},
                "symmetrize": {"type": "boolean"},
                "q0": {"type": "number", "exclusiveMinimum": 0},
                "compute": {
                    "type": "array",
                    "items": {
                        "type": "string",
                        "enum": ["dendrogram", "ktri", "binder", "magnetization", "bootstrap"],
                    },
                },
                "n_boot": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "rsb": {
            "type": "object",
            "properties": {
                "beta_j": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                "start": {"type": "number", "exclusiveMinimum": 0},
                "stop": {"type": "number", "exclusiveMinimum": 0},
                "num": {"type": "integer", "minimum": 2},
                "with_1rsb": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "aggregate": {
            "type": "object",
            "required": ["histogram_files"],
            "properties": {
                "histogram_files": {"type": "array", "items": {"type": "string"}, "minItems": 1},
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

_STOCHASTIC_MODES = frozenset({"ensemble", "ptmc", "mftraj"})


class ConfigError(ValueError):
    """Configuration rejected before any work ran (exit code 2)."""


class PipelineError(RuntimeError):
    """Numerical failure inside a pipeline stage (exit code 3)."""


@dataclass(frozen=True)
class RunConfig:
    """Validated run description: stage, seed, artifact root, worker count."""

    mode: str
    seed: int | None
    out_dir: Path
    threads: int
    params: dict
    config_text: str
    config_path: Path | None = None

    @classmethod
    def from_file(cls, path, *, mode=None, seed=None, out_dir=None, threads=None) -> "RunConfig":
        """Load and validate a JSON config, applying CLI flag overrides."""
        import jsonschema

        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise OSError(f"cannot read config {p}: {exc}") from exc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
        try:
            jsonschema.validate(doc, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"{p}: at {exc.json_path}: {exc.message}") from exc
        if mode is not None and doc["mode"] != mode:
            raise ConfigError(
                f"{p}: config mode {doc['mode']!r} does not match subcommand {mode!r}"
            )
        eff_mode = doc["mode"]
        eff_seed = seed if seed is not None else doc.get("seed")
        if eff_mode in _STOCHASTIC_MODES and eff_seed is None:
            raise ConfigError(f"{p}: mode {eff_mode!r} is stochastic and needs a seed")
        params = doc.get(eff_mode, {})
        if eff_mode == "rsb" and not ("beta_j" in params or {"start", "stop", "num"} <= set(params)):
            raise ConfigError(f"{p}: rsb block needs beta_j or start/stop/num")
        required_blocks = {"couplings", "ensemble", "ptmc", "mftraj", "analyze", "aggregate"}
        if eff_mode in required_blocks and eff_mode not in doc:
            raise ConfigError(f"{p}: missing parameter block {eff_mode!r}")
        eff_out = Path(out_dir if out_dir is not None else doc.get("out_dir", "."))
        eff_threads = int(threads if threads is not None else doc.get("threads", 1))
        return cls(
            mode=eff_mode,
            seed=None if eff_seed is None else int(eff_seed),
            out_dir=eff_out,
            threads=max(eff_threads, 1),
            params=params,
            config_text=text,
            config_path=p,
        )

    def input_paths(self) -> list:
        key = {
            "couplings": ("positions_csv",),
            "ptmc": ("coupling_files",),
            "mftraj": ("coupling_files",),
            "analyze": ("records",),
            "aggregate": ("histogram_files",),
        }.get(self.mode, ())
        base = self.config_path.parent if self.config_path is not None else Path(".")
        paths = []
        for k in key:
            v = self.params[k]
            for item in v if isinstance(v, list) else [v]:
                q = Path(item)
                paths.append(q if q.is_absolute() else base / q)
        return paths


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions() -> dict:
    import scipy

    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "cavityglass": _pkg_version,
    }


def _child_seed(master: int, index: int) -> int:
    """Derived per-instance seed: stable, collision-free, and printable."""
    return int(np.random.SeedSequence([master, index]).generate_state(1, np.uint64)[0])


def generate_ensemble(config: RunConfig) -> list:
    """Write ``count`` disorder instances with per-instance derived seeds.

    SK instances draw dense Gaussian couplings; geometric instances draw
    vertex positions uniformly in a disc of radius
    ``disc_radius_factor * w0`` (default 0.75) subject to a minimum
    separation of 2 sigma_a between all vertices and all mirror images,
    then build couplings from the resonator Green's function.  Rejection
    sampling aborts after 1e5 attempts per instance.
    """
    p = config.params
    count = int(p["count"])
    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)
    width = max(len(str(count - 1)), 3)
    files = []
    for i in range(count):
        seed_i = _child_seed(config.seed, i)
        if p["kind"] == "sk":
            spec = cpl.EnsembleSpec(
                n=int(p.get("n", 8)),
                seed=seed_i,
                mean_j=float(p.get("mean_j", 0.0)),
                std_j=float(p.get("std_j", 1.0)),
                std_k=float(p.get("std_k", 0.5)),
                local_ratio=float(p.get("local_ratio", 100.0)),
            )
            cset = cpl.sample_sk(spec)
        else:
            cset = _sample_geometric_instance(p, seed_i)
        path = out / f"instance_{i:0{width}d}.json"
        cpl.write_json(cset, path)
        files.append(path)
    return files


def _sample_geometric_instance(p: dict, seed: int):
    n = int(p.get("n", 8))
    sigma_a = float(p.get("sigma_a_um", 2.0))
    w0 = float(p.get("w0_um", 35.0))
    radius = float(p.get("disc_radius_factor", 0.75)) * w0
    min_sep = 2.0 * sigma_a
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    pts = []
    attempts = 0
    while len(pts) < n:
        attempts += 1
        if attempts > 100_000:
            raise PipelineError(
                f"position sampling failed after 1e5 attempts: {n} vertices with "
                f"separation {min_sep:g} um do not fit in a disc of radius {radius:g} um"
            )
        u, phi = rng.random(), rng.random() * 2.0 * np.pi
        cand = radius * np.sqrt(u) * np.array([np.cos(phi), np.sin(phi)])
        if np.linalg.norm(cand) < 0.5 * min_sep:  # own mirror image
            continue
        ok = all(
            np.linalg.norm(cand - q) >= min_sep and np.linalg.norm(cand + q) >= min_sep
            for q in pts
        )
        if ok:
            pts.append(cand)
    cfg = cpl.VertexConfig(
        positions=np.array(pts),
        sigma_a=sigma_a,
        w0=w0,
        atom_numbers=np.full(n, float(p.get("atoms_per_vertex", 1.0))),
        coupling_scale=float(p.get("coupling_scale", 1.0)),
    )
    return cpl.from_geometry(cfg)


def _build_schedule(block: dict | None) -> mftraj.PumpSchedule:
    if not block:
        return mftraj.PumpSchedule.experiment()
    if "segments" in block:
        return mftraj.PumpSchedule.from_json(block)
    name = block.get("named", "experiment")
    if name == "experiment":
        return mftraj.PumpSchedule.experiment()
    if name == "with_hold":
        return mftraj.PumpSchedule.with_hold(float(block.get("t_hold_ms", 0.0)))
    return mftraj.PumpSchedule.linear_ramp(
        float(block.get("t_ramp_ms", 1.25)), peak=float(block.get("peak_rel", 2.0))
    )


def _run_couplings(config: RunConfig, outputs: list):
    p = config.params
    pos_path = config.input_paths()[0]
    positions, atoms = cpl.read_positions_csv(pos_path)
    cfg = cpl.VertexConfig(
        positions=positions,
        sigma_a=float(p["sigma_a_um"]),
        w0=float(p["w0_um"]),
        atom_numbers=atoms,
        coupling_scale=float(p.get("coupling_scale", 1.0)),
    )
    cset = cpl.from_geometry(cfg)
    path = config.out_dir / "couplings.json"
    cpl.write_json(cset, path)
    outputs.append(path)


def _run_ptmc(config: RunConfig, outputs: list):
    p = config.params
    files = config.input_paths()
    sets = [cpl.read_json(f) for f in files]
    if "temperatures" in p:
        ladder = tuple(float(t) for t in p["temperatures"])
    else:
        ladder = ptmc.default_ladder(
            int(p.get("n_temps", 20)), float(p.get("t_min", 0.1)), float(p.get("t_max", 2.0))
        )
    params = ptmc.PtmcParams(
        temperatures=ladder,
        steps=int(p["steps"]),
        swap_interval=int(p.get("swap_interval", 10)),
        record_interval=int(p.get("record_interval", 100)),
        burn_in=int(p.get("burn_in", 0)),
        seed=config.seed,
        proposal_std=float(p.get("proposal_std", np.pi / 8.0)),
    )
    runs = ptmc.run_batch(sets, params)
    for f, r in zip(files, runs):
        stem = f.stem
        rec = config.out_dir / f"records_{stem}.csv"
        ptmc.write_records_csv(rec, stem, r)
        outputs.append(rec)
        diag = config.out_dir / f"chains_{stem}.csv"
        with open(diag, "w") as fh:
            fh.write("chain_index,temperature,mean_energy,swap_rate_up\n")
            rates = r.swap_rates
            for ti, t in enumerate(r.temperatures):
                rate = rates[ti] if ti < len(rates) else float("nan")
                fh.write(
                    "%d,%.17g,%.17g,%.17g\n" % (ti, t, float(np.mean(r.energies[ti])), rate)
                )
        outputs.append(diag)


def _run_mftraj(config: RunConfig, outputs: list):
    p = config.params
    files = config.input_paths()
    schedule = _build_schedule(p.get("schedule"))
    kw = {}
    if "dt_ms" in p:
        kw["dt"] = float(p["dt_ms"])
    if "perturbation_std" in p:
        kw["perturbation_std"] = float(p["perturbation_std"])
    if "omega_c_sq" in p:
        kw["omega_c_sq"] = float(p["omega_c_sq"])
    if "superradiance_floor" in p:
        kw["superradiance_floor"] = float(p["superradiance_floor"])
    n_traj = int(p["n_traj"])

    def one(item):
        idx, path = item
        cset = cpl.read_json(path)
        params = mftraj.TrajectoryParams(seed=_child_seed(config.seed, idx), **kw)
        return mftraj.run_ensemble(cset, schedule, params, n_traj)

    if config.threads > 1 and len(files) > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(one, enumerate(files)))
    else:
        results = [one(it) for it in enumerate(files)]

    for f, res in zip(files, results):
        stem = f.stem
        spins = res.spins
        if spins:  # no records file when every shot stayed below the floor
            rec = config.out_dir / f"records_{stem}.csv"
            ptmc.write_records_csv(rec, stem, spins)
            outputs.append(rec)
        summary = config.out_dir / f"trajectories_{stem}.csv"
        with open(summary, "w") as fh:
            fh.write("trajectory,superradiant,readout_amplitude\n")
            for ti, o in enumerate(res.outcomes):
                fh.write("%d,%d,%.17g\n" % (ti, int(o.superradiant), o.readout_amplitude))
        outputs.append(summary)


def _run_analyze(config: RunConfig, outputs: list):
    p = config.params
    files = config.input_paths()
    bins = int(p.get("bins", 80))
    symmetrize = bool(p.get("symmetrize", True))
    q0 = float(p.get("q0", 0.26))
    extras = set(p.get("compute", []))
    summary = {"instances": []}
    hists = []
    for f in files:
        ensemble = ptmc.read_records_csv(f, chain_index=p.get("chain_index"))
        if len(ensemble) < 2:
            raise PipelineError(f"{f}: need at least 2 replicas, found {len(ensemble)}")
        h = replica.build_histogram(ensemble, bins=bins, symmetrize=symmetrize)
        hist_path = config.out_dir / f"hist_{f.stem}.csv"
        h.save(hist_path)
        outputs.extend([hist_path, Path(str(hist_path) + ".json")])
        hists.append(h)
        info = {
            "records": f.name,
            "n_replicas": len(ensemble),
            "n_pairs": h.n_pairs,
            "plateau": replica.plateau(h, q0=q0),
        }
        if "binder" in extras:
            q, _, _ = replica.pair_overlaps(ensemble)
            info["binder"] = replica.binder_ratio(q)
        if "ktri" in extras:
            kt = replica.ktri_distribution(ensemble, seed=0)
            info["ktri_mean"] = kt.mean
            info["ktri_mass_below_half"] = float(np.mean(kt.values < 0.5))
        if "dendrogram" in extras:
            dpath = config.out_dir / f"dendrogram_{f.stem}.json"
            replica.cluster(ensemble).to_json(dpath)
            outputs.append(dpath)
        if "magnetization" in extras:
            mpath = config.out_dir / f"magnetization_{f.stem}.csv"
            replica.magnetization(ensemble, bins=bins).save(mpath)
            outputs.extend([mpath, Path(str(mpath) + ".json")])
        if "bootstrap" in extras:
            boot = replica.bootstrap(
                ensemble, n_boot=int(p.get("n_boot", 100)), seed=0, bins=bins
            )
            info["bootstrap_mean_hellinger"] = boot.mean
        summary["instances"].append(info)
    if len(hists) > 1:
        agg = replica.parisi_aggregate(hists)
        agg_path = config.out_dir / "parisi.csv"
        agg.save(agg_path)
        outputs.extend([agg_path, Path(str(agg_path) + ".json")])
    spath = config.out_dir / "analysis.json"
    with open(spath, "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    outputs.append(spath)


def _run_rsb(config: RunConfig, outputs: list):
    p = config.params
    if "beta_j" in p:
        grid = [float(b) for b in p["beta_j"]]
    else:
        grid = list(np.linspace(float(p["start"]), float(p["stop"]), int(p["num"])))
    rows = rsb.sweep(grid, with_1rsb=bool(p.get("with_1rsb", False)), seed=config.seed or 0)
    path = config.out_dir / "rsb_sweep.csv"
    rsb.write_sweep_csv(path, rows)
    outputs.append(path)


def _run_aggregate(config: RunConfig, outputs: list):
    files = config.input_paths()
    hists = [replica.OverlapHistogram.load(f) for f in files]
    agg = replica.parisi_aggregate(hists)
    path = config.out_dir / "parisi.csv"
    agg.save(path)
    outputs.extend([path, Path(str(path) + ".json")])


def run_pipeline(config: RunConfig):
    """Execute one stage and write its manifest.  Returns the manifest dict."""
    t0 = time.monotonic()
    missing = [str(f) for f in config.input_paths() if not f.is_file()]
    if missing:
        raise FileNotFoundError(f"missing input files: {', '.join(missing)}")
    config.out_dir.mkdir(parents=True, exist_ok=True)
    outputs: list = []
    if config.mode == "couplings":
        _run_couplings(config, outputs)
    elif config.mode == "ensemble":
        outputs.extend(generate_ensemble(config))
    elif config.mode == "ptmc":
        _run_ptmc(config, outputs)
    elif config.mode == "mftraj":
        _run_mftraj(config, outputs)
    elif config.mode == "analyze":
        _run_analyze(config, outputs)
    elif config.mode == "rsb":
        _run_rsb(config, outputs)
    elif config.mode == "aggregate":
        _run_aggregate(config, outputs)
    else:  # pragma: no cover - schema forbids
        raise ConfigError(f"unknown mode {config.mode!r}")
    manifest = {
        "mode": config.mode,
        "seed": config.seed,
        "config_sha256": hashlib.sha256(config.config_text.encode()).hexdigest(),
        "inputs": {str(f): _sha256(f) for f in config.input_paths()},
        "outputs": {f.name: _sha256(f) for f in sorted(outputs, key=lambda q: q.name)},
        "versions": _versions(),
        "threads": config.threads,
        "wall_time_s": time.monotonic() - t0,
    }
    mpath = config.out_dir / "manifest.json"
    with open(mpath, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cavityglass",
        description="Disorder, Monte Carlo, trajectory, and replica-analysis pipelines.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in MODES:
        sp = sub.add_parser(name, help=f"run a {name} stage")
        sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--seed", type=int, default=None, help="master seed override")
        sp.add_argument("--out", default=None, help="output directory override")
        sp.add_argument("--threads", type=int, default=None, help="worker threads")
    args = parser.parse_args(argv)
    try:
        config = RunConfig.from_file(
            args.config, mode=args.command, seed=args.seed, out_dir=args.out, threads=args.threads
        )
        manifest = run_pipeline(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (mftraj.StepSizeError, PipelineError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 4
    n_out = len(manifest["outputs"])
    print(f"{config.mode}: wrote {n_out} files to {config.out_dir} (manifest.json added)")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
