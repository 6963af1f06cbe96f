"""Command-line driver: ``flowvmc <command> [flags]``.

Commands: ``optimize``, ``gaussian``, ``tdvp-demo``, ``variance-study`` and
``randham``. Every flag can also be given as a key of the JSON file passed
with ``--config``; explicit flags take precedence over the file. Exit codes
are 0 on success, 1 on runtime failure and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import torch

from . import io, svg, tdvp
from .diagnostics import is_bimodal, line_profile, mode_mass_ratio, principal_axis
from .errors import FlowVMCError
from .estimators import estimator_variance_sweep, variance_closed_forms
from .flow import FlowModel, FlowSpec, SymmetrizedFlow
from .gaussian import GaussianOptConfig, optimize_gaussian
from .hamiltonian import QuarticHamiltonian, oscillator, random_hamiltonian
from .numerics import RngStream
from .optimize import HISTORY_COLUMNS, OptimizerConfig, train

SEED_ENV = "FLOWVMC_SEED"
VARIANCE_COLUMNS = ("a", "var_canonical", "var_adjoint", "stderr_canonical", "stderr_adjoint", "exact_canonical", "exact_adjoint")
SWEEP_COLUMNS = ("seed", "energy", "stderr")
COMPARISON_COLUMNS = ("seed", "flow_energy", "flow_stderr", "gaussian_energy")

_COMMON = {"out": "results", "config": None, "seed": None, "seeds": None, "jobs": 1, "determinism": True}
DEFAULTS = {
    "optimize": {
        **_COMMON,
        "dim": None,
        "hamiltonian": "random",
        "hamiltonian_file": None,
        "iters": 2000,
        "batch": 1024,
        "lr": 0.01,
        "damping": 0.1,
        "adam": True,
        "natural": True,
        "adiabatic_k": 0.0,
        "reverse_adiabatic": False,
        "flow_distance_weight": 0.0,
        "fisher_samples": 0,
        "independent_fisher_batch": False,
        "final_samples": 8192,
        "layers": 4,
        "hidden": 64,
        "depth": 2,
        "symmetrize": False,
        "warm_start": False,
    },
    "gaussian": {**_COMMON, "dim": None, "hamiltonian": "random", "hamiltonian_file": None, "restarts": 5},
    "tdvp-demo": {**_COMMON, "theta0": [0.0, 0.0], "t_end": 5.0, "dt": 1e-3},
    "variance-study": {**_COMMON, "samples": 100000, "points": 13, "a_min": 0.25, "a_max": 4.0},
    "randham": {**_COMMON, "dim": None, "out": None},
}
REQUIRED = {"optimize": ("dim",), "gaussian": ("dim",), "randham": ("dim",)}


class UsageError(Exception):
    pass


def _seed_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid seed list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flowvmc", description="Flow-based variational Monte Carlo experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    def common(sp):
        sp.add_argument("--config", default=S, help="JSON file with flag values (flags win)")
        sp.add_argument("--out", default=S, help="output directory")
        sp.add_argument("--seed", type=int, default=S, help=f"seed (fallback: ${SEED_ENV}, then 0)")
        sp.add_argument("--seeds", type=_seed_list, default=S, help="comma-separated seed sweep")
        sp.add_argument("--jobs", type=int, default=S, help="worker threads for seed sweeps")
        sp.add_argument("--no-determinism", dest="determinism", action="store_false", default=S,
                        help="record wall-clock times in CSVs")
        return sp

    def hamiltonian_args(sp):
        sp.add_argument("--dim", type=int, default=S)
        sp.add_argument("--hamiltonian", choices=("random", "oscillator"), default=S)
        sp.add_argument("--hamiltonian-file", default=S, help="Hamiltonian JSON (overrides --hamiltonian)")

    o = common(sub.add_parser("optimize", help="train a flow wavefunction"))
    hamiltonian_args(o)
    o.add_argument("--iters", type=int, default=S)
    o.add_argument("--batch", type=int, default=S)
    o.add_argument("--lr", type=float, default=S)
    o.add_argument("--damping", type=float, default=S)
    o.add_argument("--no-adam", dest="adam", action="store_false", default=S)
    o.add_argument("--no-natural", dest="natural", action="store_false", default=S)
    o.add_argument("--adiabatic-k", type=float, default=S)
    o.add_argument("--reverse-adiabatic", action="store_true", default=S)
    o.add_argument("--flow-distance-weight", type=float, default=S)
    o.add_argument("--fisher-samples", type=int, default=S)
    o.add_argument("--independent-fisher-batch", action="store_true", default=S)
    o.add_argument("--final-samples", type=int, default=S)
    o.add_argument("--layers", type=int, default=S)
    o.add_argument("--hidden", type=int, default=S)
    o.add_argument("--depth", type=int, default=S)
    o.add_argument("--symmetrize", action="store_true", default=S)
    o.add_argument("--warm-start", action="store_true", default=S, help="start from the optimized Gaussian")

    g = common(sub.add_parser("gaussian", help="optimize the Gaussian baseline"))
    hamiltonian_args(g)
    g.add_argument("--restarts", type=int, default=S)

    t = common(sub.add_parser("tdvp-demo", help="projected real-time dynamics of the Gaussian family"))
    t.add_argument("--theta0", type=float, nargs=2, metavar=("LOG_A", "B"), default=S)
    t.add_argument("--t-end", type=float, default=S)
    t.add_argument("--dt", type=float, default=S)

    v = common(sub.add_parser("variance-study", help="estimator variance over the squeezed family"))
    v.add_argument("--samples", type=int, default=S)
    v.add_argument("--points", type=int, default=S)
    v.add_argument("--a-min", type=float, default=S)
    v.add_argument("--a-max", type=float, default=S)

    r = common(sub.add_parser("randham", help="write a random quartic Hamiltonian"))
    r.add_argument("--dim", type=int, default=S)
    return p


def resolve_config(command: str, flags: dict) -> dict:
    """Defaults, then the ``--config`` file, then explicit flags."""
    cfg = dict(DEFAULTS[command])
    path = flags.get("config")
    if path:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise UsageError("config file must hold a JSON object")
        data = {k.replace("-", "_"): v for k, v in data.items()}
        unknown = sorted(set(data) - set(cfg))
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        cfg.update(data)
    cfg.update({k: v for k, v in flags.items() if k != "command"})
    for key in REQUIRED.get(command, ()):
        if cfg.get(key) is None:
            raise UsageError(f"missing required setting '{key}'")
    if cfg.get("dim") is not None and int(cfg["dim"]) < 1:
        raise UsageError("dim must be >= 1")
    if int(cfg["jobs"]) < 1:
        raise UsageError("jobs must be >= 1")
    cfg["seeds"] = _resolve_seeds(cfg)
    cfg.pop("seed", None)
    cfg["command"] = command
    return cfg


def _resolve_seeds(cfg: dict) -> list[int]:
    if cfg.get("seeds"):
        seeds = cfg["seeds"]
        return _seed_list(seeds) if isinstance(seeds, str) else [int(s) for s in seeds]
    if cfg.get("seed") is not None:
        return [int(cfg["seed"])]
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return [int(env)]
        except ValueError as exc:
            raise UsageError(f"{SEED_ENV} must be an integer") from exc
    return [0]


def _run_dirs(cfg: dict) -> list[tuple[int, Path]]:
    out = Path(cfg["out"])
    seeds = cfg["seeds"]
    if len(seeds) == 1:
        return [(seeds[0], out)]
    return [(s, out / f"seed_{s}") for s in seeds]


def _echo(cfg: dict, run_dir: Path, seed: int) -> None:
    echo = {k: v for k, v in cfg.items() if k != "seeds"}
    echo.update(seed=seed, version=io.version_string())
    io.write_json(run_dir / "config.json", echo)


def _hamiltonian(cfg: dict, seed: int) -> QuarticHamiltonian:
    if cfg.get("hamiltonian_file"):
        H = QuarticHamiltonian.load(cfg["hamiltonian_file"])
        if H.dim != int(cfg["dim"]):
            raise UsageError(f"Hamiltonian file has dimension {H.dim}, not {cfg['dim']}")
        return H
    if cfg["hamiltonian"] == "oscillator":
        return oscillator(int(cfg["dim"]))
    if cfg["hamiltonian"] == "random":
        return random_hamiltonian(int(cfg["dim"]), seed)
    raise UsageError(f"unknown hamiltonian {cfg['hamiltonian']!r}")


def _sweep(cfg: dict, fn) -> list:
    runs = _run_dirs(cfg)
    if int(cfg["jobs"]) == 1 or len(runs) == 1:
        return [fn(seed, d) for seed, d in runs]
    with ThreadPoolExecutor(max_workers=int(cfg["jobs"])) as pool:
        return list(pool.map(lambda r: fn(*r), runs))


# -- optimize ----------------------------------------------------------------

def optimizer_config(cfg: dict, seed: int) -> OptimizerConfig:
    return OptimizerConfig(
        batch_size=int(cfg["batch"]),
        iterations=int(cfg["iters"]),
        lr=float(cfg["lr"]),
        damping=float(cfg["damping"]),
        use_adam=bool(cfg["adam"]),
        use_natural_gradient=bool(cfg["natural"]),
        adiabatic_k=float(cfg["adiabatic_k"]),
        reverse_adiabatic=bool(cfg["reverse_adiabatic"]),
        flow_distance_weight=float(cfg["flow_distance_weight"]),
        fisher_samples=int(cfg["fisher_samples"]),
        independent_fisher_batch=bool(cfg["independent_fisher_batch"]),
        final_samples=int(cfg["final_samples"]),
        gaussian_warm_start=bool(cfg["warm_start"]),
        seed=seed,
    )


def _validate_optimize(cfg: dict) -> None:
    try:
        optimizer_config(cfg, 0)
        FlowSpec(int(cfg["dim"]), int(cfg["layers"]), int(cfg["hidden"]), int(cfg["depth"]))
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc


def _density_outputs(model, run_dir: Path, rng: RngStream) -> dict:
    batch = model.sample(20000, rng)
    axis = principal_axis(batch.x)
    out = {"mode_mass_ratio": mode_mass_ratio(batch.x, axis)}
    reach = float(np.quantile(np.abs(batch.x @ axis), 0.999)) * 1.2
    s, rho = line_profile(model, axis, reach)
    out["bimodal"] = is_bimodal(s, rho)
    x2 = batch.x[:, :2]
    lim = float(np.abs(x2).max()) * 1.05
    edges = np.linspace(-lim, lim, 41)
    counts, _, _ = np.histogram2d(x2[:, 0], x2[:, 1], bins=[edges, edges])
    io.write_text(run_dir / "density.svg", svg.heatmap(counts, edges, edges, "sample density (x1, x2)"))
    return out


def run_optimize(cfg: dict, seed: int, run_dir: Path) -> dict:
    _echo(cfg, run_dir, seed)
    H = _hamiltonian(cfg, seed)
    spec = FlowSpec(H.dim, int(cfg["layers"]), int(cfg["hidden"]), int(cfg["depth"]))
    root = RngStream(seed)
    model = FlowModel(spec, rng=root.spawn(1))
    if cfg["symmetrize"]:
        model = SymmetrizedFlow(model)
    result = train(model, H, optimizer_config(cfg, seed))

    io.write_csv(run_dir / "history.csv", HISTORY_COLUMNS, result.history.rows(wall_clock=not cfg["determinism"]))
    result.model.save(run_dir / "model.json")
    H.save(run_dir / "hamiltonian.json")
    iters = np.arange(len(result.history))
    io.write_text(
        run_dir / "energy.svg",
        svg.line_plot({"energy": (iters, result.history.energy)}, "energy vs iteration", "iteration", "energy"),
    )
    summary = {
        "seed": seed,
        "dim": H.dim,
        "iterations": len(result.history),
        "energy_mc": result.energy.mean,
        "stderr_mc": result.energy.stderr,
        "samples_mc": result.energy.count,
        "seconds": result.seconds,
        "version": io.version_string(),
    }
    if result.exact_energy is not None:
        summary.update(energy=result.exact_energy, stderr=0.0, energy_method="quadrature")
    else:
        summary.update(energy=result.energy.mean, stderr=result.energy.stderr, energy_method="monte_carlo")
    if H.dim >= 2:
        summary.update(_density_outputs(result.model, run_dir, root.spawn(2)))
    io.write_json(run_dir / "summary.json", summary)
    return summary


def cmd_optimize(cfg: dict) -> int:
    _validate_optimize(cfg)
    summaries = _sweep(cfg, lambda seed, d: run_optimize(cfg, seed, d))
    if len(summaries) > 1:
        out = Path(cfg["out"])
        io.write_csv(out / "sweep.csv", SWEEP_COLUMNS, [(s["seed"], s["energy"], s["stderr"]) for s in summaries])
        io.write_text(out / "energies.svg", svg.box_plot({"flow": [s["energy"] for s in summaries]}, "final energies", "energy"))
    for s in summaries:
        print(f"seed {s['seed']}: energy {s['energy']:.6f} +- {s['stderr']:.6f} ({s['energy_method']})")
    return 0


# -- gaussian ----------------------------------------------------------------

def run_gaussian(cfg: dict, seed: int, run_dir: Path) -> dict:
    H = _hamiltonian(cfg, seed)
    result = optimize_gaussian(H, GaussianOptConfig(restarts=int(cfg["restarts"]), seed=seed))
    data = result.to_dict() | {"dim": H.dim, "version": io.version_string()}
    io.write_json(run_dir / "gaussian.json", data)
    flow = run_dir / "summary.json"
    if flow.exists():
        s = json.loads(flow.read_text())
        row = (seed, float(s["energy"]), float(s["stderr"]), result.energy)
        path = run_dir / "comparison.csv"
        previous = [tuple(r.values()) for r in io.read_csv(path)] if path.exists() else []
        io.write_csv(path, COMPARISON_COLUMNS, previous + [row])
    return data


def cmd_gaussian(cfg: dict) -> int:
    if int(cfg["restarts"]) < 1:
        raise UsageError("restarts must be >= 1")
    for seed, d in _run_dirs(cfg):
        (d / "config.json").exists() or _echo(cfg, d, seed)
    results = _sweep(cfg, lambda seed, d: run_gaussian(cfg, seed, d))
    for r in results:
        print(f"seed {r['seed']}: gaussian energy {r['energy']:.8f}")
    return 0


# -- tdvp-demo ---------------------------------------------------------------

def cmd_tdvp_demo(cfg: dict) -> int:
    dt, t_end = float(cfg["dt"]), float(cfg["t_end"])
    theta0 = [float(v) for v in cfg["theta0"]]
    if not dt > 0:
        raise UsageError("dt must be positive")
    if not t_end > 0:
        raise UsageError("t_end must be positive")
    if len(theta0) != 2 or not all(math.isfinite(v) for v in theta0):
        raise UsageError("theta0 needs two finite numbers")
    out = Path(cfg["out"])
    _echo(cfg, out, cfg["seeds"][0])
    vn = tdvp.integrate(tdvp.vn_rhs, theta0, t_end, dt)
    tdse = tdvp.integrate(tdvp.tdse_rhs, theta0, t_end, dt)
    imag = tdvp.imaginary_time_flow(theta0, t_end, dt)
    for name, traj in (("vn", vn), ("tdse", tdse), ("imaginary", imag)):
        io.write_csv(out / f"{name}.csv", tdvp.TRAJECTORY_COLUMNS, traj.rows())
    series = {
        "vN log a": (vn.t, vn.theta[:, 0]),
        "vN b": (vn.t, vn.theta[:, 1]),
        "TDSE log a": (tdse.t, tdse.theta[:, 0]),
        "TDSE b": (tdse.t, tdse.theta[:, 1]),
    }
    io.write_text(out / "tdvp.svg", svg.line_plot(series, "projected dynamics", "t", "parameter"))
    summary = {
        "theta0": theta0,
        "vn_max_departure": vn.max_departure(),
        "tdse_max_departure": tdse.max_departure(),
        "imaginary_final_theta": imag.theta[-1].tolist(),
        "imaginary_final_energy": float(imag.energy[-1]),
        "version": io.version_string(),
    }
    if t_end >= 1.0:
        k = int(np.argmin(np.abs(tdse.t - 1.0)))
        summary["tdse_b_departure_at_1"] = abs(float(tdse.theta[k, 1] - theta0[1]))
    io.write_json(out / "summary.json", summary)
    print(f"vN departure {summary['vn_max_departure']:.3e}; TDSE departure {summary['tdse_max_departure']:.3e}")
    return 0


# -- variance-study ----------------------------------------------------------

def cmd_variance_study(cfg: dict) -> int:
    samples, points = int(cfg["samples"]), int(cfg["points"])
    a_min, a_max = float(cfg["a_min"]), float(cfg["a_max"])
    if samples < 2 or points < 2 or not 0 < a_min < a_max:
        raise UsageError("need samples >= 2, points >= 2 and 0 < a_min < a_max")
    out = Path(cfg["out"])
    seed = cfg["seeds"][0]
    _echo(cfg, out, seed)
    grid = np.geomspace(a_min, a_max, points)
    rows = estimator_variance_sweep(grid, samples, RngStream(seed))
    table = []
    for r in rows:
        exact_c, exact_a = variance_closed_forms(r["a"])
        table.append((r["a"], r["var_canonical"], r["var_adjoint"], r["stderr_canonical"], r["stderr_adjoint"], exact_c, exact_a))
    io.write_csv(out / "variance.csv", VARIANCE_COLUMNS, table)
    a = np.array([r["a"] for r in rows])
    series = {
        "canonical": (a, np.array([r["var_canonical"] for r in rows])),
        "adjoint": (a, np.array([r["var_adjoint"] for r in rows])),
    }
    io.write_text(out / "variance.svg", svg.line_plot(series, "estimator variance", "a", "variance", logx=True))
    print(f"wrote {len(rows)} points to {out / 'variance.csv'}")
    return 0


# -- randham -----------------------------------------------------------------

def cmd_randham(cfg: dict) -> int:
    d = int(cfg["dim"])
    for seed in cfg["seeds"]:
        H = random_hamiltonian(d, seed)
        target = Path(cfg["out"] or f"hamiltonian_d{d}_s{seed}.json")
        if len(cfg["seeds"]) > 1:
            target = target.with_name(f"{target.stem}_s{seed}{target.suffix or '.json'}")
        target.parent.mkdir(parents=True, exist_ok=True)
        H.save(target)
        print(f"wrote {target}")
    return 0


COMMANDS = {
    "optimize": cmd_optimize,
    "gaussian": cmd_gaussian,
    "tdvp-demo": cmd_tdvp_demo,
    "variance-study": cmd_variance_study,
    "randham": cmd_randham,
}


def _configure_determinism(enabled: bool) -> None:
    if enabled:
        torch.use_deterministic_algorithms(True)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(ns.command, vars(ns))
        _configure_determinism(bool(cfg["determinism"]))
        start = time.perf_counter()
        code = COMMANDS[ns.command](cfg)
        print(f"done in {time.perf_counter() - start:.1f}s", file=sys.stderr)
        return code
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"flowvmc: error: {exc}", file=sys.stderr)
        return 2
    except (FlowVMCError, OSError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"flowvmc: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
