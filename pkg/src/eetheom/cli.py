"""Command-line interface.

Commands: propagate (one bath point, trajectory CSV), sweep (parameter
grid, optimum summary rows), blp (non-Markovianity at a bath point),
blpmap (exploratory N over a grid), equilibrium (Boltzmann reference) and
convergence (depth/step report).  All numeric output uses 12 significant
digits; exit code 0 means every requested computation completed and passed
its internal checks.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .blp import (
    OrthogonalPair,
    blp_estimate,
    evaluate_pair,
    sigma_integral,
    trace_distance_to_csv,
)
from .config import ConfigError, RunConfig
from .heom import (
    closed_system_propagate,
    convergence_report,
    heom_propagate,
    resolve_depth,
    trajectory_to_csv,
)
from .quantum import DensityMatrix, boltzmann_equilibrium, fidelity
from .sweep import extract_optimum, run_sweep, save_sweep


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def _base_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    if args.system is not None:
        cfg.system = args.system
    lam = getattr(args, "lam", None)
    tau = getattr(args, "tau", None)
    temp = getattr(args, "temp", None)
    if lam is not None or tau is not None or temp is not None:
        bath = dict(cfg.bath or {})
        if lam is not None:
            bath["lambda"] = lam
        if tau is not None:
            bath["tau"] = tau
        if temp is not None:
            bath["temperature"] = temp
        cfg.bath = bath
        cfg.grid = None
    if getattr(args, "depth", None) is not None:
        cfg.depth = args.depth
        cfg.auto_converge = False
    if getattr(args, "dt", None) is not None:
        cfg.time = {**cfg.time, "dt": args.dt}
    if getattr(args, "t_end", None) is not None:
        cfg.time = {**cfg.time, "t_end": args.t_end}
    if getattr(args, "samples", None) is not None:
        cfg.samples = args.samples
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "workers", None) is not None:
        cfg.workers = args.workers
    if getattr(args, "out", None) is not None:
        cfg.out = args.out
    return cfg


def _depth_for(cfg: RunConfig, hamiltonian, bath, grid) -> int:
    if cfg.depth is not None:
        return cfg.depth
    if cfg.auto_converge:
        return resolve_depth(hamiltonian, bath, grid)
    from .heom import default_depth

    return default_depth(hamiltonian.n_sites)


def cmd_propagate(args: argparse.Namespace) -> int:
    cfg = _base_config(args)
    hamiltonian = cfg.hamiltonian()
    grid = cfg.timegrid()
    out = cfg.output_dir("propagate")
    out.mkdir(parents=True, exist_ok=True)

    rho0 = DensityMatrix.site_excitation(hamiltonian.n_sites, 1)
    if args.closed:
        traj = closed_system_propagate(hamiltonian, rho0, grid)
        depth = None
    else:
        bath = cfg.bath_point()
        depth = _depth_for(cfg, hamiltonian, bath, grid)
        traj = heom_propagate(hamiltonian, bath, rho0, grid, depth)
    traj.validate()

    csv_path = out / "trajectory.csv"
    with open(csv_path, "w") as fh:
        trajectory_to_csv(traj, fh)

    series = traj.fidelity_series()
    k = int(np.argmax(series))
    summary = {
        "peak_fidelity": float(series[k]),
        "peak_time_fs": float(traj.times[k]),
        "final_fidelity": float(series[-1]),
        "depth": depth,
        "closed_system": bool(args.closed),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(f"peak fidelity {_fmt(series[k])} at t = {_fmt(traj.times[k])} fs")
    print(f"trajectory written to {csv_path}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _base_config(args)
    hamiltonian = cfg.hamiltonian()
    grid = cfg.sweep_grid(hamiltonian.n_sites)
    timegrid = cfg.timegrid()
    out = cfg.output_dir("sweep")

    result = run_sweep(
        hamiltonian,
        grid,
        timegrid,
        depth=cfg.depth,
        workers=cfg.workers,
        trajectory_dir=Path(out) / "trajectories" if args.save_trajectories else None,
    )
    save_sweep(result, out)
    if not result.complete:
        print(
            f"sweep incomplete: {len(result.failures)} of {grid.size} points failed; "
            f"partial results and a resumable manifest are in {out}",
            file=sys.stderr,
        )
        return 1

    header = "mode,F,lambda_cm1,tau_fs,T_K,t_fs,F_CS_max,F_eq"
    print(header)
    rows = {}
    for mode in ("max", "min"):
        opt = extract_optimum(result, mode)
        print(
            ",".join(
                [
                    mode,
                    _fmt(opt.fidelity),
                    _fmt(opt.lam),
                    _fmt(opt.tau),
                    _fmt(opt.temperature),
                    _fmt(opt.time),
                    _fmt(opt.f_cs_max),
                    _fmt(opt.f_eq),
                ]
            )
        )
        rows[mode] = {
            "fidelity": opt.fidelity,
            "lambda": opt.lam,
            "tau": opt.tau,
            "temperature": opt.temperature,
            "time_fs": opt.time,
            "F_CS_max": opt.f_cs_max,
            "F_eq": opt.f_eq,
        }
    (Path(out) / "summary.json").write_text(json.dumps(rows, indent=2))
    print(f"sweep written to {out}")
    return 0


def _designated_pair(n_sites: int, site_a: int, site_b: int) -> OrthogonalPair:
    return OrthogonalPair(
        rho_a=DensityMatrix.site_excitation(n_sites, site_a),
        rho_b=DensityMatrix.site_excitation(n_sites, site_b),
        split_rank=1,
        eigs_a=(1.0,),
        eigs_b=(1.0,),
        angles=(0.0,) * (1 if n_sites == 2 else 3),
        phases=(0.0,) * (2 if n_sites == 2 else 5),
    )


def cmd_blp(args: argparse.Namespace) -> int:
    cfg = _base_config(args)
    hamiltonian = cfg.hamiltonian()
    bath = cfg.bath_point()
    grid = cfg.timegrid()
    depth = _depth_for(cfg, hamiltonian, bath, grid)

    if args.pair is not None:
        site_a, site_b = args.pair
        pair = _designated_pair(hamiltonian.n_sites, site_a, site_b)
        td = evaluate_pair(hamiltonian, bath, grid, pair, depth)
        value = sigma_integral(td)
        print(f"sigma integral for pair (|{site_a}><{site_a}|, |{site_b}><{site_b}|): {_fmt(value)}")
        if args.dump_best:
            out = cfg.output_dir("blp")
            out.mkdir(parents=True, exist_ok=True)
            with open(out / "trace_distance.csv", "w") as fh:
                trace_distance_to_csv(td, fh)
            print(f"D(t) written to {out / 'trace_distance.csv'}")
        return 0

    if cfg.samples < 1:
        raise ConfigError("samples: must be at least 1")
    est = blp_estimate(
        hamiltonian,
        bath,
        grid,
        sample_size=cfg.samples,
        rng_seed=cfg.seed,
        depth=depth,
        workers=cfg.workers,
    )
    print(f"N = {_fmt(est.value)}")
    print(f"samples = {est.sample_size}, seed = {est.seed}, depth = {est.depth}")
    print(f"best pair [{est.best_index}]: {est.best_pair.describe()}")
    if args.dump_best:
        out = cfg.output_dir("blp")
        out.mkdir(parents=True, exist_ok=True)
        td = evaluate_pair(hamiltonian, bath, grid, est.best_pair, depth)
        with open(out / "trace_distance.csv", "w") as fh:
            trace_distance_to_csv(td, fh)
        report = {
            "N": est.value,
            "samples": est.sample_size,
            "seed": est.seed,
            "depth": est.depth,
            "best_index": est.best_index,
            "best_pair": est.best_pair.describe(),
        }
        (out / "blp.json").write_text(json.dumps(report, indent=2))
        print(f"D(t) of the best pair written to {out / 'trace_distance.csv'}")
    return 0


def cmd_blpmap(args: argparse.Namespace) -> int:
    """Exploratory map of N over the sweep grid (reduced sample sizes)."""
    cfg = _base_config(args)
    hamiltonian = cfg.hamiltonian()
    grid = cfg.sweep_grid(hamiltonian.n_sites)
    timegrid = cfg.timegrid()
    out = cfg.output_dir("blpmap")
    out.mkdir(parents=True, exist_ok=True)

    path = out / "nonmarkovianity.csv"
    with open(path, "w") as fh:
        fh.write("lambda_cm1,tau_fs,T_K,N,depth\n")
        for bath in grid.points():
            depth = cfg.depth if cfg.depth is not None else resolve_depth(
                hamiltonian, bath, timegrid
            )
            est = blp_estimate(
                hamiltonian, bath, timegrid,
                sample_size=cfg.samples, rng_seed=cfg.seed,
                depth=depth, workers=cfg.workers,
            )
            fh.write(
                f"{_fmt(bath.lam)},{_fmt(bath.tau)},{_fmt(bath.temperature)},"
                f"{_fmt(est.value)},{est.depth}\n"
            )
    print(f"N map written to {path}")
    return 0


def cmd_equilibrium(args: argparse.Namespace) -> int:
    cfg = _base_config(args)
    hamiltonian = cfg.hamiltonian()
    temperature = args.temp if args.temp is not None else 250.0
    rho = boltzmann_equilibrium(hamiltonian, temperature)
    pops = np.real(np.diag(rho.matrix))
    f_eq = fidelity(rho, hamiltonian.n_sites)
    print("site,population")
    for i, p in enumerate(pops, start=1):
        print(f"{i},{_fmt(p)}")
    print(f"F_eq = {_fmt(f_eq)} at T = {_fmt(temperature)} K")
    return 0


def cmd_convergence(args: argparse.Namespace) -> int:
    cfg = _base_config(args)
    hamiltonian = cfg.hamiltonian()
    bath = cfg.bath_point()
    grid = cfg.timegrid()
    rho0 = DensityMatrix.site_excitation(hamiltonian.n_sites, 1)
    report = convergence_report(hamiltonian, bath, rho0, grid, start_depth=cfg.depth)
    print(f"depth = {report.depth} (residual {_fmt(report.depth_residual)})")
    print(f"dt = {_fmt(report.dt)} fs (residual {_fmt(report.dt_residual)})")
    return 0


def _add_common(p: argparse.ArgumentParser, bath: bool = True) -> None:
    p.add_argument("--system", help="named system (FMO-2, E-2, C-2, FMO-3, E-3, C-3)")
    p.add_argument("--config", help="JSON config file; flags override its fields")
    if bath:
        p.add_argument("--lambda", dest="lam", type=float, help="reorganization energy (cm^-1)")
        p.add_argument("--tau", type=float, help="bath correlation time (fs)")
        p.add_argument("--temp", type=float, help="temperature (K)")
    p.add_argument("--depth", type=int, help="hierarchy truncation depth (default: auto-converge)")
    p.add_argument("--dt", type=float, help="integrator step (fs)")
    p.add_argument("--t-end", dest="t_end", type=float, help="end of the time window (fs)")
    p.add_argument("--workers", type=int, help="parallel workers")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eetheom",
        description="Excitation-energy-transfer dynamics, efficiency optima and non-Markovianity",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("propagate", help="propagate one bath point and write the trajectory CSV")
    _add_common(p)
    p.add_argument("--closed", action="store_true", help="closed-system (unitary) propagation")
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("sweep", help="sweep the (lambda, tau, T) grid and report the optima")
    _add_common(p, bath=False)
    p.add_argument(
        "--save-trajectories", action="store_true",
        help="also persist every grid point's full trajectory CSV",
    )
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("blp", help="estimate non-Markovianity at one bath point")
    _add_common(p)
    p.add_argument("--samples", type=int, help="number of sampled initial pairs")
    p.add_argument("--seed", type=int, help="RNG seed")
    p.add_argument(
        "--pair", nargs=2, type=int, metavar=("I", "J"),
        help="evaluate only the designated site pair |I><I|, |J><J|",
    )
    p.add_argument("--dump-best", action="store_true", help="write D(t) of the best pair")
    p.set_defaults(func=cmd_blp)

    p = sub.add_parser("blpmap", help="exploratory N map over the sweep grid")
    _add_common(p, bath=False)
    p.add_argument("--samples", type=int, help="pairs per grid point")
    p.add_argument("--seed", type=int, help="RNG seed")
    p.set_defaults(func=cmd_blpmap)

    p = sub.add_parser("equilibrium", help="Boltzmann equilibrium populations and F_eq")
    p.add_argument("--system", help="named system")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--temp", type=float, help="temperature (K), default 250")
    p.set_defaults(func=cmd_equilibrium)

    p = sub.add_parser("convergence", help="settle hierarchy depth and step size at a bath point")
    _add_common(p)
    p.set_defaults(func=cmd_convergence)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
