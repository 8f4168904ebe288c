"""Environmental-parameter sweeps and extraction of efficiency optima.

For every (lam, tau, T) grid point the initial excitation of site 1 is
propagated over the time window and the best transfer fidelity into site N
is recorded, along with the earliest time attaining it.  Optima over the
grid reproduce the tabulated open-system maxima/minima; the closed-system
maximum and the Boltzmann long-time fidelity serve as reference columns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from . import __version__
from .heom import (
    ConvergenceError,
    HeomPropagator,
    TimeGrid,
    closed_system_propagate,
    convergence_report,
    default_depth,
    trajectory_to_csv,
)
from .quantum import (
    BathSpec,
    DensityMatrix,
    SiteHamiltonian,
    boltzmann_equilibrium,
    fidelity,
    hamiltonian_to_csv,
)

__all__ = [
    "SweepGrid",
    "SweepRecord",
    "SweepResult",
    "OptimumRecord",
    "default_sweep_grid",
    "run_sweep",
    "extract_optimum",
    "closed_and_equilibrium_refs",
    "fidelity_surface",
    "save_sweep",
    "load_sweep_records",
]

#: Depth used for sweep points whose convergence corner does not settle.
DEPTH_CAP_DIMER = 25
DEPTH_CAP_TRIMER = 14


def _axis(rng: tuple[float, float, float], name: str) -> np.ndarray:
    lo, hi, step = rng
    if step <= 0:
        raise ValueError(f"{name} step must be positive")
    count = (hi - lo) / step
    if abs(count - round(count)) > 1e-9:
        raise ValueError(f"{name} step {step} does not divide the range [{lo}, {hi}]")
    return lo + step * np.arange(int(round(count)) + 1)


@dataclass(frozen=True)
class SweepGrid:
    """Cartesian (lam, tau, T) grid, each axis as (min, max, step)."""

    lambda_range: tuple[float, float, float]
    tau_range: tuple[float, float, float]
    temp_range: tuple[float, float, float]

    def __post_init__(self):
        # validate axes eagerly
        self.lambdas, self.taus, self.temps

    @property
    def lambdas(self) -> np.ndarray:
        return _axis(self.lambda_range, "lambda")

    @property
    def taus(self) -> np.ndarray:
        return _axis(self.tau_range, "tau")

    @property
    def temps(self) -> np.ndarray:
        return _axis(self.temp_range, "temperature")

    @property
    def size(self) -> int:
        return self.lambdas.size * self.taus.size * self.temps.size

    def points(self) -> list[BathSpec]:
        """All grid points, lambda-major then tau then temperature."""
        return [
            BathSpec(lam=float(l), tau=float(t), temperature=float(T))
            for l in self.lambdas
            for t in self.taus
            for T in self.temps
        ]


def default_sweep_grid(n_sites: int, reduced: bool = False) -> SweepGrid:
    """The reference parameter grids: dimer steps (10 cm^-1, 25 fs, 2.5 K),
    trimer steps (20 cm^-1, 50 fs, 5 K).  reduced doubles the lambda and tau
    steps for a faster scan that still contains all tabulated optima."""
    if n_sites == 2:
        grid = SweepGrid((20.0, 220.0, 10.0), (50.0, 500.0, 25.0), (250.0, 300.0, 2.5))
    else:
        grid = SweepGrid((20.0, 220.0, 20.0), (50.0, 500.0, 50.0), (250.0, 300.0, 5.0))
    if reduced:
        lo, hi, step = grid.lambda_range
        tlo, thi, tstep = grid.tau_range
        grid = SweepGrid((lo, hi, 2 * step), (tlo, thi, 2 * tstep), grid.temp_range)
    return grid


@dataclass(frozen=True)
class SweepRecord:
    """Best transfer fidelity at one bath point: the maximum over the time
    window and the earliest time attaining it, plus the full series."""

    bath: BathSpec
    best_time: float
    best_fidelity: float
    fidelity_series: np.ndarray
    depth: int


@dataclass(frozen=True)
class SweepResult:
    """All records of a sweep in grid order, with the common time axis."""

    system: SiteHamiltonian
    grid: SweepGrid
    timegrid: TimeGrid
    depth: int
    times: np.ndarray
    records: list[SweepRecord]
    failures: list[tuple[BathSpec, str]] = field(default_factory=list)
    unsettled_corners: list[BathSpec] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return not self.failures


@dataclass(frozen=True)
class OptimumRecord:
    """A summary-table row: the extremal fidelity with its grid coordinates,
    peak time and reference values."""

    mode: str
    fidelity: float
    lam: float
    tau: float
    temperature: float
    time: float
    f_cs_max: float
    f_eq: float
    nonmarkovianity: float | None = None


def _sweep_depth(
    system: SiteHamiltonian,
    grid: SweepGrid,
    timegrid: TimeGrid,
    depth_cap: int,
) -> tuple[int, list[BathSpec]]:
    """Uniform sweep depth: the convergence harness runs at the four
    (lam, tau) corners at the highest grid temperature (the strongest
    coupling); corners that cannot settle by the cap contribute the cap."""
    rho0 = DensityMatrix.site_excitation(system.n_sites, 1)
    t_hot = float(grid.temps[-1])
    best = default_depth(system.n_sites)
    unsettled = []
    for lam in (grid.lambdas[0], grid.lambdas[-1]):
        for tau in (grid.taus[0], grid.taus[-1]):
            corner = BathSpec(lam=float(lam), tau=float(tau), temperature=t_hot)
            try:
                report = convergence_report(
                    system, corner, rho0, timegrid, max_depth=depth_cap
                )
                best = max(best, report.depth)
            except ConvergenceError:
                unsettled.append(corner)
                best = depth_cap
    return best, unsettled


def _point_name(bath: BathSpec) -> str:
    return f"lam{bath.lam:g}_tau{bath.tau:g}_T{bath.temperature:g}"


def _sweep_point(
    system: SiteHamiltonian,
    bath: BathSpec,
    timegrid: TimeGrid,
    depth: int,
    trajectory_dir: Path | None = None,
) -> SweepRecord:
    propagator = HeomPropagator(system, bath, timegrid, depth)
    rho0 = DensityMatrix.site_excitation(system.n_sites, 1)
    traj = propagator.propagate(rho0)
    if trajectory_dir is not None:
        with open(Path(trajectory_dir) / (_point_name(bath) + ".csv"), "w") as fh:
            trajectory_to_csv(traj, fh)
    series = traj.fidelity_series()
    k = int(np.argmax(series))
    return SweepRecord(
        bath=bath,
        best_time=float(traj.times[k]),
        best_fidelity=float(series[k]),
        fidelity_series=series,
        depth=depth,
    )


def run_sweep(
    system: SiteHamiltonian,
    grid: SweepGrid,
    timegrid: TimeGrid,
    depth: int | None = None,
    depth_cap: int | None = None,
    workers: int = 1,
    trajectory_dir: str | Path | None = None,
) -> SweepResult:
    """Propagate every grid point at a uniform, corner-converged depth.

    Point failures are collected rather than propagated so a partial sweep
    can be inspected and resumed.  With trajectory_dir set, every point's
    full trajectory CSV is written as it is computed.
    """
    if depth_cap is None:
        depth_cap = DEPTH_CAP_DIMER if system.n_sites == 2 else DEPTH_CAP_TRIMER
    unsettled: list[BathSpec] = []
    if depth is None:
        depth, unsettled = _sweep_depth(system, grid, timegrid, depth_cap)

    points = grid.points()
    if trajectory_dir is not None:
        Path(trajectory_dir).mkdir(parents=True, exist_ok=True)

    def one(bath: BathSpec):
        try:
            return _sweep_point(system, bath, timegrid, depth, trajectory_dir)
        except Exception as exc:  # noqa: BLE001 - failure is data here
            return (bath, f"{type(exc).__name__}: {exc}")

    if workers > 1:
        outcomes = Parallel(n_jobs=workers, batch_size=16)(delayed(one)(b) for b in points)
    else:
        outcomes = [one(b) for b in points]

    records = [o for o in outcomes if isinstance(o, SweepRecord)]
    failures = [o for o in outcomes if not isinstance(o, SweepRecord)]
    return SweepResult(
        system=system,
        grid=grid,
        timegrid=timegrid,
        depth=depth,
        times=timegrid.output_times,
        records=records,
        failures=failures,
        unsettled_corners=unsettled,
    )


def extract_optimum(result: SweepResult, mode: str) -> OptimumRecord:
    """The grid point with the globally maximal (mode='max') or minimal
    (mode='min') time-maximized fidelity.  Ties resolve to the smallest
    (lam, tau, T, t), which is the grid iteration order."""
    if mode not in ("max", "min"):
        raise ValueError(f"mode must be 'max' or 'min', got {mode!r}")
    if not result.records:
        raise ValueError("sweep produced no records")
    if not result.complete:
        raise ValueError(
            f"sweep is incomplete ({len(result.failures)} failed points); "
            "optimum would be unreliable"
        )
    best = result.records[0]
    for rec in result.records[1:]:
        if (mode == "max" and rec.best_fidelity > best.best_fidelity) or (
            mode == "min" and rec.best_fidelity < best.best_fidelity
        ):
            best = rec
    f_cs, f_eq = closed_and_equilibrium_refs(
        result.system, best.bath.temperature, result.timegrid
    )
    return OptimumRecord(
        mode=mode,
        fidelity=best.best_fidelity,
        lam=best.bath.lam,
        tau=best.bath.tau,
        temperature=best.bath.temperature,
        time=best.best_time,
        f_cs_max=f_cs,
        f_eq=f_eq,
    )


def closed_and_equilibrium_refs(
    system: SiteHamiltonian, temperature: float, timegrid: TimeGrid
) -> tuple[float, float]:
    """Closed-system maximal fidelity over the window and the Boltzmann
    long-time fidelity at the given temperature."""
    rho0 = DensityMatrix.site_excitation(system.n_sites, 1)
    closed = closed_system_propagate(system, rho0, timegrid)
    f_cs = float(np.max(closed.fidelity_series()))
    f_eq = fidelity(boltzmann_equilibrium(system, temperature), system.n_sites)
    return f_cs, f_eq


def fidelity_surface(result: SweepResult) -> np.ndarray:
    """Fidelity maximized over temperature and time on the (lam, tau) plane,
    shape (n_lambda, n_tau); the data behind the reference surfaces."""
    lams, taus = result.grid.lambdas, result.grid.taus
    surface = np.full((lams.size, taus.size), -np.inf)
    li = {v: i for i, v in enumerate(lams)}
    ti = {v: i for i, v in enumerate(taus)}
    for rec in result.records:
        i, j = li[rec.bath.lam], ti[rec.bath.tau]
        if rec.best_fidelity > surface[i, j]:
            surface[i, j] = rec.best_fidelity
    return surface


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def save_sweep(result: SweepResult, out_dir: str | Path) -> Path:
    """Persist a sweep as a directory: manifest.json, records.csv and the
    (lam, tau) fidelity surface."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    manifest = {
        "version": __version__,
        "hamiltonian_csv": hamiltonian_to_csv(result.system),
        "grid": {
            "lambda_range": list(result.grid.lambda_range),
            "tau_range": list(result.grid.tau_range),
            "temp_range": list(result.grid.temp_range),
        },
        "timegrid": {
            "t_start": result.timegrid.t_start,
            "t_end": result.timegrid.t_end,
            "dt": result.timegrid.dt,
            "output_stride": result.timegrid.output_stride,
        },
        "depth": result.depth,
        "complete": result.complete,
        "n_records": len(result.records),
        "failures": [
            {"lambda": b.lam, "tau": b.tau, "T": b.temperature, "error": msg}
            for b, msg in result.failures
        ],
        "unsettled_corners": [
            {"lambda": b.lam, "tau": b.tau, "T": b.temperature}
            for b in result.unsettled_corners
        ],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))

    with open(out / "records.csv", "w") as fh:
        fh.write("lambda_cm1,tau_fs,T_K,best_t_fs,best_F,depth\n")
        for rec in result.records:
            fh.write(
                ",".join(
                    [
                        _fmt(rec.bath.lam),
                        _fmt(rec.bath.tau),
                        _fmt(rec.bath.temperature),
                        _fmt(rec.best_time),
                        _fmt(rec.best_fidelity),
                        str(rec.depth),
                    ]
                )
                + "\n"
            )

    surface = fidelity_surface(result)
    with open(out / "surface.csv", "w") as fh:
        fh.write("lambda_cm1,tau_fs,F_max\n")
        for i, lam in enumerate(result.grid.lambdas):
            for j, tau in enumerate(result.grid.taus):
                fh.write(f"{_fmt(lam)},{_fmt(tau)},{_fmt(surface[i, j])}\n")
    return out


def load_sweep_records(path: str | Path) -> list[dict]:
    """Strict reader for records.csv (fixed column set, '.' decimals)."""
    lines = Path(path, "records.csv").read_text().strip().splitlines()
    header = lines[0].split(",")
    expected = ["lambda_cm1", "tau_fs", "T_K", "best_t_fs", "best_F", "depth"]
    if header != expected:
        raise ValueError(f"unexpected records.csv columns {header}")
    rows = []
    for ln in lines[1:]:
        cells = ln.split(",")
        rows.append(
            {
                "lambda": float(cells[0]),
                "tau": float(cells[1]),
                "T": float(cells[2]),
                "best_t": float(cells[3]),
                "best_F": float(cells[4]),
                "depth": int(cells[5]),
            }
        )
    return rows
