import json

import numpy as np
import pytest

from eetheom.heom import TimeGrid, heom_propagate
from eetheom.quantum import BathSpec, DensityMatrix, build_site_hamiltonian
from eetheom.sweep import (
    OptimumRecord,
    SweepGrid,
    SweepRecord,
    SweepResult,
    closed_and_equilibrium_refs,
    default_sweep_grid,
    extract_optimum,
    fidelity_surface,
    load_sweep_records,
    run_sweep,
    save_sweep,
)

GRID = TimeGrid()


# ------------------------------------------------------------------------ grid

def test_default_dimer_grid_point_count():
    grid = default_sweep_grid(2)
    assert grid.lambdas.size == 21
    assert grid.taus.size == 19
    assert grid.temps.size == 21
    assert grid.size == 8379


def test_default_trimer_grid_point_count():
    grid = default_sweep_grid(3)
    assert (grid.lambdas.size, grid.taus.size, grid.temps.size) == (11, 10, 11)
    assert grid.size == 1210


def test_reduced_dimer_grid_still_contains_reference_optima():
    grid = default_sweep_grid(2, reduced=True)
    assert grid.size == 11 * 10 * 21
    for lam in (20.0, 80.0, 220.0):
        assert lam in grid.lambdas
    assert 50.0 in grid.taus
    assert 250.0 in grid.temps


def test_grid_rejects_nondividing_step():
    with pytest.raises(ValueError, match="does not divide"):
        SweepGrid((20.0, 220.0, 30.0), (50.0, 500.0, 25.0), (250.0, 300.0, 2.5))


def test_grid_point_order_is_lexicographic():
    grid = SweepGrid((10.0, 20.0, 10.0), (50.0, 100.0, 50.0), (250.0, 250.0, 5.0))
    points = grid.points()
    assert [(p.lam, p.tau) for p in points] == [
        (10.0, 50.0), (10.0, 100.0), (20.0, 50.0), (20.0, 100.0),
    ]


# ----------------------------------------------------------------------- sweep

@pytest.fixture(scope="module")
def small_sweep():
    system = build_site_hamiltonian("E-2")
    grid = SweepGrid((20.0, 120.0, 100.0), (50.0, 100.0, 50.0), (250.0, 250.0, 2.5))
    return run_sweep(system, grid, GRID, depth=8)


def test_sweep_is_complete_and_ordered(small_sweep):
    assert small_sweep.complete
    assert len(small_sweep.records) == 4
    assert [r.bath.lam for r in small_sweep.records] == [20.0, 20.0, 120.0, 120.0]


def test_sweep_record_consistency(small_sweep):
    for rec in small_sweep.records:
        assert rec.best_fidelity == np.max(rec.fidelity_series)
        k = int(np.argmax(rec.fidelity_series))
        assert rec.best_time == small_sweep.times[k]


def test_single_point_sweep_equals_direct_propagation():
    system = build_site_hamiltonian("FMO-2")
    grid = SweepGrid((20.0, 20.0, 10.0), (50.0, 50.0, 25.0), (250.0, 250.0, 2.5))
    result = run_sweep(system, grid, GRID, depth=9)
    assert len(result.records) == 1
    rec = result.records[0]

    traj = heom_propagate(system, BathSpec(20.0, 50.0, 250.0), DensityMatrix.site_excitation(2, 1), GRID, 9)
    series = traj.fidelity_series()
    assert np.array_equal(rec.fidelity_series, series)
    assert rec.best_fidelity == np.max(series)


def test_rerun_point_is_bit_identical():
    system = build_site_hamiltonian("E-2")
    grid = SweepGrid((20.0, 20.0, 10.0), (50.0, 50.0, 25.0), (250.0, 250.0, 2.5))
    a = run_sweep(system, grid, GRID, depth=8).records[0]
    b = run_sweep(system, grid, GRID, depth=8).records[0]
    assert a.best_fidelity == b.best_fidelity
    assert np.array_equal(a.fidelity_series, b.fidelity_series)


def test_extract_optimum_max_and_min(small_sweep):
    best = extract_optimum(small_sweep, "max")
    worst = extract_optimum(small_sweep, "min")
    assert best.fidelity >= worst.fidelity
    assert best.fidelity == max(r.best_fidelity for r in small_sweep.records)
    assert worst.fidelity == min(r.best_fidelity for r in small_sweep.records)
    assert best.mode == "max" and worst.mode == "min"
    # E-2 prefers the weakest coupling
    assert best.lam == 20.0


def test_extract_optimum_tie_breaks_lexicographically():
    system = build_site_hamiltonian("E-2")
    grid = SweepGrid((20.0, 40.0, 20.0), (50.0, 50.0, 25.0), (250.0, 250.0, 2.5))
    times = GRID.output_times
    series = np.zeros(times.size)
    series[10] = 0.5
    records = [
        SweepRecord(BathSpec(lam, 50.0, 250.0), times[10], 0.5, series, 8)
        for lam in (20.0, 40.0)
    ]
    result = SweepResult(system, grid, GRID, 8, times, records)
    assert extract_optimum(result, "max").lam == 20.0
    assert extract_optimum(result, "min").lam == 20.0


def test_extract_optimum_rejects_incomplete():
    system = build_site_hamiltonian("E-2")
    grid = SweepGrid((20.0, 20.0, 10.0), (50.0, 50.0, 25.0), (250.0, 250.0, 2.5))
    result = SweepResult(
        system, grid, GRID, 8, GRID.output_times, [],
        failures=[(BathSpec(20.0, 50.0, 250.0), "boom")],
    )
    with pytest.raises(ValueError, match="no records"):
        extract_optimum(result, "max")
    with pytest.raises(ValueError, match="'max' or 'min'"):
        extract_optimum(result, "best")


def test_sweep_records_failures_instead_of_raising():
    system = build_site_hamiltonian("C-2")
    # dt far too coarse: every point diverges, sweep reports rather than raises
    coarse = TimeGrid(t_end=1000.0, dt=50.0, output_stride=1)
    grid = SweepGrid((220.0, 220.0, 10.0), (50.0, 50.0, 25.0), (300.0, 300.0, 2.5))
    result = run_sweep(system, grid, coarse, depth=8)
    assert not result.complete
    assert len(result.failures) == 1
    assert "diverged" in result.failures[0][1]


# ------------------------------------------------------------------ references

def test_reference_values_c2():
    f_cs, f_eq = closed_and_equilibrium_refs(build_site_hamiltonian("C-2"), 250.0, GRID)
    assert f_cs == pytest.approx(0.81, abs=0.01)
    assert f_eq == pytest.approx(0.82, abs=0.01)


def test_reference_values_fmo3():
    f_cs, f_eq = closed_and_equilibrium_refs(build_site_hamiltonian("FMO-3"), 250.0, GRID)
    assert f_cs == pytest.approx(0.29, abs=0.01)
    assert f_eq == pytest.approx(0.80, abs=0.01)


def test_reference_values_static_dimer():
    h = build_site_hamiltonian(energies=[0.0, 0.0], couplings=np.zeros((2, 2)))
    f_cs, f_eq = closed_and_equilibrium_refs(h, 250.0, GRID)
    assert f_cs == 0.0
    assert f_eq == pytest.approx(np.sqrt(0.5), abs=1e-12)


# ----------------------------------------------------------------- persistence

def test_surface_maximum_matches_optimum(small_sweep):
    surface = fidelity_surface(small_sweep)
    assert surface.shape == (2, 2)
    assert np.max(surface) == extract_optimum(small_sweep, "max").fidelity


def test_save_and_reload_sweep(tmp_path, small_sweep):
    out = save_sweep(small_sweep, tmp_path / "sweepdir")
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["complete"] is True
    assert manifest["depth"] == 8
    assert manifest["n_records"] == 4

    rows = load_sweep_records(out)
    assert len(rows) == 4
    for row, rec in zip(rows, small_sweep.records):
        assert row["lambda"] == rec.bath.lam
        assert row["best_F"] == float(f"{rec.best_fidelity:.12g}")

    surface_lines = (out / "surface.csv").read_text().strip().splitlines()
    assert surface_lines[0] == "lambda_cm1,tau_fs,F_max"
    assert len(surface_lines) == 1 + 4


def test_sweep_can_persist_full_trajectories(tmp_path):
    system = build_site_hamiltonian("E-2")
    grid = SweepGrid((20.0, 20.0, 10.0), (50.0, 50.0, 25.0), (250.0, 250.0, 2.5))
    short = TimeGrid(t_end=50.0, dt=0.5, output_stride=5)
    run_sweep(system, grid, short, depth=6, trajectory_dir=tmp_path / "trajs")
    files = list((tmp_path / "trajs").glob("*.csv"))
    assert len(files) == 1
    header = files[0].read_text().splitlines()[0].split(",")
    assert header[0] == "t_fs" and "C_e" in header and "re_rho_12" in header


def test_load_rejects_wrong_columns(tmp_path):
    out = tmp_path / "bad"
    out.mkdir()
    (out / "records.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError, match="columns"):
        load_sweep_records(out)
