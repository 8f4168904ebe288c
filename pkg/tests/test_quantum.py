import numpy as np
import pytest

from eetheom.quantum import (
    BathSpec,
    DensityMatrix,
    NAMED_SYSTEMS,
    SiteHamiltonian,
    boltzmann_equilibrium,
    build_site_hamiltonian,
    exciton_basis,
    fidelity,
    hamiltonian_from_csv,
    hamiltonian_to_csv,
    l1_coherence,
    local_coherence,
    trace_distance,
)
from eetheom.units import HBAR, K_BOLTZMANN, UnitConstants


# ---------------------------------------------------------------- Hamiltonians

def test_named_dimer_parameters():
    h = build_site_hamiltonian("FMO-2")
    assert np.array_equal(h.energies, [-100.0, 0.0])
    assert h.couplings[0, 1] == -100.0
    assert np.array_equal(build_site_hamiltonian("E-2").energies, [0.0, 0.0])
    assert build_site_hamiltonian("E-2").couplings[0, 1] == 100.0
    assert np.array_equal(build_site_hamiltonian("C-2").energies, [144.0, 0.0])


def test_named_trimer_parameters():
    h = build_site_hamiltonian("FMO-3")
    assert np.array_equal(h.energies, [200.0, 300.0, 0.0])
    assert h.couplings[0, 1] == -100.0
    assert h.couplings[1, 2] == 50.0
    assert h.couplings[0, 2] == 0.0
    e3 = build_site_hamiltonian("E-3")
    assert e3.couplings[0, 1] == e3.couplings[1, 2] == 100.0
    assert e3.couplings[0, 2] == 0.0
    c3 = build_site_hamiltonian("C-3")
    assert np.array_equal(c3.energies, [40.0, -160.0, 0.0])
    assert c3.couplings[0, 2] == -100.0


def test_explicit_construction_shifts_reference():
    h = build_site_hamiltonian(energies=[12500.0, 12400.0], couplings=[[0.0, -100.0], [-100.0, 0.0]])
    assert np.array_equal(h.energies, [100.0, 0.0])


def test_explicit_degenerate_decoupled_dimer():
    h = build_site_hamiltonian(energies=[0.0, 0.0], couplings=np.zeros((2, 2)))
    assert np.array_equal(h.matrix, np.zeros((2, 2)))


def test_unknown_system_rejected():
    with pytest.raises(ValueError, match="unknown system"):
        build_site_hamiltonian("FMO-7")


def test_asymmetric_couplings_rejected():
    with pytest.raises(ValueError, match="symmetric"):
        build_site_hamiltonian(energies=[0.0, 0.0], couplings=[[0.0, 1.0], [2.0, 0.0]])


def test_nonzero_coupling_diagonal_rejected():
    with pytest.raises(ValueError, match="diagonal"):
        SiteHamiltonian(energies=np.zeros(2), couplings=np.eye(2))


def test_matrix_is_real_symmetric():
    for h in NAMED_SYSTEMS.values():
        m = h.matrix
        assert np.array_equal(m, m.T)
        assert np.all(np.diag(m) == h.energies)


def test_hamiltonian_csv_roundtrip_bit_identical():
    for name, h in NAMED_SYSTEMS.items():
        again = hamiltonian_from_csv(hamiltonian_to_csv(h))
        assert np.array_equal(again.energies, h.energies), name
        assert np.array_equal(again.couplings, h.couplings), name


# ------------------------------------------------------------------- constants

def test_thermal_time_matches_high_temperature_bound():
    # the validity bound at 250 K is just above 30 fs, consistent with tau > 31 fs
    assert UnitConstants().thermal_time(250.0) == pytest.approx(30.6, abs=0.5)
    assert HBAR == 5308.8
    assert K_BOLTZMANN == 0.695035


def test_bath_spec_validity_flag():
    assert BathSpec(lam=20.0, tau=50.0, temperature=250.0).high_temperature_valid
    assert not BathSpec(lam=20.0, tau=20.0, temperature=250.0).high_temperature_valid
    with pytest.raises(ValueError):
        BathSpec(lam=-1.0, tau=50.0, temperature=250.0)
    with pytest.raises(ValueError):
        BathSpec(lam=20.0, tau=50.0, temperature=0.0)


# -------------------------------------------------------------- density matrix

def test_density_matrix_invariants():
    with pytest.raises(ValueError, match="Hermitian"):
        DensityMatrix(np.array([[0.5, 0.5], [0.0, 0.5]]))
    with pytest.raises(ValueError, match="trace"):
        DensityMatrix(np.eye(2))
    with pytest.raises(ValueError, match="negative eigenvalue"):
        DensityMatrix(np.array([[1.5, 0.0], [0.0, -0.5]]))
    rho = DensityMatrix.site_excitation(3, 2)
    assert rho.matrix[1, 1] == 1.0
    assert not rho.matrix.flags.writeable


# --------------------------------------------------------------------- fidelity

def test_fidelity_of_target_state_is_one():
    assert fidelity(DensityMatrix.site_excitation(2, 2), 2) == 1.0


def test_fidelity_of_maximally_mixed_dimer():
    assert fidelity(DensityMatrix.maximally_mixed(2), 2) == pytest.approx(np.sqrt(0.5), abs=1e-12)


def test_fidelity_equilibrium_fmo2_against_diagonalization_oracle():
    # independent 2x2 oracle: H = [[-100,-100],[-100,0]] has eigenvalues
    # -50 -+ 50*sqrt(5); Boltzmann weights at 250 K give the site-2 population
    ev_lo = -50.0 - 50.0 * np.sqrt(5.0)
    ev_hi = -50.0 + 50.0 * np.sqrt(5.0)
    beta = 1.0 / (K_BOLTZMANN * 250.0)
    # eigenvector components of |2> in the two eigenstates
    v_lo = np.array([100.0, -ev_lo - 100.0 + 0.0])  # (H - ev)v = 0 row solution
    v_lo = np.array([100.0, 61.80339887498949])
    v_lo /= np.linalg.norm(v_lo)
    w_lo, w_hi = np.exp(-beta * ev_lo), np.exp(-beta * ev_hi)
    pop2 = (w_lo * v_lo[1] ** 2 + w_hi * v_lo[0] ** 2) / (w_lo + w_hi)
    oracle = np.sqrt(pop2)
    assert oracle == pytest.approx(0.611, abs=0.002)

    rho = boltzmann_equilibrium(build_site_hamiltonian("FMO-2"), 250.0)
    assert fidelity(rho, 2) == pytest.approx(oracle, abs=1e-10)
    assert fidelity(rho, 2) == pytest.approx(0.61, abs=0.01)


def test_fidelity_rejects_bad_input():
    rho = DensityMatrix.site_excitation(2, 1)
    with pytest.raises(ValueError, match="out of range"):
        fidelity(rho, 3)
    with pytest.raises(ValueError, match="trace"):
        fidelity(np.eye(2) * 0.7, 1)


def test_fidelity_squared_equals_population():
    rng = np.random.default_rng(3)
    for _ in range(20):
        a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        rho = a @ a.conj().T
        rho /= np.trace(rho).real
        for site in (1, 2, 3):
            assert fidelity(rho, site) ** 2 == pytest.approx(rho[site - 1, site - 1].real, abs=1e-12)


# --------------------------------------------------------------- trace distance

def test_trace_distance_examples():
    r1 = DensityMatrix.site_excitation(2, 1)
    r2 = DensityMatrix.site_excitation(2, 2)
    assert trace_distance(r1, r2) == pytest.approx(1.0, abs=1e-12)
    assert trace_distance(r1, r1) == 0.0
    plus = DensityMatrix.pure([1.0, 1.0])
    assert trace_distance(plus, r1) == pytest.approx(np.sqrt(0.5), abs=1e-12)


def test_trace_distance_against_nuclear_norm_oracle():
    rng = np.random.default_rng(11)
    for _ in range(25):
        mats = []
        for _ in range(2):
            a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
            rho = a @ a.conj().T
            mats.append(rho / np.trace(rho).real)
        oracle = 0.5 * np.linalg.norm(mats[0] - mats[1], "nuc")
        assert trace_distance(mats[0], mats[1]) == pytest.approx(oracle, abs=1e-10)


def test_trace_distance_metric_properties():
    rng = np.random.default_rng(12)
    def rand_rho():
        a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        rho = a @ a.conj().T
        return rho / np.trace(rho).real

    for _ in range(20):
        x, y, z = rand_rho(), rand_rho(), rand_rho()
        dxy = trace_distance(x, y)
        assert dxy >= 0
        assert dxy == pytest.approx(trace_distance(y, x), abs=1e-12)
        assert dxy <= trace_distance(x, z) + trace_distance(z, y) + 1e-12


def test_trace_distance_one_iff_orthogonal_support():
    # orthogonal supports: distance exactly 1
    a = DensityMatrix(np.diag([0.3, 0.7, 0.0]).astype(complex))
    b = DensityMatrix(np.diag([0.0, 0.0, 1.0]).astype(complex))
    assert trace_distance(a, b) == pytest.approx(1.0, abs=1e-12)
    # overlapping supports: strictly less
    c = DensityMatrix(np.diag([0.2, 0.3, 0.5]).astype(complex))
    assert trace_distance(c, b) < 1.0 - 1e-9
    assert trace_distance(a, c) < 1.0 - 1e-9


def test_trace_distance_dimension_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        trace_distance(np.eye(2) / 2, np.eye(3) / 3)


# ------------------------------------------------------------------- coherence

def test_l1_coherence_site_basis():
    assert l1_coherence(DensityMatrix.site_excitation(2, 1)) == 0.0
    assert l1_coherence(DensityMatrix.pure([1.0, 1.0])) == pytest.approx(1.0, abs=1e-12)


def test_l1_coherence_exciton_basis_degenerate_dimer():
    # a site state of the degenerate J-coupled dimer is an equal superposition
    # of the two excitons, so its exciton-basis coherence is 1
    h = build_site_hamiltonian("E-2")
    basis = exciton_basis(h)
    assert l1_coherence(DensityMatrix.site_excitation(2, 1), basis) == pytest.approx(1.0, abs=1e-10)


def test_l1_coherence_invariant_under_basis_phase_rotation():
    rng = np.random.default_rng(5)
    h = build_site_hamiltonian("FMO-3")
    basis = exciton_basis(h)
    a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    rho = a @ a.conj().T
    rho /= np.trace(rho).real
    reference = l1_coherence(rho, basis)
    for _ in range(10):
        signs = rng.choice([-1.0, 1.0], size=3)
        rotated = type(basis)(eigenvalues=basis.eigenvalues, eigenvectors=basis.eigenvectors * signs)
        assert l1_coherence(rho, rotated) == pytest.approx(reference, abs=1e-12)


def test_l1_coherence_dimension_mismatch():
    basis = exciton_basis(build_site_hamiltonian("E-3"))
    with pytest.raises(ValueError, match="dimension"):
        l1_coherence(DensityMatrix.maximally_mixed(2), basis)


def test_local_coherence():
    assert local_coherence(DensityMatrix.maximally_mixed(2), 1, 2) == 0.0
    assert local_coherence(DensityMatrix.pure([1.0, 1.0]), 1, 2) == pytest.approx(1.0, abs=1e-12)
    rho = np.diag([0.4, 0.3, 0.3]).astype(complex)
    rho[0, 2] = 0.1 + 0.2j
    rho[2, 0] = 0.1 - 0.2j
    assert local_coherence(rho, 1, 3) == pytest.approx(0.4472135954999579, abs=1e-12)
    with pytest.raises(ValueError, match="distinct"):
        local_coherence(rho, 2, 2)
    with pytest.raises(ValueError, match="range"):
        local_coherence(rho, 1, 4)


# ----------------------------------------------------------------- equilibrium

def test_boltzmann_zero_hamiltonian_is_maximally_mixed():
    h = build_site_hamiltonian(energies=[0.0, 0.0], couplings=np.zeros((2, 2)))
    rho = boltzmann_equilibrium(h, 250.0)
    assert np.allclose(rho.matrix, np.eye(2) / 2, atol=1e-14)


def test_boltzmann_fmo2_populations():
    rho = boltzmann_equilibrium(build_site_hamiltonian("FMO-2"), 250.0)
    assert rho.matrix[1, 1].real == pytest.approx(0.373161, abs=5e-4)


def test_boltzmann_degenerate_dimer_split_evenly():
    rho = boltzmann_equilibrium(build_site_hamiltonian("E-2"), 250.0)
    assert rho.matrix[0, 0].real == pytest.approx(0.5, abs=1e-12)
    assert fidelity(rho, 2) == pytest.approx(np.sqrt(0.5), abs=1e-12)


def test_boltzmann_commutes_with_hamiltonian_and_unit_trace():
    for name, h in NAMED_SYSTEMS.items():
        rho = boltzmann_equilibrium(h, 273.0)
        comm = rho.matrix @ h.matrix - h.matrix @ rho.matrix
        assert np.max(np.abs(comm)) < 1e-10, name
        assert np.trace(rho.matrix).real == pytest.approx(1.0, abs=1e-12)


def test_boltzmann_rejects_nonpositive_temperature():
    with pytest.raises(ValueError):
        boltzmann_equilibrium(build_site_hamiltonian("E-2"), -10.0)


# ---------------------------------------------------------------- exciton basis

def test_exciton_basis_degenerate_dimer():
    basis = exciton_basis(build_site_hamiltonian("E-2"))
    assert np.allclose(basis.eigenvalues, [-100.0, 100.0])
    s = 1 / np.sqrt(2)
    assert np.allclose(basis.eigenvectors[:, 0], [s, -s])
    assert np.allclose(basis.eigenvectors[:, 1], [s, s])


def test_exciton_basis_fmo2_eigenvalues():
    basis = exciton_basis(build_site_hamiltonian("FMO-2"))
    assert basis.eigenvalues[0] == pytest.approx(-50.0 - 50.0 * np.sqrt(5.0), abs=1e-9)
    assert basis.eigenvalues[1] == pytest.approx(-50.0 + 50.0 * np.sqrt(5.0), abs=1e-9)


def test_exciton_basis_diagonal_hamiltonian_is_identity():
    h = build_site_hamiltonian(energies=[-50.0, 100.0, 0.0], couplings=np.zeros((3, 3)))
    basis = exciton_basis(h)
    assert np.allclose(np.abs(basis.eigenvectors), np.eye(3)[np.argsort([-50.0, 100.0, 0.0])].T)
    assert np.all(basis.eigenvectors[np.abs(basis.eigenvectors) > 0.5] > 0)


def test_exciton_basis_orthogonality_and_diagonalization():
    for name, h in NAMED_SYSTEMS.items():
        basis = exciton_basis(h)
        u = basis.eigenvectors
        assert np.max(np.abs(u.T @ u - np.eye(h.n_sites))) < 1e-10, name
        d = u.T @ h.matrix @ u
        assert np.max(np.abs(d - np.diag(basis.eigenvalues))) < 1e-8, name
        assert np.all(np.diff(basis.eigenvalues) >= 0), name


def test_exciton_basis_sign_convention_deterministic():
    h = build_site_hamiltonian("C-3")
    u1 = exciton_basis(h).eigenvectors
    u2 = exciton_basis(h).eigenvectors
    assert np.array_equal(u1, u2)
    for k in range(3):
        lead = np.argmax(np.abs(u1[:, k]))
        assert u1[lead, k] > 0
