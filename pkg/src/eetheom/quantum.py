"""Single-excitation site Hamiltonians, density matrices and static quantum measures.

The model systems are networks of N pigment sites (N = 2 or 3) in the
one-excitation manifold: |i> is the state with site i excited.  Site
energies are stored relative to the last site (E_N = 0); only energy
differences enter the dynamics.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .units import HBAR, K_BOLTZMANN, thermal_beta

__all__ = [
    "SiteHamiltonian",
    "DensityMatrix",
    "BathSpec",
    "ExcitonBasis",
    "NAMED_SYSTEMS",
    "build_site_hamiltonian",
    "fidelity",
    "trace_distance",
    "l1_coherence",
    "local_coherence",
    "boltzmann_equilibrium",
    "exciton_basis",
    "hamiltonian_to_csv",
    "hamiltonian_from_csv",
]

HERMITICITY_TOL = 1e-10
TRACE_TOL = 1e-8
POSITIVITY_TOL = -1e-7


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class SiteHamiltonian:
    """N-site exciton Hamiltonian: site energies on the diagonal, couplings J_ij off it.

    energies are in cm^-1 relative to the last site; couplings is the
    symmetric, zero-diagonal matrix of inter-site couplings in cm^-1.
    """

    energies: np.ndarray
    couplings: np.ndarray

    def __post_init__(self):
        energies = np.asarray(self.energies, dtype=float)
        couplings = np.asarray(self.couplings, dtype=float)
        n = energies.shape[0]
        if energies.ndim != 1 or n < 2:
            raise ValueError("energies must be a vector of at least two site energies")
        if couplings.shape != (n, n):
            raise ValueError(
                f"couplings shape {couplings.shape} does not match {n} sites"
            )
        if np.max(np.abs(couplings - couplings.T)) > 0:
            raise ValueError("couplings matrix must be symmetric")
        if np.max(np.abs(np.diag(couplings))) > 0:
            raise ValueError("couplings matrix must have zero diagonal")
        if abs(energies[-1]) > 0:
            raise ValueError("site energies must be referenced to the last site (E_N = 0)")
        object.__setattr__(self, "energies", _readonly(energies))
        object.__setattr__(self, "couplings", _readonly(couplings))

    @property
    def n_sites(self) -> int:
        return self.energies.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        """The assembled real symmetric matrix H[i][i] = E_i, H[i][j] = J_ij."""
        return np.diag(self.energies) + self.couplings


def _dimer(de12: float, j12: float) -> SiteHamiltonian:
    return SiteHamiltonian(
        energies=np.array([de12, 0.0]),
        couplings=np.array([[0.0, j12], [j12, 0.0]]),
    )


def _trimer(de13: float, de23: float, j12: float, j23: float, j13: float) -> SiteHamiltonian:
    return SiteHamiltonian(
        energies=np.array([de13, de23, 0.0]),
        couplings=np.array(
            [[0.0, j12, j13], [j12, 0.0, j23], [j13, j23, 0.0]]
        ),
    )


#: The six model systems studied: FMO-like, equal-energy and closed-system-optimal
#: dimers and trimers.  All parameters in cm^-1.
NAMED_SYSTEMS: dict[str, SiteHamiltonian] = {
    "FMO-2": _dimer(-100.0, -100.0),
    "E-2": _dimer(0.0, 100.0),
    "C-2": _dimer(144.0, 100.0),
    "FMO-3": _trimer(200.0, 300.0, -100.0, 50.0, 0.0),
    "E-3": _trimer(0.0, 0.0, 100.0, 100.0, 0.0),
    "C-3": _trimer(40.0, -160.0, -100.0, -20.0, -100.0),
}


def build_site_hamiltonian(
    system: str | None = None,
    *,
    energies=None,
    couplings=None,
) -> SiteHamiltonian:
    """Return one of the named model Hamiltonians, or build one from explicit parameters.

    Explicit energies may use any reference; they are shifted so the last
    site sits at zero.
    """
    if system is not None:
        if energies is not None or couplings is not None:
            raise ValueError("pass either a system name or explicit parameters, not both")
        try:
            return NAMED_SYSTEMS[system]
        except KeyError:
            known = ", ".join(sorted(NAMED_SYSTEMS))
            raise ValueError(f"unknown system {system!r}; known systems: {known}") from None
    if energies is None or couplings is None:
        raise ValueError("explicit construction needs both energies and couplings")
    energies = np.asarray(energies, dtype=float)
    return SiteHamiltonian(energies=energies - energies[-1], couplings=couplings)


@dataclass(frozen=True)
class DensityMatrix:
    """A validated density matrix (Hermitian, unit trace, nonnegative spectrum)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("density matrix must be square")
        if np.max(np.abs(m - m.conj().T)) > HERMITICITY_TOL:
            raise ValueError("density matrix is not Hermitian")
        if abs(np.trace(m).real - 1.0) > TRACE_TOL or abs(np.trace(m).imag) > TRACE_TOL:
            raise ValueError(f"density matrix trace {np.trace(m)} is not 1")
        evals = np.linalg.eigvalsh(m)
        if evals[0] < POSITIVITY_TOL:
            raise ValueError(f"density matrix has negative eigenvalue {evals[0]:.3e}")
        object.__setattr__(self, "matrix", _readonly(m))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def site_excitation(cls, n_sites: int, site: int) -> "DensityMatrix":
        """|site><site| with 1-based site index."""
        if not 1 <= site <= n_sites:
            raise ValueError(f"site {site} out of range 1..{n_sites}")
        m = np.zeros((n_sites, n_sites), dtype=complex)
        m[site - 1, site - 1] = 1.0
        return cls(m)

    @classmethod
    def pure(cls, amplitudes) -> "DensityMatrix":
        v = np.asarray(amplitudes, dtype=complex)
        v = v / np.linalg.norm(v)
        return cls(np.outer(v, v.conj()))

    @classmethod
    def maximally_mixed(cls, dim: int) -> "DensityMatrix":
        return cls(np.eye(dim, dtype=complex) / dim)


@dataclass(frozen=True)
class BathSpec:
    """Drude-Lorentz environment of one site: reorganization energy lam (cm^-1),
    correlation time tau (fs, gamma = 1/tau) and temperature (K).

    All sites share the same bath parameters.
    """

    lam: float
    tau: float
    temperature: float

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError(f"reorganization energy must be positive, got {self.lam}")
        if self.tau <= 0:
            raise ValueError(f"bath correlation time must be positive, got {self.tau}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")

    @property
    def gamma(self) -> float:
        """Bath relaxation rate 1/tau in fs^-1."""
        return 1.0 / self.tau

    @property
    def beta(self) -> float:
        """Inverse thermal energy in 1/cm^-1."""
        return thermal_beta(self.temperature)

    @property
    def high_temperature_valid(self) -> bool:
        """Whether tau exceeds the thermal time hbar/(k_B*T), the validity
        condition of the hierarchy without low-temperature correction terms."""
        return self.tau > HBAR / (K_BOLTZMANN * self.temperature)


@dataclass(frozen=True)
class ExcitonBasis:
    """Eigenbasis of a site Hamiltonian; columns of eigenvectors are the excitons."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "eigenvalues", _readonly(np.asarray(self.eigenvalues, float)))
        object.__setattr__(self, "eigenvectors", _readonly(np.asarray(self.eigenvectors, float)))

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]


def _as_matrix(rho) -> np.ndarray:
    return rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)


def fidelity(rho: DensityMatrix, target_site: int) -> float:
    """Transfer efficiency into a pure target site state: sqrt(<N|rho|N>)."""
    m = _as_matrix(rho)
    dim = m.shape[0]
    if not 1 <= target_site <= dim:
        raise ValueError(f"target site {target_site} out of range 1..{dim}")
    tr = np.trace(m)
    if abs(tr - 1.0) > TRACE_TOL:
        raise ValueError(f"state trace {tr} is not 1")
    pop = m[target_site - 1, target_site - 1].real
    return float(np.sqrt(max(pop, 0.0)))


def trace_distance(rho1, rho2) -> float:
    """Half the sum of absolute eigenvalues of rho1 - rho2."""
    m1, m2 = _as_matrix(rho1), _as_matrix(rho2)
    if m1.shape != m2.shape:
        raise ValueError(f"dimension mismatch: {m1.shape} vs {m2.shape}")
    evals = np.linalg.eigvalsh(m1 - m2)
    return float(0.5 * np.sum(np.abs(evals)))


def l1_coherence(rho, basis: ExcitonBasis | None = None) -> float:
    """Sum of off-diagonal magnitudes, 2*sum_{i<j}|rho_ij|, in the site basis
    or in the supplied exciton basis."""
    m = _as_matrix(rho)
    if basis is not None:
        if basis.dim != m.shape[0]:
            raise ValueError(
                f"basis dimension {basis.dim} does not match state dimension {m.shape[0]}"
            )
        u = basis.eigenvectors
        m = u.T @ m @ u
    off = m - np.diag(np.diag(m))
    return float(np.sum(np.abs(off)))


def local_coherence(rho, i: int, j: int) -> float:
    """Site-basis coherence between two sites: 2|rho_ij| (1-based indices)."""
    m = _as_matrix(rho)
    dim = m.shape[0]
    if i == j:
        raise ValueError("local coherence needs two distinct sites")
    if not (1 <= i <= dim and 1 <= j <= dim):
        raise ValueError(f"site indices ({i}, {j}) out of range 1..{dim}")
    return float(2.0 * np.abs(m[i - 1, j - 1]))


def boltzmann_equilibrium(hamiltonian: SiteHamiltonian, temperature: float) -> DensityMatrix:
    """exp(-H/(k_B T)) / Z for the bare system Hamiltonian."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    beta = thermal_beta(temperature)
    evals, u = np.linalg.eigh(hamiltonian.matrix)
    # subtract the ground eigenvalue before exponentiating; cancels in the ratio
    weights = np.exp(-beta * (evals - evals[0]))
    rho = (u * weights) @ u.T / np.sum(weights)
    return DensityMatrix(rho.astype(complex))


def exciton_basis(hamiltonian: SiteHamiltonian) -> ExcitonBasis:
    """Eigendecomposition with ascending eigenvalues and a deterministic sign
    convention: each eigenvector's largest-magnitude component is positive."""
    evals, u = np.linalg.eigh(hamiltonian.matrix)
    for k in range(u.shape[1]):
        lead = np.argmax(np.abs(u[:, k]))
        if u[lead, k] < 0:
            u[:, k] = -u[:, k]
    return ExcitonBasis(eigenvalues=evals, eigenvectors=u)


def hamiltonian_to_csv(hamiltonian: SiteHamiltonian) -> str:
    """Serialize a Hamiltonian as CSV (full float precision, round-trip exact)."""
    buf = io.StringIO()
    n = hamiltonian.n_sites
    buf.write("n_sites," + str(n) + "\n")
    buf.write("energies," + ",".join(repr(float(e)) for e in hamiltonian.energies) + "\n")
    for row in hamiltonian.couplings:
        buf.write("couplings," + ",".join(repr(float(x)) for x in row) + "\n")
    return buf.getvalue()


def hamiltonian_from_csv(text: str) -> SiteHamiltonian:
    lines = [ln for ln in text.strip().splitlines() if ln]
    head = lines[0].split(",")
    if head[0] != "n_sites":
        raise ValueError("malformed Hamiltonian CSV: missing n_sites header")
    n = int(head[1])
    energies = np.array([float(x) for x in lines[1].split(",")[1:]])
    couplings = np.array(
        [[float(x) for x in lines[2 + i].split(",")[1:]] for i in range(n)]
    )
    return SiteHamiltonian(energies=energies, couplings=couplings)
