"""BLP non-Markovianity: trace-distance backflow maximized over initial pairs.

The measure is the total increase of the trace distance D(t) between two
evolved states, maximized over initial state pairs.  Optimal pairs have
orthogonal support: both members are obtained by conjugating complementary
diagonal blocks with a common special unitary, so the sampler draws a split
rank, eigenvalues on the two simplices and an SU(N) element, all uniformly.

The hierarchy is a fixed linear map of the initial physical matrix, so the
estimator propagates an orthonormal Hermitian operator basis once per bath
point and reconstructs every pair's evolved difference as a linear
combination; this is exact (up to roundoff) and makes large samples cheap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from .heom import (
    HeomDivergenceError,
    HeomPropagator,
    TimeGrid,
    heom_propagate,
)
from .quantum import BathSpec, DensityMatrix, SiteHamiltonian, trace_distance

__all__ = [
    "OrthogonalPair",
    "TraceDistanceTrajectory",
    "NonMarkovianityEstimate",
    "su2_unitary",
    "su3_unitary",
    "sample_orthogonal_pair",
    "sigma_integral",
    "evaluate_pair",
    "blp_estimate",
]

ORTHOGONALITY_TOL = 1e-10
DISTANCE_CEILING = 1.0 + 1e-9


def su2_unitary(theta: float, phi1: float, phi2: float) -> np.ndarray:
    """SU(2) element [[cos(t)e^{i p1}, -sin(t)e^{-i p2}], [sin(t)e^{i p2}, cos(t)e^{-i p1}]]."""
    if not 0 <= theta <= np.pi / 2:
        raise ValueError(f"theta must lie in [0, pi/2], got {theta}")
    if not (0 <= phi1 <= 2 * np.pi and 0 <= phi2 <= 2 * np.pi):
        raise ValueError("phases must lie in [0, 2*pi]")
    c, s = np.cos(theta), np.sin(theta)
    return np.array(
        [
            [c * np.exp(1j * phi1), -s * np.exp(-1j * phi2)],
            [s * np.exp(1j * phi2), c * np.exp(-1j * phi1)],
        ]
    )


def su3_unitary(angles, phases) -> np.ndarray:
    """SU(3) element from three angles in [0, pi/2] and five phases in [0, 2*pi],
    in the standard three-rotation parametrization (surjective onto SU(3))."""
    angles = np.asarray(angles, dtype=float)
    phases = np.asarray(phases, dtype=float)
    if angles.shape != (3,) or phases.shape != (5,):
        raise ValueError("need three angles and five phases")
    if np.any(angles < 0) or np.any(angles > np.pi / 2):
        raise ValueError("angles must lie in [0, pi/2]")
    if np.any(phases < 0) or np.any(phases > 2 * np.pi):
        raise ValueError("phases must lie in [0, 2*pi]")
    c1, c2, c3 = np.cos(angles)
    s1, s2, s3 = np.sin(angles)
    f1, f2, f3, f4, f5 = phases

    def e(x):
        return np.exp(1j * x)

    return np.array(
        [
            [c1 * c2 * e(f1), s1 * e(f3), c1 * s2 * e(f4)],
            [
                s2 * s3 * e(-f4 - f5) - s1 * c2 * c3 * e(f1 + f2 - f3),
                c1 * c3 * e(f2),
                -c2 * s3 * e(-f1 - f5) - s1 * s2 * c3 * e(f2 - f3 + f4),
            ],
            [
                -s1 * c2 * s3 * e(f1 - f3 + f5) - s2 * c3 * e(-f2 - f4),
                c1 * s3 * e(f5),
                c2 * c3 * e(-f1 - f2) - s1 * s2 * s3 * e(-f3 + f4 + f5),
            ],
        ]
    )


@dataclass(frozen=True)
class OrthogonalPair:
    """Two density matrices with orthogonal support (trace distance exactly 1),
    together with the parameters that generated them."""

    rho_a: DensityMatrix
    rho_b: DensityMatrix
    split_rank: int
    eigs_a: tuple
    eigs_b: tuple
    angles: tuple
    phases: tuple

    def __post_init__(self):
        if abs(trace_distance(self.rho_a, self.rho_b) - 1.0) > ORTHOGONALITY_TOL:
            raise ValueError("pair members are not completely distinguishable")
        overlap = abs(np.trace(self.rho_a.matrix @ self.rho_b.matrix))
        if overlap > ORTHOGONALITY_TOL:
            raise ValueError(f"pair members have overlapping support ({overlap:.2e})")

    def describe(self) -> str:
        return (
            f"split_rank={self.split_rank}, eigs_a={self.eigs_a}, eigs_b={self.eigs_b}, "
            f"angles={self.angles}, phases={self.phases}"
        )


@dataclass(frozen=True)
class TraceDistanceTrajectory:
    """D(t) between the evolved members of an orthogonal pair."""

    times: np.ndarray
    values: np.ndarray
    pair: OrthogonalPair

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if np.any(values < 0) or np.any(values > DISTANCE_CEILING):
            raise ValueError("trace distances must lie in [0, 1]")
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class NonMarkovianityEstimate:
    """Sampled maximum of the backflow integral, with the attaining pair."""

    value: float
    sample_size: int
    best_pair: OrthogonalPair
    best_index: int
    bath: BathSpec
    depth: int
    seed: int
    integrals: np.ndarray | None = None


def _simplex_uniform(k: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform point on the (k-1)-simplex via sorted uniform spacings."""
    if k == 1:
        return np.array([1.0])
    cuts = np.sort(rng.uniform(0.0, 1.0, k - 1))
    return np.diff(np.concatenate(([0.0], cuts, [1.0])))


def _pair_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


def sample_orthogonal_pair(n: int, rng: np.random.Generator) -> OrthogonalPair:
    """Draw an orthogonal-support pair: split rank m uniform on {1..n-1},
    eigenvalues uniform on the two simplices, conjugating unitary uniform in
    its parameters."""
    if n == 2:
        m = 1
    elif n == 3:
        m = int(rng.integers(1, n))
    else:
        raise ValueError(f"only 2- and 3-site systems are supported, got n={n}")
    eigs_a = _simplex_uniform(m, rng)
    eigs_b = _simplex_uniform(n - m, rng)
    if n == 2:
        angles = (float(rng.uniform(0.0, np.pi / 2)),)
        phases = tuple(float(p) for p in rng.uniform(0.0, 2 * np.pi, 2))
        u = su2_unitary(angles[0], *phases)
    else:
        angles = tuple(float(t) for t in rng.uniform(0.0, np.pi / 2, 3))
        phases = tuple(float(p) for p in rng.uniform(0.0, 2 * np.pi, 5))
        u = su3_unitary(angles, phases)
    tilde_a = np.diag(np.concatenate((eigs_a, np.zeros(n - m)))).astype(complex)
    tilde_b = np.diag(np.concatenate((np.zeros(m), eigs_b))).astype(complex)
    return OrthogonalPair(
        rho_a=DensityMatrix(u @ tilde_a @ u.conj().T),
        rho_b=DensityMatrix(u @ tilde_b @ u.conj().T),
        split_rank=m,
        eigs_a=tuple(float(e) for e in eigs_a),
        eigs_b=tuple(float(e) for e in eigs_b),
        angles=angles,
        phases=phases,
    )


def sigma_integral(values) -> float:
    """Total increase of D over consecutive output points: the discrete
    integral of dD/dt restricted to regions where it is positive."""
    if isinstance(values, TraceDistanceTrajectory):
        values = values.values
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("empty trace-distance trajectory")
    increments = np.diff(values)
    return float(np.sum(increments[increments > 0]))


def _hermitian_basis(n: int) -> np.ndarray:
    """Orthonormal (trace inner product) basis of Hermitian n x n matrices."""
    basis = []
    for i in range(n):
        b = np.zeros((n, n), dtype=complex)
        b[i, i] = 1.0
        basis.append(b)
    for i in range(n):
        for j in range(i + 1, n):
            b = np.zeros((n, n), dtype=complex)
            b[i, j] = b[j, i] = 1.0 / np.sqrt(2.0)
            basis.append(b)
            b = np.zeros((n, n), dtype=complex)
            b[i, j] = -1j / np.sqrt(2.0)
            b[j, i] = 1j / np.sqrt(2.0)
            basis.append(b)
    return np.array(basis)


def _distance_series(deltas: np.ndarray) -> np.ndarray:
    """Trace distances of a stack (..., n, n) of Hermitian differences."""
    n = deltas.shape[-1]
    if n == 2:
        p = deltas[..., 0, 0].real
        r = deltas[..., 1, 1].real
        root = np.sqrt(0.25 * (p - r) ** 2 + np.abs(deltas[..., 0, 1]) ** 2)
        half = 0.5 * (p + r)
        return 0.5 * (np.abs(half + root) + np.abs(half - root))
    return 0.5 * np.sum(np.abs(np.linalg.eigvalsh(deltas)), axis=-1)


def evaluate_pair(
    hamiltonian: SiteHamiltonian,
    bath: BathSpec,
    grid: TimeGrid,
    pair: OrthogonalPair,
    depth: int | None = None,
) -> TraceDistanceTrajectory:
    """Propagate both members and return D(t); the direct (unbatched) route."""
    traj_a = heom_propagate(hamiltonian, bath, pair.rho_a, grid, depth)
    traj_b = heom_propagate(hamiltonian, bath, pair.rho_b, grid, depth)
    values = _distance_series(traj_a.matrices - traj_b.matrices)
    return TraceDistanceTrajectory(times=traj_a.times, values=values, pair=pair)


def closed_pair_distance(
    hamiltonian: SiteHamiltonian, grid: TimeGrid, pair: OrthogonalPair
) -> TraceDistanceTrajectory:
    """D(t) under exact unitary evolution (constant; oracle for the lam->0 limit)."""
    from .heom import closed_system_propagate

    traj_a = closed_system_propagate(hamiltonian, pair.rho_a, grid)
    traj_b = closed_system_propagate(hamiltonian, pair.rho_b, grid)
    values = _distance_series(traj_a.matrices - traj_b.matrices)
    return TraceDistanceTrajectory(times=traj_a.times, values=values, pair=pair)


def _chunk_sigma(
    basis: np.ndarray,
    response: np.ndarray,
    bath: BathSpec,
    seed: int,
    start: int,
    count: int,
) -> np.ndarray:
    """Backflow integrals of pairs [start, start+count), evaluated through the
    propagated operator basis."""
    n = basis.shape[-1]
    deltas0 = np.empty((count, n, n), dtype=complex)
    for k in range(count):
        pair = sample_orthogonal_pair(n, _pair_rng(seed, start + k))
        deltas0[k] = pair.rho_a.matrix - pair.rho_b.matrix
    coeffs = np.einsum("kij,bji->bk", basis, deltas0).real

    evolved = np.einsum("bk,tkij->btij", coeffs, response, optimize=True)
    distances = _distance_series(evolved)
    if np.any(~np.isfinite(distances)) or np.any(distances > DISTANCE_CEILING):
        bad = int(np.argmax(np.nan_to_num(distances, nan=np.inf).max(axis=1)))
        pair = sample_orthogonal_pair(n, _pair_rng(seed, start + bad))
        raise HeomDivergenceError(
            f"trace distance left [0, 1] for pair {start + bad} ({pair.describe()}) "
            f"at bath (lam={bath.lam}, tau={bath.tau}, T={bath.temperature})"
        )
    increments = np.diff(distances, axis=1)
    return np.sum(np.where(increments > 0, increments, 0.0), axis=1)


def blp_estimate(
    hamiltonian: SiteHamiltonian,
    bath: BathSpec,
    grid: TimeGrid,
    sample_size: int,
    rng_seed: int,
    depth: int | None = None,
    workers: int = 1,
    keep_integrals: bool = False,
    chunk_size: int = 1024,
) -> NonMarkovianityEstimate:
    """Monte-Carlo maximum of the backflow integral over orthogonal-support
    pairs.  Pair k is drawn from a generator seeded by (rng_seed, k), so the
    estimate is reproducible for any worker count and extending the sample
    size keeps earlier pairs."""
    if sample_size < 1:
        raise ValueError("sample_size must be at least 1")
    if depth is None:
        from .heom import default_depth

        depth = default_depth(hamiltonian.n_sites)

    # the flow is linear, so one basis propagation serves every pair
    basis = _hermitian_basis(hamiltonian.n_sites)
    propagator = HeomPropagator(hamiltonian, bath, grid, depth)
    response = propagator.propagate_matrices(basis)  # (nt, n^2, n, n)

    starts = list(range(0, sample_size, chunk_size))
    counts = [min(chunk_size, sample_size - s) for s in starts]
    if workers > 1 and len(starts) > 1:
        chunks = Parallel(n_jobs=workers)(
            delayed(_chunk_sigma)(basis, response, bath, rng_seed, s, c)
            for s, c in zip(starts, counts)
        )
    else:
        chunks = [
            _chunk_sigma(basis, response, bath, rng_seed, s, c)
            for s, c in zip(starts, counts)
        ]
    integrals = np.concatenate(chunks)
    best_index = int(np.argmax(integrals))
    best_pair = sample_orthogonal_pair(hamiltonian.n_sites, _pair_rng(rng_seed, best_index))
    return NonMarkovianityEstimate(
        value=float(integrals[best_index]),
        sample_size=sample_size,
        best_pair=best_pair,
        best_index=best_index,
        bath=bath,
        depth=depth,
        seed=rng_seed,
        integrals=integrals if keep_integrals else None,
    )


def trace_distance_to_csv(traj: TraceDistanceTrajectory, stream) -> None:
    """Two-column CSV of the trace-distance trajectory."""
    stream.write("t_fs,D\n")
    for t, d in zip(traj.times, traj.values):
        stream.write(f"{t:.12g},{d:.12g}\n")
