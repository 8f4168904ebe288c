"""Hierarchical propagation of the reduced density matrix.

High-temperature Drude-Lorentz hierarchy: each site couples linearly to its
own overdamped bath with correlation function

    C(t) = (2*lam*k_B*T/hbar^2 - 1j*lam*gamma/hbar) * exp(-gamma*t),

a single exponential per site (no low-temperature correction terms), valid
for tau > hbar/(k_B*T).  Auxiliary density operators (ADOs) are indexed by
one non-negative integer per site; the hierarchy is truncated by total index
depth and the couplings beyond the truncation are dropped.

In frequency units (h = H/hbar) the equation of motion for the ADO with
multi-index n reads

    d(rho_n)/dt = -1j*[h, rho_n] - (sum_j n_j*gamma) * rho_n
                  + sum_j 1j*[V_j, rho_{n+e_j}]
                  + sum_j n_j * (1j*a*[V_j, rho_{n-e_j}] + g*{V_j, rho_{n-e_j}})

with V_j = |j><j|, a = 2*lam*k_B*T/hbar^2 and g = lam*gamma/hbar.  The
index-0 ADO is the physical reduced density matrix.

The generator is a constant linear operator on the stacked ADO vector, so a
classical RK4 step of size dt is exactly the degree-4 Taylor polynomial of
exp(A*dt).  For small hierarchies the per-output-stride step operator is
formed densely once and applied by matrix-vector products; larger
hierarchies fall back to explicit RK4 stepping with the sparse generator.
Both paths evaluate the same discrete flow.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .quantum import (
    BathSpec,
    DensityMatrix,
    ExcitonBasis,
    SiteHamiltonian,
    exciton_basis,
)
from .units import HBAR, K_BOLTZMANN

__all__ = [
    "TimeGrid",
    "HierarchyIndexSet",
    "Trajectory",
    "HeomPropagator",
    "heom_propagate",
    "closed_system_propagate",
    "ConvergenceReport",
    "convergence_report",
    "default_depth",
    "resolve_depth",
    "trajectory_to_csv",
    "HeomDivergenceError",
    "ConvergenceError",
    "HierarchyMemoryError",
]

#: ADO entries beyond this magnitude abort a propagation as divergent.
DIVERGENCE_LIMIT = 1e6

#: Largest stacked-vector dimension propagated with a dense stride operator.
DENSE_DIM_LIMIT = 1100

#: Workspace cap for a single propagation.
MEMORY_LIMIT_BYTES = 2 << 30

TRACE_TOL = 1e-6
HERMITICITY_TOL = 1e-8
POSITIVITY_TOL = -1e-7


class HeomDivergenceError(RuntimeError):
    """The hierarchy state blew up (unstable step size or unphysical input)."""


class ConvergenceError(RuntimeError):
    """Depth or step-size refinement hit its limit without settling."""


class HierarchyMemoryError(RuntimeError):
    """Requested depth needs more workspace than the configured limit."""


def default_depth(n_sites: int) -> int:
    """Starting truncation depth before convergence refinement."""
    return 8 if n_sites == 2 else 6


@dataclass(frozen=True)
class TimeGrid:
    """Fixed-step integration window with a coarser output grid.

    The integrator step is dt; states are recorded every output_stride
    steps, including the initial time.
    """

    t_end: float = 1000.0
    dt: float = 0.5
    output_stride: int = 5
    t_start: float = 0.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.t_end < self.t_start:
            raise ValueError("t_end must not precede t_start")
        if self.output_stride < 1:
            raise ValueError("output_stride must be at least 1")
        span = self.t_end - self.t_start
        steps = span / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError(f"time span {span} is not an integer number of steps of {self.dt}")
        if round(steps) % self.output_stride != 0:
            raise ValueError(
                f"output_stride {self.output_stride} does not divide {round(steps)} steps"
            )

    @property
    def n_steps(self) -> int:
        return int(round((self.t_end - self.t_start) / self.dt))

    @property
    def n_output(self) -> int:
        return self.n_steps // self.output_stride + 1

    @property
    def output_times(self) -> np.ndarray:
        return self.t_start + self.dt * self.output_stride * np.arange(self.n_output)

    def refined(self, factor: int = 2) -> "TimeGrid":
        """Same window and output times with the integrator step divided."""
        return TimeGrid(
            t_end=self.t_end,
            dt=self.dt / factor,
            output_stride=self.output_stride * factor,
            t_start=self.t_start,
        )


class HierarchyIndexSet:
    """All ADO multi-indices n with sum(n) <= depth, in graded lexicographic
    order (index 0 is the zero multi-index), plus raise/lower neighbor tables."""

    def __init__(self, n_sites: int, depth: int):
        if depth < 1:
            raise ValueError(f"depth must be at least 1, got {depth}")
        indices = []
        for total in range(depth + 1):
            indices.extend(_compositions(total, n_sites))
        self.n_sites = n_sites
        self.depth = depth
        self.indices = np.array(indices, dtype=np.int64)
        self.size = self.indices.shape[0]

        position = {tuple(idx): k for k, idx in enumerate(self.indices)}
        self.plus = np.full((self.size, n_sites), -1, dtype=np.int64)
        self.minus = np.full((self.size, n_sites), -1, dtype=np.int64)
        for k, idx in enumerate(self.indices):
            for j in range(n_sites):
                up = list(idx)
                up[j] += 1
                self.plus[k, j] = position.get(tuple(up), -1)
                if idx[j] > 0:
                    down = list(idx)
                    down[j] -= 1
                    self.minus[k, j] = position[tuple(down)]
        self.indices.flags.writeable = False
        self.plus.flags.writeable = False
        self.minus.flags.writeable = False


def _compositions(total: int, parts: int):
    """Non-negative integer tuples of the given length summing to total,
    in lexicographic order."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


@lru_cache(maxsize=16)
def hierarchy_index_set(n_sites: int, depth: int) -> HierarchyIndexSet:
    return HierarchyIndexSet(n_sites, depth)


@lru_cache(maxsize=8)
def _generator_components(h_bytes: bytes, n_sites: int, depth: int):
    """Parameter-independent sparse pieces of the hierarchy generator.

    Returns (system, damping, up, down_comm, down_anti) such that the full
    generator is system + gamma*damping + 1j*up + 1j*a*down_comm +
    g*down_anti, acting on the stacked row-major ADO vector.
    """
    h = np.frombuffer(h_bytes, dtype=float).reshape(n_sites, n_sites) / HBAR
    iset = hierarchy_index_set(n_sites, depth)
    n, m, nn = n_sites, iset.size, n_sites * n_sites
    dim = m * nn

    # -1j*[h, .] on one block, in row-major vec form
    eye = np.eye(n)
    block = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    br, bc = np.nonzero(block)
    bv = block[br, bc]
    offs = (np.arange(m) * nn)[:, None]
    rows = [(offs + br[None, :]).ravel()]
    cols = [(offs + bc[None, :]).ravel()]
    vals = [np.broadcast_to(bv, (m, bv.size)).ravel()]
    system = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dim, dim),
    ).tocsr()

    # -(sum_j n_j) on the diagonal of each block; scaled by gamma later
    tiers = iset.indices.sum(axis=1)
    damping = sp.diags(np.repeat(-tiers.astype(float), nn), format="csr")

    # site-projector commutator/anticommutator are diagonal in vec space:
    # [V_j, X]_rc = (d_rj - d_cj) X_rc,  {V_j, X}_rc = (d_rj + d_cj) X_rc
    rr, cc = np.divmod(np.arange(nn), n)
    up_r, up_c, up_v = [], [], []
    dc_r, dc_c, dc_v = [], [], []
    da_r, da_c, da_v = [], [], []
    for j in range(n):
        comm = (rr == j).astype(float) - (cc == j).astype(float)
        anti = (rr == j).astype(float) + (cc == j).astype(float)
        nz_comm = np.nonzero(comm)[0]
        nz_anti = np.nonzero(anti)[0]

        has_up = np.nonzero(iset.plus[:, j] >= 0)[0]
        up_r.append((has_up[:, None] * nn + nz_comm[None, :]).ravel())
        up_c.append((iset.plus[has_up, j][:, None] * nn + nz_comm[None, :]).ravel())
        up_v.append(np.broadcast_to(comm[nz_comm], (has_up.size, nz_comm.size)).ravel())

        has_dn = np.nonzero(iset.minus[:, j] >= 0)[0]
        njs = iset.indices[has_dn, j].astype(float)
        dn_pos = iset.minus[has_dn, j]
        dc_r.append((has_dn[:, None] * nn + nz_comm[None, :]).ravel())
        dc_c.append((dn_pos[:, None] * nn + nz_comm[None, :]).ravel())
        dc_v.append((njs[:, None] * comm[nz_comm][None, :]).ravel())
        da_r.append((has_dn[:, None] * nn + nz_anti[None, :]).ravel())
        da_c.append((dn_pos[:, None] * nn + nz_anti[None, :]).ravel())
        da_v.append((njs[:, None] * anti[nz_anti][None, :]).ravel())

    def _assemble(r, c, v):
        return sp.coo_matrix(
            (np.concatenate(v), (np.concatenate(r), np.concatenate(c))), shape=(dim, dim)
        ).tocsr()

    return system, damping, _assemble(up_r, up_c, up_v), _assemble(dc_r, dc_c, dc_v), _assemble(da_r, da_c, da_v)


def build_generator(hamiltonian: SiteHamiltonian, bath: BathSpec, depth: int) -> sp.csr_matrix:
    """Sparse hierarchy generator for the given system, bath and depth."""
    n = hamiltonian.n_sites
    system, damping, up, down_comm, down_anti = _generator_components(
        hamiltonian.matrix.tobytes(), n, depth
    )
    gamma = bath.gamma
    a = 2.0 * bath.lam * K_BOLTZMANN * bath.temperature / HBAR**2
    g = bath.lam * gamma / HBAR
    return (system + gamma * damping + 1j * up + (1j * a) * down_comm + g * down_anti).tocsr()


@dataclass(frozen=True)
class Provenance:
    """What produced a trajectory: the system, the bath (None for the closed
    system), the time grid, and the truncation depth (None for closed)."""

    hamiltonian: SiteHamiltonian
    bath: BathSpec | None
    grid: TimeGrid
    depth: int | None


class Trajectory:
    """Reduced density matrix at the output times, with derived observables."""

    def __init__(self, times: np.ndarray, matrices: np.ndarray, provenance: Provenance):
        times = np.asarray(times, dtype=float)
        matrices = np.ascontiguousarray(matrices, dtype=complex)
        if times.ndim != 1 or matrices.shape[0] != times.size:
            raise ValueError("times and states disagree in length")
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        times.flags.writeable = False
        matrices.flags.writeable = False
        self.times = times
        self.matrices = matrices
        self.provenance = provenance

    @property
    def n_sites(self) -> int:
        return self.matrices.shape[1]

    def validate(self) -> None:
        """Check trace preservation, Hermiticity and spectrum positivity of
        every recorded state."""
        traces = np.trace(self.matrices, axis1=1, axis2=2)
        worst_trace = np.max(np.abs(traces - 1.0))
        if worst_trace > TRACE_TOL:
            raise HeomDivergenceError(f"trace deviates from 1 by {worst_trace:.3e}")
        herm = np.max(np.abs(self.matrices - np.conj(np.swapaxes(self.matrices, 1, 2))))
        if herm > HERMITICITY_TOL:
            raise HeomDivergenceError(f"states deviate from Hermiticity by {herm:.3e}")
        lowest = np.min(np.linalg.eigvalsh(self.matrices))
        if lowest < POSITIVITY_TOL:
            raise HeomDivergenceError(f"state has negative eigenvalue {lowest:.3e}")

    def states(self) -> list[DensityMatrix]:
        return [DensityMatrix(m) for m in self.matrices]

    def populations(self) -> np.ndarray:
        """Site populations, shape (n_times, n_sites)."""
        return np.real(np.diagonal(self.matrices, axis1=1, axis2=2))

    def fidelity_series(self, target_site: int | None = None) -> np.ndarray:
        """sqrt of the target-site population over time (defaults to site N)."""
        site = self.n_sites if target_site is None else target_site
        pops = self.populations()[:, site - 1]
        return np.sqrt(np.clip(pops, 0.0, None))

    def local_coherence_series(self, i: int, j: int) -> np.ndarray:
        """2|rho_ij(t)| in the site basis (1-based indices)."""
        if i == j:
            raise ValueError("local coherence needs two distinct sites")
        return 2.0 * np.abs(self.matrices[:, i - 1, j - 1])

    def exciton_coherence_series(self, basis: ExcitonBasis | None = None) -> np.ndarray:
        """Off-diagonal l1 coherence in the exciton basis over time."""
        if basis is None:
            basis = exciton_basis(self.provenance.hamiltonian)
        u = basis.eigenvectors
        rot = np.einsum("ki,tkl,lj->tij", u, self.matrices, u, optimize=True)
        nt, n = rot.shape[0], rot.shape[1]
        mask = ~np.eye(n, dtype=bool)
        return np.abs(rot[:, mask]).sum(axis=1)


def _rk4_polynomial(a_dense: np.ndarray, dt: float) -> np.ndarray:
    """I + X + X^2/2 + X^3/6 + X^4/24 with X = A*dt: one exact RK4 step."""
    x = a_dense * dt
    step = np.eye(x.shape[0], dtype=complex) + x
    term = x
    for k in (2, 3, 4):
        term = term @ x / k
        step += term
    return step


def _matrix_power(m: np.ndarray, exponent: int) -> np.ndarray:
    result = None
    base = m
    e = exponent
    while e:
        if e & 1:
            result = base if result is None else result @ base
        e >>= 1
        if e:
            base = base @ base
    return result


class HeomPropagator:
    """Reusable fixed-bath propagator; build once, run many initial states.

    method 'dense' applies an exact per-stride RK4 polynomial operator;
    'sparse' performs explicit RK4 steps with the sparse generator; 'auto'
    picks by hierarchy size.  Both evaluate the same discrete flow.
    """

    def __init__(
        self,
        hamiltonian: SiteHamiltonian,
        bath: BathSpec,
        grid: TimeGrid,
        depth: int | None = None,
        method: str = "auto",
        memory_limit: int = MEMORY_LIMIT_BYTES,
    ):
        if depth is None:
            depth = default_depth(hamiltonian.n_sites)
        if depth < 1:
            raise ValueError(f"depth must be at least 1, got {depth}")
        if not bath.high_temperature_valid:
            lower = HBAR / (K_BOLTZMANN * bath.temperature)
            raise ValueError(
                f"bath tau={bath.tau} fs violates the high-temperature condition "
                f"(needs tau > {lower:.1f} fs at {bath.temperature} K)"
            )
        self.hamiltonian = hamiltonian
        self.bath = bath
        self.grid = grid
        self.depth = depth
        n = hamiltonian.n_sites
        iset = hierarchy_index_set(n, depth)
        self.dim = iset.size * n * n
        self._n = n

        state_bytes = self.dim * 16
        if method == "auto":
            method = "dense" if self.dim <= DENSE_DIM_LIMIT else "sparse"
        if method == "dense":
            needed = 4 * self.dim**2 * 16
        elif method == "sparse":
            needed = 40 * state_bytes
        else:
            raise ValueError(f"unknown method {method!r}")
        if needed > memory_limit:
            raise HierarchyMemoryError(
                f"depth {depth} needs ~{needed / 2**20:.0f} MiB (> limit "
                f"{memory_limit / 2**20:.0f} MiB); lower the depth or the dimension"
            )
        self.method = method

        generator = build_generator(hamiltonian, bath, depth)
        if method == "dense":
            step = _rk4_polynomial(generator.toarray(), grid.dt)
            self._stride_op = _matrix_power(step, grid.output_stride)
            self._generator = None
        else:
            self._stride_op = None
            self._generator = generator

    def propagate(self, rho0: DensityMatrix) -> Trajectory:
        """Propagate a physical initial state; index-0 ADO starts at rho0,
        all higher ADOs at zero."""
        if rho0.dim != self._n:
            raise ValueError(f"initial state dimension {rho0.dim} != {self._n} sites")
        flow = self.propagate_matrices(rho0.matrix[None, :, :])
        traj = Trajectory(
            self.grid.output_times,
            flow[:, 0],
            Provenance(self.hamiltonian, self.bath, self.grid, self.depth),
        )
        traj.validate()
        return traj

    def propagate_matrices(self, mats: np.ndarray) -> np.ndarray:
        """Raw linear flow of a batch of initial index-0 matrices, shape
        (batch, n, n) -> (n_output, batch, n, n).  No physicality checks on
        the inputs; used for batched and difference propagation."""
        mats = np.asarray(mats, dtype=complex)
        batch, n = mats.shape[0], self._n
        nn = n * n
        y = np.zeros((self.dim, batch), dtype=complex)
        y[:nn] = mats.reshape(batch, nn).T

        n_out = self.grid.n_output
        out = np.empty((n_out, batch, n, n), dtype=complex)
        out[0] = mats
        if self.method == "dense":
            op = self._stride_op
            for k in range(1, n_out):
                y = op @ y
                self._check_finite(y)
                out[k] = y[:nn].T.reshape(batch, n, n)
        else:
            a = self._generator
            h = self.grid.dt
            stride = self.grid.output_stride
            for k in range(1, n_out):
                for _ in range(stride):
                    k1 = a @ y
                    k2 = a @ (y + (0.5 * h) * k1)
                    k3 = a @ (y + (0.5 * h) * k2)
                    k4 = a @ (y + h * k3)
                    y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                self._check_finite(y)
                out[k] = y[:nn].T.reshape(batch, n, n)
        return out

    def _check_finite(self, y: np.ndarray) -> None:
        peak = np.max(np.abs(y))
        if not np.isfinite(peak) or peak > DIVERGENCE_LIMIT:
            raise HeomDivergenceError(
                f"hierarchy diverged (peak ADO entry {peak:.3e}) at depth "
                f"{self.depth}, bath (lam={self.bath.lam}, tau={self.bath.tau}, "
                f"T={self.bath.temperature}), dt={self.grid.dt}"
            )


def heom_propagate(
    hamiltonian: SiteHamiltonian,
    bath: BathSpec,
    rho0: DensityMatrix,
    grid: TimeGrid,
    depth: int | None = None,
    method: str = "auto",
) -> Trajectory:
    """Open-system propagation of rho0 under the truncated hierarchy."""
    return HeomPropagator(hamiltonian, bath, grid, depth, method=method).propagate(rho0)


def closed_system_propagate(
    hamiltonian: SiteHamiltonian, rho0: DensityMatrix, grid: TimeGrid
) -> Trajectory:
    """Exact unitary evolution exp(-iHt/hbar) rho0 exp(+iHt/hbar) by
    eigendecomposition, evaluated directly at the output times."""
    evals, u = np.linalg.eigh(hamiltonian.matrix)
    w0 = u.T @ rho0.matrix @ u
    times = grid.output_times
    # relative phases exp(-i (e_k - e_l) t / hbar) applied elementwise
    omega = (evals[:, None] - evals[None, :]) / HBAR
    phases = np.exp(-1j * omega[None, :, :] * (times - grid.t_start)[:, None, None])
    mats = np.einsum("ik,tkl,jl->tij", u, w0[None] * phases, u, optimize=True)
    traj = Trajectory(times, mats, Provenance(hamiltonian, None, grid, None))
    traj.validate()
    return traj


@dataclass(frozen=True)
class ConvergenceReport:
    """Settled hierarchy depth and integrator step with the residuals that
    justified them."""

    depth: int
    dt: float
    depth_residual: float
    dt_residual: float


def convergence_report(
    hamiltonian: SiteHamiltonian,
    bath: BathSpec,
    rho0: DensityMatrix,
    grid: TimeGrid,
    start_depth: int | None = None,
    tol: float = 1e-4,
    max_depth: int = 25,
    min_dt: float = 0.0625,
) -> ConvergenceReport:
    """Deepen the hierarchy, then halve the step, until the physical matrix
    changes by less than tol (max over time and entries)."""

    def physical(depth: int, g: TimeGrid) -> np.ndarray:
        prop = HeomPropagator(hamiltonian, bath, g, depth)
        return prop.propagate_matrices(rho0.matrix[None])[:, 0]

    depth = start_depth if start_depth is not None else default_depth(hamiltonian.n_sites)
    current = physical(depth, grid)
    depth_residual = math.inf
    while depth < max_depth:
        deeper = physical(depth + 1, grid)
        depth_residual = float(np.max(np.abs(deeper - current)))
        depth += 1
        current = deeper
        if depth_residual < tol:
            break
    else:
        raise ConvergenceError(
            f"no depth convergence by depth {max_depth} (last residual {depth_residual:.2e}) "
            f"at bath (lam={bath.lam}, tau={bath.tau}, T={bath.temperature})"
        )

    g = grid
    dt_residual = math.inf
    while True:
        finer = g.refined(2)
        dt_residual = float(np.max(np.abs(physical(depth, finer) - current)))
        if dt_residual < tol:
            break
        g = finer
        current = physical(depth, g)
        if g.dt / 2 < min_dt:
            raise ConvergenceError(
                f"no step-size convergence down to dt={min_dt} fs "
                f"(last residual {dt_residual:.2e})"
            )
    return ConvergenceReport(depth=depth, dt=g.dt, depth_residual=depth_residual, dt_residual=dt_residual)


def resolve_depth(
    hamiltonian: SiteHamiltonian,
    bath: BathSpec,
    grid: TimeGrid,
    depth_cap: int = 25,
) -> int:
    """Depth choice for a single bath point: the harness-settled depth, or
    the cap when the point cannot settle (slow-bath strong-coupling corners
    keep a slow geometric tail; the cap is the documented fallback)."""
    rho0 = DensityMatrix.site_excitation(hamiltonian.n_sites, 1)
    try:
        return convergence_report(hamiltonian, bath, rho0, grid, max_depth=depth_cap).depth
    except ConvergenceError:
        return depth_cap


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def trajectory_to_csv(traj: Trajectory, stream=None) -> str | None:
    """Write a trajectory as CSV: time, upper-triangle density matrix entries
    (re/im), populations, fidelity to site N, pairwise site coherences and
    exciton-basis coherence.  12 significant digits."""
    n = traj.n_sites
    close = False
    if stream is None:
        stream = io.StringIO()
        close = True
    pairs = [(i, j) for i in range(n) for j in range(i, n)]
    offdiag = [(i, j) for i in range(n) for j in range(i + 1, n)]
    header = ["t_fs"]
    for i, j in pairs:
        header += [f"re_rho_{i + 1}{j + 1}", f"im_rho_{i + 1}{j + 1}"]
    header += [f"pop_{i + 1}" for i in range(n)]
    header += ["fidelity"]
    header += [f"C_s_{i + 1}{j + 1}" for i, j in offdiag]
    header += ["C_e"]
    stream.write(",".join(header) + "\n")

    pops = traj.populations()
    fid = traj.fidelity_series()
    c_e = traj.exciton_coherence_series()
    mats = traj.matrices
    for k, t in enumerate(traj.times):
        row = [_fmt(t)]
        for i, j in pairs:
            row += [_fmt(mats[k, i, j].real), _fmt(mats[k, i, j].imag)]
        row += [_fmt(p) for p in pops[k]]
        row += [_fmt(fid[k])]
        row += [_fmt(2.0 * abs(mats[k, i, j])) for i, j in offdiag]
        row += [_fmt(c_e[k])]
        stream.write(",".join(row) + "\n")
    if close:
        return stream.getvalue()
    return None
