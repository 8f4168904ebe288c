"""Excitation-energy-transfer dynamics in small pigment aggregates.

Hierarchical (high-temperature Drude-Lorentz) propagation of 2- and 3-site
exciton systems, environmental-parameter sweeps for transfer-efficiency
optima, BLP non-Markovianity estimation and l1 coherence measures.
"""

__version__ = "0.1.0"

from .quantum import (  # noqa: F401
    BathSpec,
    DensityMatrix,
    ExcitonBasis,
    NAMED_SYSTEMS,
    SiteHamiltonian,
    boltzmann_equilibrium,
    build_site_hamiltonian,
    exciton_basis,
    fidelity,
    l1_coherence,
    local_coherence,
    trace_distance,
)
from .units import HBAR, K_BOLTZMANN, UnitConstants  # noqa: F401
from .heom import (  # noqa: F401
    HeomPropagator,
    TimeGrid,
    Trajectory,
    closed_system_propagate,
    convergence_report,
    heom_propagate,
    resolve_depth,
)
from .blp import blp_estimate, evaluate_pair, sample_orthogonal_pair, sigma_integral  # noqa: F401
from .sweep import (  # noqa: F401
    SweepGrid,
    closed_and_equilibrium_refs,
    default_sweep_grid,
    extract_optimum,
    run_sweep,
    save_sweep,
)
