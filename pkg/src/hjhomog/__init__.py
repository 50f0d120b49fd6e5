"""Numerical laboratory for stochastic homogenization of viscous HJ equations.

Subpackages and modules:
    environment     random coefficient fields on the torus and their bounds
    hjsolver        monotone finite-difference solvers (metric, cell, IVP)
    homogenize      effective Hamiltonian by metric and cell routes
    oracle1d        quadrature reference for 1D diffusion-free cell problems
    convexanalysis  discrete Legendre transforms and Hopf-Lax evaluation
    ldp             Feynman-Kac partition functions and rate estimation
    cli             experiment runner with manifests
"""

__version__ = "0.1.0"

from .environment import (
    CoefficientSet,
    EnvSpec,
    LocalBounds,
    evaluate_H,
    load_coefficient_set,
    load_env_spec,
    local_bounds,
    sample_environment,
    save_coefficient_set,
    shift,
    weak_coercivity_diagnostic,
)
from .errors import (
    ConfigurationError,
    DomainError,
    SolverError,
    SubcriticalLevelError,
)
from .homogenize import (
    AuditReport,
    EffectiveTable,
    MbarTable,
    audit_effective_table,
    build_effective_table,
    build_mbar_table,
    estimate_Hbar_cell,
    estimate_Hbar_metric,
    estimate_Hstar,
    estimate_mbar,
    load_effective_table,
    support_function,
)
from .convexanalysis import (
    ConvexTable,
    biconjugate,
    hopf_lax,
    lagrangian_from_mbar,
    legendre_transform,
    load_convex_table,
)
from .ldp import (
    PathEnsemble,
    SetDescriptor,
    empirical_rate,
    hopf_cole_residual,
    ldp_prediction,
    partition_function,
    pde_partition_function,
    q_partition,
    simulate_paths,
    survival_rate_check,
)
