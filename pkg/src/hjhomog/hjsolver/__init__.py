from .grids import SolverGrid
from .flux import numerical_hamiltonian, gradient_bound_per_axis
from .stationary import (MetricField, DiscountedField, solve_metric,
                         solve_discounted, tilde_m, oscillation, compute_Kmu,
                         cone_slope)
from .evolution import EvolutionField, solve_ivp

__all__ = [
    "SolverGrid", "numerical_hamiltonian", "gradient_bound_per_axis",
    "MetricField", "DiscountedField", "solve_metric", "solve_discounted",
    "tilde_m", "oscillation", "compute_Kmu", "cone_slope",
    "EvolutionField", "solve_ivp",
]
