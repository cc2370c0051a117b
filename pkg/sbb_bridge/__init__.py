"""
sbb_bridge
Numerical solver for the one-dimensional Schroedinger-Bridge-Bass transport problem.
"""

from .bridge import SbbSolution, assemble, cost_integrand, feedback, hamiltonian, hjb_residual
from .config import GaussianSpec, RunConfig, SolverConfig, load_run_config
from .dual_solver import DualState, dual_gradient, dual_objective, solve
from .errors import SbbError
from .heat import HeatField, build_heat_field, kappa, log_heat_convolve
from .measures import Grid, GridFunction, GridMeasure, TimeGrid, gaussian_measure, pushforward
from .moreau import beta_convex_project, is_beta_convex, moreau_minus, moreau_plus
from .primal_sim import SimulationReport, linear_coupling_bound, martingale_diagnostic, simulate
from .reference import gaussian_quadratic_oracle, gaussian_sb_value, sinkhorn_sb

__version__ = "1.0.0"
