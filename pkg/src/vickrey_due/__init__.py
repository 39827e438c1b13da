"""Point-queue network loading and dynamic user equilibrium on dyadic grids."""

from .estimators import DynamicUserEquilibrium, NetworkLoader
from .link import LinkParams, LinkState, load_link, ode_oracle, split_exit
from .loading import (LoadingError, LoadingResult, PathFlowVector, delay_upper_bound, load_network,
                      path_delay, path_exit_time)
from .network import Network, NetworkError, build_network, f_max, incidence
from .penalty import (PenaltyError, QuadraticPenalty, SmoothedLinearPenalty, effective_path_delay,
                      flow_bound_constant, make_penalty, psi_decomposition, psi_min_prime)
from .pwl import PiecewiseLinearCurve, StepProfile, compose, cumulative, running_min
from .scenario import Scenario, ScenarioError, load_scenario, parse_scenario
from .solver import (FeasibleSetSpec, SolverReport, cell_average_psi, equilibrium_gap, project_feasible,
                     refine, solve_fixed_point, verify_due)

__version__ = "0.1.0"
