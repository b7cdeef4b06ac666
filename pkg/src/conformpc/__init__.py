"""Data-driven predictive control that keeps closed-loop behavior close to the learning data."""

from .constraints import Polyhedron, box
from .deepc import (DeePCConfig, DeePCController, DeePCData, IniWindow, build_deepc_data,
                    build_deepc_problem, psi_map)
from .exceptions import InputError, NumericalError, SolverFailure
from .mpc import MPCConfig, MPCController, build_mpc_problem
from .plant import (BenchmarkPlant, LinearPlant, Trajectory, collect_data,
                    simulate_closed_loop)
from .solver import CompositeProblem, HingeTerm, L1Term, SolverResult, kkt_residuals, solve
from .stats import (GaussianSummary, chi2_confidence_radius, empirical_summary, hankel,
                    mahalanobis_sq)
from .sysid import LinearModel, fit_linear_model, lqr_gain, solve_dare

__version__ = "0.1.0"
