"""Normal-map stochastic proximal gradient methods and convergence diagnostics."""

from .data import SparseDesign, gen_synthetic_classification, load_libsvm, parse_libsvm, serialize_libsvm
from .diagnostics import descent_audit, merit, time_indices, universal_time_window, window_errors, xi_from_lipschitz
from .problems import SyntheticSpec, make_problem, minibatch_sampler
from .prox import CompositeProblem, ElasticNetProx, L1Prox, ZeroProx, natural_residual, normal_map
from .solvers import RunConfig, StepSchedule, deterministic_prox_grad, run_solver

__version__ = "0.1.0"
