"""
ncsolve Solver Modules
======================

This package contains the core modules of the solver toolkit:

- model: oracles, smoothness parameters and problem instances
- geometry: feasible sets, linear and powered proximal subproblems
- stationarity: improvement measures and certificates
- deterministic: conditional gradient and powered proximal methods
- stochastic: mini-batch and randomized smoothing variants
- multiblock: block methods with Jacobian and MBI updates
- applications: sparse tensor PCA and penalized zero-variance discriminants
- verification: property suites with counterexample reports
- experiments: run configurations, planner tables and benchmark batches
"""

__version__ = "1.0.0"

from .deterministic import SolveConfig, run_alg1, run_alg1_concave, run_alg2
from .errors import ConfigError, PreconditionError, SolverError
from .model import ProblemInstance, SmoothnessParams
from .multiblock import BlockProblem, UpdateRule, run_alg5, run_alg6
from .stochastic import run_alg3, run_alg4

__all__ = [
    "ProblemInstance",
    "SmoothnessParams",
    "BlockProblem",
    "UpdateRule",
    "SolveConfig",
    "run_alg1",
    "run_alg1_concave",
    "run_alg2",
    "run_alg3",
    "run_alg4",
    "run_alg5",
    "run_alg6",
    "SolverError",
    "PreconditionError",
    "ConfigError",
]
