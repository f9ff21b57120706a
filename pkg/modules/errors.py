"""
Solver Errors
=============

Exception hierarchy shared by every solver module. Library code raises these;
only the command-line layer turns them into exit codes.
"""


class SolverError(Exception):
    """Base class for all solver errors"""


class InfeasiblePointError(SolverError, ValueError):
    """A point outside the feasible set was passed where feasibility is required"""


class PreconditionError(SolverError, ValueError):
    """A documented guard (for example eps <= diam_p**p * lambda) does not hold"""


class DimensionMismatchError(SolverError, ValueError):
    """Vector or tensor shapes do not agree"""


class SamplingUnsupportedError(SolverError, NotImplementedError):
    """The feasible set cannot draw random points"""


class OracleError(SolverError, RuntimeError):
    """An oracle could not produce a value, gradient or subproblem solution"""


class GradientCheckError(SolverError, AssertionError):
    """Analytic gradient disagrees with central finite differences"""


class ConfigError(SolverError, ValueError):
    """A run configuration is invalid or inconsistent"""
