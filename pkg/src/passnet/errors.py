"""Exception hierarchy shared across the package."""


class PassnetError(Exception):
    """Base class for all package errors."""


class DimensionError(PassnetError, ValueError):
    """Matrix blocks do not fit together."""


class TopologyError(PassnetError, KeyError):
    """Reference to an unknown node, edge, or parameter path."""

    def __str__(self):
        # KeyError quotes its message; keep it readable
        return str(self.args[0]) if self.args else ""


class InfeasibleError(PassnetError):
    """The synthesis LMIs admit no solution.

    ``constraint`` names the first constraint class whose addition made the
    problem infeasible.
    """

    def __init__(self, message, constraint=None):
        super().__init__(message)
        self.constraint = constraint


class SolverError(PassnetError):
    """The semidefinite solver did not terminate with a usable answer."""


class IllConditionedError(PassnetError):
    """A recovered matrix is too badly conditioned to invert reliably."""


class ConvergenceError(PassnetError):
    """An iterative method failed to converge."""


class SimulationDiverged(PassnetError):
    """State norm crossed the overflow guard during integration."""


class ConfigError(PassnetError):
    """Configuration or certificate file is missing or malformed."""


class SingularSystemError(PassnetError, ArithmeticError):
    """A linear solve hit a singular matrix (e.g. no unique equilibrium)."""
