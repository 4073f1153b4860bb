"""Exception types shared across the package."""


class GFlowNetError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(GFlowNetError):
    """Raised when a configuration file or field is invalid."""


class EnvironmentMismatchError(GFlowNetError):
    """Raised when states, actions, or policies disagree with the environment."""


class InvalidTransitionError(EnvironmentMismatchError):
    """Raised when a transition is not an edge of the environment DAG."""


class EnumerationBudgetError(GFlowNetError):
    """Raised when exact enumeration is requested on a too-large state space."""


class NonFiniteLossError(GFlowNetError):
    """Raised when a training loss evaluates to NaN or infinity.

    Carries the offending trajectory (when it can be isolated) so the
    caller can log it and skip the step.
    """

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class NonFiniteLogitError(GFlowNetError):
    """Raised when a policy produces non-finite logits for a state."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class DegenerateMetricError(GFlowNetError):
    """Raised when a metric is undefined, e.g. a correlation of a constant."""


class NotEnumerableError(EnumerationBudgetError):
    """Raised when an exact computation needs enumeration the environment refuses."""
