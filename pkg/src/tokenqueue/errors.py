"""Exception hierarchy shared by the package."""


class TokenQueueError(Exception):
    """Base class for all errors raised by tokenqueue."""


class ConfigurationError(TokenQueueError, ValueError):
    """The model description is malformed or exceeds a configured limit."""


class NegativeRate(ConfigurationError):
    pass


class UnreachableState(TokenQueueError, ValueError):
    """A state violates the reachability invariant (inactive customers nobody can be)."""


class NotStable(TokenQueueError):
    def __init__(self, verdict):
        super().__init__(f"model is not stable: {verdict}")
        self.verdict = verdict


class ValidationFailed(TokenQueueError):
    def __init__(self, report):
        super().__init__(f"model failed validation:\n{report.render()}")
        self.report = report


class NotIndistinguishable(TokenQueueError):
    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class SingularSystem(TokenQueueError):
    def __init__(self, message, states=()):
        super().__init__(message)
        self.states = list(states)


class Divergence(TokenQueueError, ArithmeticError):
    """A transform was evaluated outside its region of convergence."""


class DomainError(TokenQueueError, ValueError):
    pass


class OrderAssumptionViolated(TokenQueueError):
    """Sojourn-time transforms need same-class customers to depart in arrival order."""


class UnsupportedG(TokenQueueError):
    """No built-in expression for the holder-class law G is available for this model."""
