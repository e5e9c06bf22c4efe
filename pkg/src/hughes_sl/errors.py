"""Exception hierarchy shared by the solver modules."""


class HughesError(Exception):
    """Base class for all solver errors."""


class DomainError(HughesError, ValueError):
    """A query point lies outside the computational rectangle."""


class ConfigurationError(HughesError, ValueError):
    """Invalid scenario or solver configuration.

    ``path`` names the offending config field when known.
    """

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class ReachabilityError(HughesError, RuntimeError):
    """Some interior node cannot reach the boundary under a policy."""


class ConvergenceError(HughesError, RuntimeError):
    """An iterative solver hit its iteration cap."""


class InternalError(HughesError, RuntimeError):
    """An internal consistency check failed (indicates a bug)."""
