"""Exception types raised across the package."""


class DppError(Exception):
    """Base class for all package errors."""


class InvalidInputError(DppError, ValueError):
    pass


class EmptyScheduleError(DppError):
    """The system has no node able to transmit."""


class SimulationError(DppError):
    pass


class IncompleteTraceError(DppError, KeyError):
    """A timestamp required by a span definition is missing from the trace."""

    def __str__(self):
        return Exception.__str__(self)


class InvalidRolesError(DppError, ValueError):
    pass


class DegenerateScheduleError(DppError, ZeroDivisionError):
    """A span denominator is too small to give a meaningful value."""


class InvalidPairingError(DppError, ValueError):
    pass


class OutOfDomainError(DppError, ValueError):
    pass


class InsufficientDataError(DppError, ValueError):
    """Not enough anchors or values to determine a position."""


class ConvergenceError(DppError):
    pass


class MetricInfeasibleError(DppError, ValueError):
    """A distance set cannot be realized in the requested dimension."""


class DegenerateGeometryError(DppError, ValueError):
    pass


class ScenarioError(DppError, ValueError):
    """Scenario file could not be parsed or validated."""
