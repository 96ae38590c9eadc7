class AggDiffError(Exception):
    """Base exception for aggdiff errors."""
    pass

class GridError(AggDiffError):
    """Raised when a grid, a field or a field dump is invalid."""
    pass

class ModelError(AggDiffError):
    """Raised when an energy, potential, kernel or mobility spec is inadmissible."""
    pass

class SolverError(AggDiffError):
    """Raised when a time step cannot be completed."""
    pass

class ConvergenceError(SolverError):
    """Raised when the implicit nonlinear solve fails after every dt halving."""
    pass

class StabilityError(SolverError):
    """Raised when an explicit step would violate its positivity bound."""
    pass

class StationaryError(AggDiffError):
    """Raised when steady-state or inequality tooling fails."""
    pass

class NoMinimiserError(StationaryError):
    """Raised when no mass constant yields a normalizable minimiser."""
    pass

class TransportError(AggDiffError):
    """Raised by optimal-transport and particle routines."""
    pass

class ConfigError(AggDiffError):
    """Raised when a run configuration cannot be parsed or is inconsistent."""

    def __init__(self, message: str, lineno: int = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)

class PlotError(AggDiffError):
    """Raised when a plot input is malformed or plotting is unavailable."""
    pass
