"""Exception hierarchy shared by every ddam_sim module.

Errors cross process boundaries when a sweep runs on a worker pool, so every class that
takes extra constructor arguments keeps them and rebuilds itself from them when unpickled.
"""

from typing import Any


class DdamError(Exception):
    """Base class for all simulator errors."""

    _init_args: tuple[Any, ...] | None = None

    def __reduce__(self):
        if self._init_args is None:
            return super().__reduce__()
        return type(self), self._init_args


class ConfigurationError(DdamError):
    """Invalid configuration: dimensions, missing loss parts, bad parameters."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self._init_args = (message, path, line)
        self.path = path
        self.line = line
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{location}{message}")


class WeightValidationError(ConfigurationError):
    """Logical weight matrix is not row-stochastic."""


class NumericError(DdamError):
    """Non-finite values reached a numerical kernel."""


class TopologyError(DdamError):
    """Graph is disconnected or a routing target cannot be reached."""

    def __init__(self, message: str, pair: tuple[int, int] | None = None):
        self._init_args = (message, pair)
        self.pair = pair
        super().__init__(message)


class ResourceError(DdamError):
    """A search ran out of its node budget before proving optimality."""

    def __init__(self, message: str, partial_best: Any = None):
        self._init_args = (message, partial_best)
        self.partial_best = partial_best
        super().__init__(message)


class DataError(DdamError):
    """Input data is incomplete or inconsistent with the run."""


class TrafficGapError(DataError):
    """Traffic records are missing grid samples."""

    def __init__(self, message: str, missing: list[Any]):
        self._init_args = (message, missing)
        self.missing = missing
        super().__init__(message)


class TrafficParseError(DataError):
    """A traffic CSV row could not be parsed."""

    def __init__(self, message: str, line: int):
        self._init_args = (message, line)
        self.line = line
        super().__init__(f"line {line}: {message}")


class ProtocolError(DdamError):
    """A protocol step received incomplete inputs."""


class InvariantViolation(DdamError):
    """Internal simulator invariant broken; the run must abort."""


class OptimizationError(DdamError):
    """Hindsight solver did not converge."""

    def __init__(self, message: str, grad_norm: float):
        self._init_args = (message, grad_norm)
        self.grad_norm = grad_norm
        super().__init__(f"{message} (final gradient-mapping norm {grad_norm:.3e})")


class AnalyticsError(DdamError):
    """Regret or NMSE inputs are inconsistent."""


class EmissionError(DdamError):
    """Figure data cannot be emitted from the given reports."""


class SweepPointError(DdamError):
    """Error raised inside one sweep point, tagged with its coordinates."""

    def __init__(self, coordinates: dict[str, Any], cause: Exception):
        self._init_args = (coordinates, cause)
        self.coordinates = coordinates
        self.cause = cause
        coords = ", ".join(f"{k}={v}" for k, v in coordinates.items())
        super().__init__(f"[{coords}] {type(cause).__name__}: {cause}")


class WorkerCrashError(DdamError):
    """A sweep worker process died without reporting an error."""

    def __init__(self, coordinates: dict[str, Any], detail: str):
        self._init_args = (coordinates, detail)
        self.coordinates = coordinates
        coords = ", ".join(f"{k}={v}" for k, v in coordinates.items())
        super().__init__(f"[{coords}] worker failed: {detail}")
