"""Exception types shared across the package."""


class SemigeoError(Exception):
    """Base class for every error this package raises on purpose."""


class InvalidSpec(SemigeoError):
    """A chart or grid description violates its constraints."""


class GridTooCoarse(SemigeoError):
    """An operation needs more samples along an axis than the grid has."""


class OutOfDomain(SemigeoError):
    """A query point lies outside the grid hull."""


class FieldSyntaxError(SemigeoError):
    """Malformed field expression text.

    ``position`` is the 0-based character offset where parsing failed.
    """

    def __init__(self, message, position):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class UnknownSymbol(FieldSyntaxError):
    """An identifier that is neither a coordinate nor a known function."""


class VariableOutOfRange(FieldSyntaxError):
    """A coordinate variable beyond the chart dimension (e.g. x3 when n=2)."""


class EvalError(SemigeoError):
    """Expression evaluation hit an invalid operation or non-finite value."""


class DegenerateMetric(SemigeoError):
    """Metric determinant below tolerance at some node."""

    def __init__(self, message, node=None, det=None):
        super().__init__(message)
        self.node = node
        self.det = det


class NotSemigeodesic(SemigeoError):
    """A metric fails the g_11 = e, g_1j = 0 block structure check."""


class InvalidInit(SemigeoError):
    """Hypersurface initial data violates its invariants."""


class LeftDomain(SemigeoError):
    """A marched curve left the tube; ``exit_point`` is where it escaped."""

    def __init__(self, message, exit_point=None):
        super().__init__(message)
        self.exit_point = exit_point


class ConfigError(SemigeoError):
    """Bad run configuration; ``line`` is the 1-based offending line if known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
