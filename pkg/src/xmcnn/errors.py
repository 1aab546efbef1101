"""Exception types raised across the package."""


class XMCNNError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(XMCNNError, ValueError):
    pass


class InconsistentRelevanceError(XMCNNError, ValueError):
    """Two triples assign opposite relevance to the same pair."""

    def __init__(self, a, b):
        self.pair = (a, b)
        super().__init__(f"conflicting relevance values for pair ({a}, {b})")


class NumericalError(XMCNNError, ArithmeticError):
    pass


class DivergenceError(NumericalError):
    """The augmented Lagrangian became non-finite during a solve.

    The partial trace is kept on the exception so callers can dump it.
    """

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = list(trace)


class UndefinedMetricError(XMCNNError, ValueError):
    """Metric needs at least one relevant database item."""


class DatasetFormatError(XMCNNError, ValueError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class ModelFormatError(XMCNNError, ValueError):
    pass


class ModelVersionError(ModelFormatError):
    def __init__(self, found, expected):
        self.found = found
        self.expected = expected
        super().__init__(f"model file version {found} is not supported (expected version {expected})")
