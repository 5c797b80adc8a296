"""Exception hierarchy shared across the package."""


class ZigHmmError(ValueError):
    """Base class for all errors raised by zigmhmm."""


class EstimationError(ZigHmmError):
    """A maximum-likelihood update could not be computed (degenerate input)."""


class DegenerateFitError(EstimationError):
    """An EM run collapsed: a component or state lost (almost) all its weight.

    ``diagnostics`` carries the offending occupancies so callers can log them.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class ReducibleChainError(ZigHmmError):
    """A transition matrix is not irreducible."""

    def __init__(self, message, unreachable=()):
        super().__init__(message)
        self.unreachable = tuple(unreachable)


class ZeroLikelihoodError(ZigHmmError):
    """Every hidden state assigns zero likelihood to an observation."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class ParseError(ZigHmmError):
    """Malformed input file; ``line`` is 1-based and includes the header."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
