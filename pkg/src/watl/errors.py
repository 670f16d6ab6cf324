"""Exception hierarchy shared by the library and the CLI."""


class WatlError(Exception):
    """Base class for all errors raised by :mod:`watl`."""


class InvalidArgument(WatlError, ValueError):
    """An argument violates a documented precondition."""


class NumericalError(WatlError, ArithmeticError):
    """A numerical step could not be completed."""


class SingularMatrixError(NumericalError):
    """Covariate covariance is not positive definite."""


class DegenerateWindowError(NumericalError):
    """Local kernel window carries too little spread to fit a local line."""


class DataError(WatlError):
    """Input files are missing, malformed or inconsistent.

    The message names the offending file and, when known, the line.
    """

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
