"""Exception types shared across the package."""


class IgaError(Exception):
    """Base class for all package errors."""


class DomainError(IgaError, ValueError):
    """Parameter outside the admissible domain (e.g. u outside [0, 1])."""


class ValidationError(IgaError, ValueError):
    """Malformed input data."""


class StructuralError(IgaError, RuntimeError):
    """Discretisation cannot be built (non-conforming interfaces, singular maps)."""


class AssemblyError(IgaError, RuntimeError):
    """Failure during element integration."""


class SolverError(IgaError, RuntimeError):
    """Linear solver precondition failure."""


class ConvergenceError(IgaError, RuntimeError):
    """An iterative scheme did not reach its tolerance where that is fatal."""

    def __init__(self, message, position=None, history=None):
        super().__init__(message)
        self.position = position
        self.history = history


class ParseError(ValidationError):
    """Machine or config file could not be parsed."""

    def __init__(self, message, line=None, column=None):
        loc = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + loc)
        self.line = line
        self.column = column
