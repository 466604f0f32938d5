"""Exception types shared across the package."""


class BufcfaError(Exception):
    """Base class for all package-specific errors."""


class StructureError(BufcfaError, ValueError):
    """A matrix, pattern, or constraint set is structurally inconsistent."""


class NumericalError(BufcfaError, ArithmeticError):
    """A numerical precondition failed (non-positive-definite matrix, etc.)."""


class InvalidPopulationError(BufcfaError, ValueError):
    """A population model cannot be standardized (communality >= 1)."""


class NotTestableError(BufcfaError, ValueError):
    """A model has negative degrees of freedom."""


class ParseError(BufcfaError, ValueError):
    """A model or grid document failed to parse.

    Carries all diagnostics, each prefixed with its 1-based line number.
    """

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


class InputError(BufcfaError, ValueError):
    """A data file is malformed or inconsistent with its declaration."""
