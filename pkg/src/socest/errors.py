"""Exception hierarchy.

Every error carries a ``category`` used by the CLI for the
``error: <category>: <detail>`` line and the exit code.
"""


class SocError(Exception):
    category = "error"
    exit_code = 1


class ValidationError(SocError, ValueError):
    """Input violates a documented invariant."""

    category = "validation"

    def __init__(self, message, path=None, row=None):
        self.detail = message
        self.path = path
        self.row = row
        where = []
        if path is not None:
            where.append(str(path))
        if row is not None:
            where.append(f"row {row}")
        if where:
            message = f"{' '.join(where)}: {message}"
        super().__init__(message)


class ParseError(ValidationError):
    category = "parse"


class ConfigError(ValidationError):
    category = "config"


class InsufficientDataError(ValidationError):
    category = "insufficient-data"


class InvalidDataError(ValidationError):
    category = "invalid-data"


class NoStepError(ValidationError):
    category = "no-step"


class NumericalError(SocError, ArithmeticError):
    category = "numerical"
    exit_code = 3


class DegenerateUpdateError(NumericalError):
    category = "degenerate-update"

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class FitFailureError(NumericalError):
    category = "fit-failure"

    def __init__(self, message, best_residual_v=float("nan")):
        self.best_residual_v = best_residual_v
        super().__init__(f"{message} (best residual {best_residual_v:.3g} V)")


class DegenerateFitError(NumericalError):
    category = "degenerate-fit"
