"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: validation problems exit with 2,
numerical failures with 3 and exceeded wall-clock budgets with 4.
"""


class AnisoscatError(Exception):
    exit_code = 1


class ValidationError(AnisoscatError, ValueError):
    """Malformed input or a violated geometric constraint."""

    exit_code = 2


class GeometryError(ValidationError):
    pass


class NumericalError(AnisoscatError, RuntimeError):
    """A numerical stage failed, for example a singular system."""

    exit_code = 3


class SolverError(NumericalError):
    pass


class BudgetExceeded(AnisoscatError):
    exit_code = 4
