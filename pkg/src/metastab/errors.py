"""Exception types mapped onto CLI exit codes."""


class MetastabError(Exception):
    """Base class for tool errors."""

    exit_code = 1


class ModelAssumptionError(MetastabError):
    """A standing assumption on the potential is violated (degenerate Hessian,
    unequal saddle heights, disconnected wells, fewer than two deepest wells)."""

    exit_code = 3


class UsageError(MetastabError):
    """Bad input or a missing upstream artifact."""

    exit_code = 2


class ConvergenceError(MetastabError):
    """An iterative numerical routine failed to converge."""

    exit_code = 1
