"""Exception hierarchy. Each family maps to a stable CLI exit code."""


class RhoFlowError(Exception):
    exit_code = 1


class UsageError(RhoFlowError):
    exit_code = 2


class DataError(RhoFlowError, ValueError):
    """Bad, degenerate or schema-violating input data."""

    exit_code = 3


class SchemaError(DataError):
    pass


class DomainError(RhoFlowError, ValueError):
    """Argument outside the mathematical domain of an operation."""

    exit_code = 2


class NumericError(RhoFlowError, ArithmeticError):
    """Non-finite values or diverging optimisation."""

    exit_code = 4


class TrainingDivergedError(NumericError):
    pass


class StorageError(RhoFlowError, OSError):
    exit_code = 5
