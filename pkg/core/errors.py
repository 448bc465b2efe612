"""
Error hierarchy shared by every module.

Each error carries the process exit code the command line surface returns
when the error escapes a command.
"""


class RobustTrainingError(Exception):
    """Base class for all errors raised by this project"""
    exit_code = 1


class ContractError(RobustTrainingError):
    """A precondition or contract of an operation was violated"""
    exit_code = 1


class DimensionError(ContractError):
    """Operand shapes do not agree"""


class ConfigError(RobustTrainingError):
    """Invalid or inconsistent configuration"""
    exit_code = 2


class DataError(RobustTrainingError):
    """Malformed, missing or unusable input data"""
    exit_code = 3


class NumericError(RobustTrainingError):
    """Non-finite values appeared during computation"""
    exit_code = 4


class ValidationError(DataError):
    """A record violates a domain invariant of its type"""
