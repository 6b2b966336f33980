"""Exception hierarchy shared by every module.

Exit codes used by the command line are attached to the classes so the CLI
can map any raised error without a lookup table.
"""


class BoAugError(Exception):
    exit_code = 1


class DomainError(BoAugError, ValueError):
    """An argument lies outside the domain of an operation."""

    exit_code = 2


class ConfigError(BoAugError):
    exit_code = 2


class DatasetFormatError(BoAugError, ValueError):
    exit_code = 2


class PolicySchemaError(ConfigError):
    """A policy document does not follow the policy JSON layout."""


class EvaluationError(BoAugError):
    """A policy evaluation could not be completed (timeouts, crashed child)."""

    exit_code = 3


class EvaluatorLaunchError(EvaluationError):
    pass


class ProtocolError(EvaluationError):
    pass


class NumericalError(BoAugError, ArithmeticError):
    exit_code = 4
