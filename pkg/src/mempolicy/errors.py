"""Exception hierarchy shared by every subpackage.

CLI exit codes are attached to the classes so the command layer can map
failures without a lookup table.
"""


class MemPolicyError(Exception):
    exit_code = 1


class ConfigError(MemPolicyError, ValueError):
    exit_code = 2


class DataError(MemPolicyError, ValueError):
    exit_code = 3


class NumericError(MemPolicyError, ArithmeticError):
    exit_code = 4


class DimensionError(MemPolicyError, ValueError):
    exit_code = 2


class DeterminismError(MemPolicyError):
    pass


class PreconditionError(MemPolicyError):
    pass


class OrderingError(MemPolicyError, ValueError):
    pass


class LifecycleError(MemPolicyError, RuntimeError):
    pass


class GenerationError(MemPolicyError, RuntimeError):
    exit_code = 3


class CapabilityError(MemPolicyError):
    pass
