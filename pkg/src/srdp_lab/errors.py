"""Error taxonomy shared across the package.

UsageError: caller violated a precondition (bad shapes, empty batches, stale caches).
ConfigError: invalid configuration values (dimensions, schedule bounds, weights).
NumericError: non-finite values or numerical guards tripped at runtime.
"""


class UsageError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass
