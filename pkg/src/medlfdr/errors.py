"""Exception types shared across the package.

The CLI maps these onto distinct exit codes, so keep the hierarchy flat:
configuration problems, data problems, and numerical failures are the
three externally visible categories.
"""


class ConfigError(ValueError):
    """Invalid run configuration (bad flags, impossible option combinations)."""


class DataError(ValueError):
    """Input data violates a whole-dataset precondition."""


class NumericError(RuntimeError):
    """A numerical procedure failed beyond per-hypothesis flagging."""
