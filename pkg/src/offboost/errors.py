"""Exception types shared across the package.

Each class maps to one CLI exit-code category (see cli.EXIT_CODES).
"""


class ConfigError(ValueError):
    """Invalid or unknown configuration field."""


class DimensionError(ValueError):
    """Array shapes do not line up with the declared architecture."""


class NumericError(ArithmeticError):
    """Non-finite value where a finite one is required; the step is rejected."""


class StateError(RuntimeError):
    """Operation called in the wrong order (consumed tape, step after terminal...)."""


class UnknownEnvError(ValueError):
    """Environment name not in the registry."""


class CoverageError(ValueError):
    """A reachable state has no dataset action support."""


class FormatError(ValueError):
    """Corrupt or version-mismatched file on disk."""
