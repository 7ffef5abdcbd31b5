"""Exception types shared across the package.

Every error raised intentionally by this package derives from
:class:`KfacLabError`, so callers (notably the CLI) can map failure classes
to exit codes without string matching.
"""


class KfacLabError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(KfacLabError, ValueError):
    """Operands have incompatible or invalid dimensions."""


class ArgumentError(KfacLabError, ValueError):
    """An argument value is outside the supported domain."""


class CapacityError(KfacLabError, ValueError):
    """An operation would materialize more elements than its cap allows."""


class NumericError(KfacLabError, ArithmeticError):
    """A numerical routine failed (non-SPD input, no convergence, bad values)."""


class OrderingError(KfacLabError, RuntimeError):
    """An operation was called before the state it relies on exists."""


class DataFormatError(KfacLabError, ValueError):
    """A data file does not match its documented layout."""


class ConfigError(KfacLabError, ValueError):
    """A run configuration is missing, malformed, or inconsistent."""
