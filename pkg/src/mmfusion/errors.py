"""Exception hierarchy shared across the package.

Every error raised on purpose derives from :class:`MMFusionError` so callers
(the CLI in particular) can map categories to exit codes.
"""


class MMFusionError(Exception):
    """Base class for all deliberate errors."""

    exit_code = 1
    category = "error"


class DimensionError(MMFusionError, ValueError):
    """Operand shapes are incompatible."""

    exit_code = 3
    category = "dimension"


class ContractError(MMFusionError, ValueError):
    """A precondition of an operation was violated."""

    exit_code = 3
    category = "contract"


class ConfigError(MMFusionError, ValueError):
    """A configuration value is out of its valid range."""

    exit_code = 2
    category = "config"


class ValidationError(MMFusionError, ValueError):
    """A data record holds an out-of-range or malformed field."""

    exit_code = 4
    category = "validation"


class NonFiniteError(MMFusionError, FloatingPointError):
    """A forward computation produced NaN or Inf."""

    exit_code = 5
    category = "nonfinite"
