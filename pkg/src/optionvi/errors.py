"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: bad configuration or malformed inputs
exit 2, I/O failures exit 1, numeric failures (non-finite values reaching a
kernel) exit 3.
"""


class OptionviError(Exception):
    """Base class for all package errors."""


class ConfigError(OptionviError, ValueError):
    """Invalid configuration value; message names the offending field."""


class InputError(OptionviError, ValueError):
    """Structurally invalid runtime input (empty trajectory, misaligned arrays)."""


class DimensionError(InputError):
    """Shape mismatch between operands; message names both shapes."""


class DomainError(OptionviError, ValueError):
    """Value outside a kernel's mathematical domain (nonpositive variance, b not in {0,1})."""


class NumericError(OptionviError, ArithmeticError):
    """Non-finite value produced by a kernel; message names the kernel."""


class SchemaError(OptionviError, ValueError):
    """Malformed serialized data; message carries file/line context where known."""


class CheckpointError(SchemaError):
    """Checkpoint file is malformed, truncated, or version-incompatible."""
