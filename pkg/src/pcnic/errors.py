"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: usage problems exit 1, data and
container format problems exit 2, numerical failures (NaN/Inf) exit 3.
"""


class PcnicError(Exception):
    """Base class for all package-specific errors."""


class UsageError(PcnicError):
    """Bad command-line arguments or an unusable configuration."""


class FormatError(PcnicError):
    """Malformed input data, container, or bitstream."""


class NumericalError(PcnicError):
    """A computation produced NaN or Inf where finite values are required."""
