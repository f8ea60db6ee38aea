"""Exception types shared across the package.

The CLI maps these onto exit codes: usage/config problems exit 1, data
problems exit 2, numeric failures exit 3.
"""


class PpcError(Exception):
    """Base class for all package errors."""


class ConfigError(PpcError):
    """Invalid configuration, spec, or command usage."""


class DataError(PpcError):
    """Unreadable, malformed, or insufficient input data."""


class MeshFormatError(DataError):
    """Mesh file in an unsupported or corrupted format."""


class NumericError(PpcError):
    """Non-finite values encountered where finite math is required."""
