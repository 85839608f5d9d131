"""
Error types shared across SSD-Net.

Library code raises these; the command layer maps them to exit codes.
"""

from typing import Optional


class SSDNetError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(SSDNetError):
    """Incompatible or invalid tensor shapes."""


class NumericError(SSDNetError):
    """NaN/Inf produced or consumed, or an exact division by zero."""


class TapeError(SSDNetError):
    """Backward called on a value that is not recorded on a tape."""


class InputError(SSDNetError):
    """A value outside the documented domain of an operation."""


class ConfigError(SSDNetError):
    """Invalid or unknown configuration."""


class OptimizerError(SSDNetError):
    """Optimizer state or gradients inconsistent with the parameters."""


class PPMError(SSDNetError):
    """Malformed PPM file. Carries the byte offset where parsing failed."""

    def __init__(self, message: str, offset: int, path: Optional[str] = None):
        self.offset = offset
        self.path = path
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{message} (at byte {offset})")


class CheckpointError(SSDNetError):
    """Base class for checkpoint persistence failures."""


class CheckpointMagicError(CheckpointError):
    """File does not start with the checkpoint magic."""


class CheckpointVersionError(CheckpointError):
    """Unsupported checkpoint format version."""


class CheckpointTruncatedError(CheckpointError):
    """File ended before the declared content."""


class CheckpointChecksumError(CheckpointError):
    """Stored checksum does not match the file content."""


class CheckpointMismatchError(CheckpointError):
    """Stored tensors do not match the target model's parameters."""
