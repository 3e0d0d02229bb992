"""Exception taxonomy shared across the package.

CLI exit-code mapping: ConfigurationError -> 2, data/compatibility errors
(CompatibilityError, FileFormatError) -> 3, internal check failures -> 4.
"""


class BeamwatchError(Exception):
    """Base class for all package errors."""


class ConfigurationError(BeamwatchError):
    """Invalid configuration value or inconsistent config combination."""


class ValidationError(BeamwatchError):
    """Bad runtime input: out-of-range index, unknown id, wrong sequence length."""


class ShapeError(ValidationError):
    """Tensor/array dimension mismatch; message names both shapes."""


class CompatibilityError(BeamwatchError):
    """Checkpoint and dataset disagree (codebook fingerprint, architecture)."""


class NumericsError(BeamwatchError):
    """Non-finite value detected while NUMERICS_CHECK_FINITE=1."""


class FileFormatError(BeamwatchError):
    """Base for on-disk format problems (dataset and checkpoint files)."""


class BadMagicError(FileFormatError):
    """File does not start with the expected magic bytes."""


class BadVersionError(FileFormatError):
    """File version not supported by this build."""


class TruncatedFileError(FileFormatError):
    """File ends before the advertised payload."""


class ChecksumError(FileFormatError):
    """A record or blob CRC does not match its payload."""
