"""Exception hierarchy shared by all modules.

Exit-code mapping used by the CLI: ConfigError and friends -> 1,
data/format problems -> 2, DivergenceError -> 3.
"""


class HopclError(Exception):
    """Base class for all library errors."""


class ShapeError(HopclError):
    """Operands have incompatible dimensions."""


class LabelError(HopclError):
    """A class label is outside the valid range."""


class ConfigError(HopclError):
    """Invalid configuration value or unknown config key."""


class DataError(HopclError):
    """Invalid or empty dataset / split."""


class EmptySequenceError(DataError):
    """A token sequence with zero tokens was supplied."""


class FormatError(DataError):
    """A file does not match the expected binary format."""


class CorruptionError(DataError):
    """A file is truncated or fails its checksum."""


class ValidationError(DataError):
    """A stored sample violates a dataset invariant."""


class RoutingError(HopclError):
    """Problem-id routing violated (missing or unknown id)."""


class StateError(HopclError):
    """Model state transition not allowed (e.g. double init)."""


class DivergenceError(HopclError):
    """Training produced a non-finite loss."""


class SizeError(HopclError):
    """A matrix is too small for the requested computation."""
