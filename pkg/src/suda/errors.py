"""Exception types shared across the package."""


class SudaError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(SudaError, ValueError):
    """Operand shapes are incompatible."""


class UtteranceTooShortError(SudaError, ValueError):
    """Input has fewer samples or frames than the operation needs."""


class ManifestError(SudaError, ValueError):
    """Corpus manifest is malformed or violates the enrollment protocol."""


class FormatError(SudaError, ValueError):
    """A binary or text artifact does not match its declared format."""


class ConfigError(SudaError, ValueError):
    """A configuration key or value is invalid."""


class EmptyBatchError(SudaError, ValueError):
    """A loss or metric was asked to reduce over zero items."""
