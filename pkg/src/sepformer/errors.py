"""Exception hierarchy shared by all sepformer modules."""


class SepformerError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(SepformerError):
    """Invalid hyperparameters or incompatible tensor shapes."""


class InputTooShortError(SepformerError):
    """Signal shorter than the encoder kernel."""


class UsageError(SepformerError):
    """An operation was called in a way that violates its contract."""


class InvalidReferenceError(UsageError):
    """A metric was asked to score against a degenerate reference signal."""


class AudioFormatError(SepformerError):
    """Unsupported or malformed audio file."""


class DataError(SepformerError):
    """Inconsistent dataset, manifest, or sample contents."""


class InternalError(SepformerError):
    """Invariant violated inside the library; indicates a bug."""


class TrainingDivergedError(SepformerError):
    """Loss became non-finite during optimization."""
