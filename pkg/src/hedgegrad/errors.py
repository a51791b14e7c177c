"""Exception hierarchy. Every error carries the CLI exit code it maps to."""


class HedgegradError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ValidationError(HedgegradError):
    """Bad arguments, configs, or structurally invalid inputs."""

    exit_code = 2


class ShapeError(ValidationError):
    """Tensor shape does not match a layer or operation contract."""


class ManifestError(ValidationError):
    """Model manifest fails to parse or validate."""


class MaskValueError(ValidationError):
    """A mask tensor contains values other than 0 and 1."""


class StorageError(HedgegradError):
    """File could not be read or written (wraps OSError with path context)."""

    exit_code = 3


class NumericError(HedgegradError):
    """Degenerate or non-finite numeric state."""

    exit_code = 4


class NonFiniteError(NumericError):
    """NaN or Inf encountered at an operation boundary."""


class DegenerateMapError(NumericError):
    """Initial contribution map sums to zero (dead target class)."""


class SectionDegenerateError(NumericError):
    """Relevance map has no positive section to modulate."""


class DeadLayerError(NumericError):
    """No activated neurons in a layer; uniform shift is undefined."""


class PoolIndicesError(NumericError):
    """Maxpool backward requested without recorded argmax indices."""


class TrainingError(NumericError):
    """Toy trainer failed to reach the accuracy bar. Carries the loss history."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []
