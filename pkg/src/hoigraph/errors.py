"""Error types shared across the package."""


class ShapeError(ValueError):
    """Matrix dimensions do not agree; the message names both shapes."""


class ContractError(ValueError):
    """An argument violates a documented precondition."""


class TapeStateError(RuntimeError):
    """The gradient tape was used out of order (e.g. backward run twice)."""


class SchemaError(ValueError):
    """A file or in-memory record violates the annotation schema."""


class LengthError(SchemaError):
    """Per-frame arrays disagree about the video's frame count."""


class VocabularyError(SchemaError):
    """A label id falls outside its class vocabulary."""


class SegmentationError(ValueError):
    """A segment list does not partition the frame range."""


class CheckpointError(ValueError):
    """A checkpoint file is malformed or incompatible with the model."""


class EvaluationError(RuntimeError):
    """A numeric evaluation produced unusable values (NaN/Inf)."""
