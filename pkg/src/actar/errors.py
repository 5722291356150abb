"""Exception types shared across the pipeline.

Data problems derive from :class:`DataError` (CLI exit code 1), configuration
problems from :class:`ConfigError` (exit code 2).
"""


class ActarError(Exception):
    """Base class for every error raised by this package."""


class DataError(ActarError):
    pass


class ConfigError(ActarError):
    pass


class SchemaViolation(DataError):
    pass


class DuplicateFrame(DataError):
    pass


class MissingFrame(DataError):
    def __init__(self, index, path=None):
        self.index = index
        msg = f"missing frame {index}" + (f" in {path}" if path else "")
        super().__init__(msg)


class CorruptImage(DataError):
    pass


class DimensionMismatch(DataError, ValueError):
    pass


class GeometryError(DataError):
    pass


class EmptyAfterFilter(DataError):
    pass


class EmptyInput(DataError, ValueError):
    pass


class InsufficientData(DataError):
    pass


class TooFewPoints(DataError):
    pass


class DomainError(DataError, ValueError):
    pass


class LabelOutOfRange(DataError, ValueError):
    pass


class NoOverlap(DataError):
    pass


class TileCountMismatch(DataError):
    pass


class EmptyClass(DataError):
    pass


class VersionMismatch(DataError):
    pass


class Corrupt(DataError):
    pass


class StageError(ActarError):
    """Wraps a failure inside a pipeline stage with its location."""

    def __init__(self, stage, sequence_id, cause):
        self.stage = stage
        self.sequence_id = sequence_id
        self.cause = cause
        where = f" (sequence {sequence_id})" if sequence_id is not None else ""
        super().__init__(f"stage {stage!r} failed{where}: {cause}")
