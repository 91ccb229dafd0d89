"""Exception and warning classes shared across the pipeline."""


class HdrTrackError(Exception):
    """Base class for all pipeline errors."""


class ParseError(HdrTrackError):
    pass


class SchemaVersionError(HdrTrackError):
    pass


class InvalidArgument(HdrTrackError, ValueError):
    pass


class UnlabeledDataset(HdrTrackError):
    pass


class InvalidHostname(HdrTrackError, ValueError):
    pass


class InvalidFractions(InvalidArgument):
    pass


class InsufficientClassCount(HdrTrackError):
    pass


class EmptyTrainingSet(HdrTrackError):
    pass


class InvalidWeights(InvalidArgument):
    pass


class VocabularyDigestMismatch(HdrTrackError):
    pass


class EmptyMatrix(HdrTrackError):
    pass


class SingleClassCalibration(HdrTrackError):
    pass


class MethodModelMismatch(HdrTrackError):
    pass


class LengthMismatch(HdrTrackError, ValueError):
    pass


class EmptyInput(HdrTrackError, ValueError):
    pass


class RecordSkipped(UserWarning):
    """Emitted once per ingest when malformed entries were dropped."""


class SingleClassTraining(UserWarning):
    """Training labels contain one class; a constant-prior model is returned."""
