"""Exception types shared across the pipeline.

Data problems (bad or insufficient input) and numerical failures map to
distinct CLI exit codes, so every error raised by the library derives from
one of the two branches below.
"""


class OtindexError(Exception):
    """Base class for all library errors."""

    exit_code = 2


class DataError(OtindexError):
    """Invalid, empty, or insufficient input data."""

    exit_code = 2


class NumericalError(OtindexError):
    """A computation produced non-finite or degenerate results."""

    exit_code = 3


# corpus
class EmptyVocabulary(DataError):
    pass


class AllDocumentsEmpty(DataError):
    pass


# embedding
class EmptyCorpus(DataError):
    pass


# transport
class NumericalCollapse(NumericalError):
    pass


class NonConvergenceWarning(RuntimeWarning):
    """Sinkhorn hit max_iter before reaching tolerance; best iterate returned."""


# training
class DegenerateReconstruction(NumericalError):
    pass


class NonFiniteLoss(NumericalError):
    pass


# index
class DegenerateSVD(NumericalError):
    pass


class EmptyInput(DataError):
    pass


class ZeroVariance(DataError):
    pass


# evaluation
class SeriesTooShort(DataError):
    pass


class NoOverlap(DataError):
    pass


class InsufficientOverlap(DataError):
    pass


# cli
class MissingStageInput(DataError):
    pass
