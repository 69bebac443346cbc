"""Exception hierarchy shared by every pipeline stage.

Each class name doubles as the error *category* reported by the CLI.
"""


class AgriPipeError(Exception):
    """Base class for all pipeline errors."""

    @property
    def category(self) -> str:
        return type(self).__name__


# raster I/O
class MalformedHeader(AgriPipeError, ValueError):
    pass


class DuplicateBand(AgriPipeError, ValueError):
    pass


class TruncatedPayload(AgriPipeError, ValueError):
    pass


class NonFiniteValueWithValidFlag(AgriPipeError, ValueError):
    pass


class IoFailure(AgriPipeError, OSError):
    pass


class PatternMismatch(AgriPipeError, ValueError):
    pass


class InvalidDate(AgriPipeError, ValueError):
    pass


class InvalidTime(AgriPipeError, ValueError):
    pass


class UnknownProduct(AgriPipeError, ValueError):
    pass


# preprocessing
class EmptyBand(AgriPipeError, ValueError):
    pass


class DegenerateBand(AgriPipeError, ValueError):
    pass


class EmptyRegion(AgriPipeError, ValueError):
    pass


class ZeroBrightness(AgriPipeError, ValueError):
    pass


class MissingBandFactor(AgriPipeError, LookupError):
    pass


# registration
class ImageTooSmall(AgriPipeError, ValueError):
    pass


class TooFewMatches(AgriPipeError, ValueError):
    pass


class NoConsensus(AgriPipeError, RuntimeError):
    pass


class DegenerateSample(AgriPipeError, RuntimeError):
    pass


class SingularTransform(AgriPipeError, ValueError):
    pass


class InsufficientOverlap(AgriPipeError, ValueError):
    pass


class RegistrationRejected(AgriPipeError, RuntimeError):
    pass


# mosaic
class DisconnectedGraph(AgriPipeError, ValueError):
    pass


class SingularComposition(AgriPipeError, ValueError):
    pass


# indices
class MissingBand(AgriPipeError, LookupError):
    pass


# dataset
class TileLargerThanImage(AgriPipeError, ValueError):
    pass


class TooFewTiles(AgriPipeError, ValueError):
    pass


class NonSquareTile(AgriPipeError, ValueError):
    pass


class PatchOutOfBounds(AgriPipeError, ValueError):
    pass


# classifier
class MissingClass(AgriPipeError, ValueError):
    pass


class DivergedLoss(AgriPipeError, FloatingPointError):
    pass


class ChannelMismatch(AgriPipeError, ValueError):
    pass


# evaluation
class DimensionMismatch(AgriPipeError, ValueError):
    pass


class EmptyMatrix(AgriPipeError, ValueError):
    pass


# cli
class ConfigInvalid(AgriPipeError, ValueError):
    pass


class MissingInput(AgriPipeError, FileNotFoundError):
    pass


class SizeTooSmall(AgriPipeError, ValueError):
    pass
