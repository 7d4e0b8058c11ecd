"""Exception hierarchy shared by every module of the package."""


class NanyinError(Exception):
    """Base class for domain errors (the CLI maps these to exit code 1)."""


class MalformedFile(NanyinError):
    pass


class UnsupportedFormat(NanyinError):
    pass


class SegmentationError(NanyinError):
    pass


class UnsplittableSpan(SegmentationError):
    pass


class EmptyScore(NanyinError):
    pass


class MalformedStream(NanyinError):
    pass


class InvalidGraph(NanyinError):
    pass


class SchemaMismatch(NanyinError):
    pass


class RuleAlreadyApplied(NanyinError):
    pass


class DimensionMismatch(NanyinError):
    pass


class NonFiniteGradient(NanyinError):
    pass


class EmptyDataset(NanyinError):
    pass


class InvalidPrediction(NanyinError):
    pass


class PitchOverflow(NanyinError):
    pass


class PitchOutOfRange(NanyinError):
    pass


class LengthMismatch(NanyinError):
    pass


class NoInModeTargets(NanyinError):
    pass


class ConfigError(NanyinError):
    pass


class OrnamentWarning(UserWarning):
    """Raised through :mod:`warnings` when an ornament had to be clamped."""
