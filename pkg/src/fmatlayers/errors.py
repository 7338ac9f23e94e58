"""Exception hierarchy.

Every error carries the process exit code the CLI maps it to.
"""


class FmatError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class ConfigError(FmatError, ValueError):
    exit_code = 2


class NonPositiveFocal(FmatError, ValueError):
    exit_code = 2


class DegenerateTranslation(FmatError, ValueError):
    exit_code = 5


class FullRank(FmatError, ValueError):
    exit_code = 5


class RankDeficient(FmatError, ValueError):
    exit_code = 5


class DependentColumns(FmatError, ValueError):
    exit_code = 5


class NearZeroDivisor(FmatError, ZeroDivisionError):
    exit_code = 5


class ZeroMatrix(FmatError, ValueError):
    exit_code = 5


class MixedNormalization(FmatError, ValueError):
    exit_code = 2


class InsufficientCorrespondences(FmatError, ValueError):
    exit_code = 4


class WrongSampleSize(FmatError, ValueError):
    exit_code = 4


class DegenerateConfiguration(FmatError, ValueError):
    exit_code = 5


class DegeneratePoints(DegenerateConfiguration):
    pass


class NoConsensus(DegenerateConfiguration):
    pass


class RankDeficientInit(DegenerateConfiguration):
    pass


class DegenerateLine(FmatError, ValueError):
    exit_code = 5


class EmptySelection(FmatError, ValueError):
    exit_code = 4


class InfeasibleConfig(FmatError, RuntimeError):
    exit_code = 3


class BehindCamera(FmatError, ValueError):
    exit_code = 5


class CoincidentCenters(FmatError, ValueError):
    exit_code = 5


class RankDeficientCamera(FmatError, ValueError):
    exit_code = 5


class AllStartsFailed(FmatError, RuntimeError):
    exit_code = 5


class GradientCheckFailed(FmatError, AssertionError):
    exit_code = 6
