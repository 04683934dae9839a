"""Exception hierarchy shared across the toolkit.

Exit-code mapping for the CLI: ConfigError -> 2, DataError -> 3,
NumericError -> 4.
"""


class RelocError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(RelocError):
    """Invalid configuration document or CLI arguments."""


class DataError(RelocError):
    """Broken, truncated, or inconsistent dataset files."""


class NumericError(RelocError):
    """Numeric failure during solving or training."""


# geometry
class NonPositiveDepth(NumericError):
    pass


class InvalidPose(ConfigError):
    pass


# losses / arrays
class ShapeMismatch(NumericError):
    pass


class EmptyNeighborhood(NumericError):
    pass


# solvers
class TooFewPoints(NumericError):
    pass


class DegenerateConfiguration(NumericError):
    pass


class BehindCamera(NumericError):
    pass


# confidence / training
class EmptyTrainingSet(DataError):
    pass


class EmptyInput(NumericError):
    pass


class DivergedTraining(NumericError):
    pass


# pipeline
class TooFewCorrespondences(DataError):
    pass


class FailedHypothesis(NumericError):
    pass


class AllHypothesesFailed(NumericError):
    pass


# eval
class LengthMismatch(NumericError):
    pass


class DegenerateLabels(NumericError):
    pass


# synth
class SceneNotVisible(NumericError):
    pass
