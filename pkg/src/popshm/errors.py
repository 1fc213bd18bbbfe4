"""Exception types raised across the package.

Every operation contract names the error class it raises; callers that need
to distinguish failure modes catch the specific class, everything derives
from PopshmError.
"""


class PopshmError(Exception):
    """Base class for all popshm errors."""


class InvalidInputError(PopshmError):
    """Malformed or out-of-contract input values."""


class RecordShapeError(InvalidInputError):
    """Time record length does not match the fibre's record length."""


class SynchronisationError(InvalidInputError):
    """Record start time conflicts with its acquisition's siblings or the
    fibre's periodic trigger schedule."""


class DuplicateRecordError(InvalidInputError):
    """A differing record already occupies the (channel, acquisition) cell."""


class NotFoundError(PopshmError):
    """Referenced structure, stratum, channel or cell does not exist."""


class OperatorContractError(PopshmError):
    """Operator input dimension or parameters violate the registered contract."""


class DomainError(PopshmError):
    """Parameter vector coordinate outside its family box."""


class ConnectivityError(PopshmError):
    """A contraction would disconnect the attributed graph."""


class NoPathError(PopshmError):
    """No common family or registered contraction links the two structures."""


class ConfigurationError(PopshmError):
    """Missing or inconsistent declared correspondence/configuration."""


class CompatibilityError(PopshmError):
    """Source and target feature strata do not share a dimension."""


class TransferPathError(PopshmError):
    """Oracle failure at an intermediate structure on a transfer path."""


class AlignmentError(PopshmError):
    """Normal-condition alignment requested with no normal-condition rows."""


class TrainingError(PopshmError):
    """Classifier training preconditions violated."""


class CalibrationError(PopshmError):
    """Too few (distance, accuracy) pairs to calibrate a threshold."""


class SamplingError(PopshmError):
    """Synthesis sampling rate violates the Nyquist guard."""


class UnsupportedModelError(PopshmError):
    """Structure cannot be idealised by the bridge finite-element model."""


class InvalidTargetError(PopshmError):
    """Damage applied to a slot that cannot carry it (e.g. ground)."""


class ModelError(PopshmError):
    """Assembled model violates a matrix-definiteness invariant."""
