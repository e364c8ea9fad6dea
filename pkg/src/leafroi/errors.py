"""Exception hierarchy shared by every module of the package."""


class LeafRoiError(Exception):
    """Base class for all package errors."""


class DimensionError(LeafRoiError, ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(LeafRoiError, ValueError):
    """A layer, network or run is configured inconsistently."""


class ContractError(LeafRoiError, ValueError):
    """A precondition on argument values was violated."""


class DataError(LeafRoiError, ValueError):
    """The data cannot support the requested computation."""


class FormatError(LeafRoiError, ValueError):
    """A file is malformed, truncated or of the wrong kind."""


class TrainingError(LeafRoiError, RuntimeError):
    """Optimization diverged or otherwise failed."""


class NonFiniteError(LeafRoiError, FloatingPointError):
    """NaN or Inf appeared in a forward or backward computation."""


class TapeLookupError(LeafRoiError, LookupError):
    """A tensor was not recorded on the tape it was looked up in."""
