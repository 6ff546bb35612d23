"""Exception hierarchy shared by every module of the package."""

import numpy as np


class StickyHDPError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(StickyHDPError, ValueError):
    pass


class DegenerateDistributionError(StickyHDPError, ValueError):
    pass


class DecompositionError(StickyHDPError, np.linalg.LinAlgError):
    """A matrix that must be symmetric positive-definite is not."""


class UnsupportedOperationError(StickyHDPError, NotImplementedError):
    pass


class InternalConsistencyError(StickyHDPError, RuntimeError):
    """Bookkeeping invariant violated; always a bug, never a data problem."""


class InvalidStateError(StickyHDPError, ValueError):
    pass


class FormatError(StickyHDPError, ValueError):
    pass


class ConfigError(StickyHDPError, ValueError):
    pass
