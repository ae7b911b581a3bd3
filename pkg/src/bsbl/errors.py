"""Exception types raised by the recovery toolkit."""

import numpy as np


class BSBLError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatch(BSBLError, ValueError):
    pass


class SingularSystem(BSBLError, np.linalg.LinAlgError):
    """The measurement covariance could not be factorized (lambda = 0 and rank deficient)."""


class NonPSD(BSBLError, np.linalg.LinAlgError):
    """A matrix expected to be positive definite failed its factorization."""


class InvalidCoefficient(BSBLError, ValueError):
    pass


class InvalidBlockSize(BSBLError, ValueError):
    pass


class ZeroSensingBlock(BSBLError, ValueError):
    """A block of the sensing matrix is identically zero."""
