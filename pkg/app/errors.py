# app/errors.py

from typing import Optional


class LabError(Exception):
    """Base class for every error raised by the lab"""


class EmptyRangeError(LabError, ValueError):
    pass


class OutOfRangeError(LabError, ValueError):
    """Exact access to primes beyond the sieved range"""

    def __init__(self, message: str, needed_limit: Optional[float] = None):
        super().__init__(message)
        self.needed_limit = needed_limit


class DomainError(LabError, ValueError):
    pass


class PreconditionError(LabError, ValueError):
    pass


class ConfigError(LabError, ValueError):
    pass


class CovarianceError(LabError, ValueError):
    """A 2x2 block [[s2, rho], [rho, s2]] that is not positive semidefinite"""


class ResourceLimitError(LabError, RuntimeError):
    pass


class QuadratureError(LabError, ArithmeticError):
    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved tolerance {achieved:.3e})")
        self.achieved = achieved


class ZetaToleranceError(LabError, ArithmeticError):
    def __init__(self, message: str, achievable: float):
        super().__init__(f"{message} (achievable bound {achievable:.3e})")
        self.achievable = achievable
