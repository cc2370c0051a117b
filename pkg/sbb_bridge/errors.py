"""
Error types for the SBB solver
Library code raises these; the CLI maps them to exit codes.
"""

from typing import List, Optional


class SbbError(Exception):
    """Base class for all solver errors"""


class ConfigError(SbbError):
    """Invalid configuration (bad parameters, missing marginal file)"""


class GridMismatchError(SbbError):
    """Two objects that must share a grid do not"""


class GridTooSmallError(SbbError):
    """Mass leaves the computational window"""

    def __init__(self, message: str, lost_mass: Optional[float] = None):
        super().__init__(message)
        self.lost_mass = lost_mass


class MonotonicityError(SbbError):
    """A transport map decreases beyond the tie tolerance"""


class ResolutionError(SbbError):
    """Discretization or truncation broke a mass identity"""


class NonConvergenceError(SbbError):
    """Iteration budget exhausted far from the tolerance"""

    def __init__(self, message: str, residual_history: Optional[List[float]] = None):
        super().__init__(message)
        self.residual_history = list(residual_history or [])


class DomainError(SbbError):
    """Argument outside the domain of a formula (t >= T, A >= beta, s <= 0)"""


class OracleBoxError(SbbError):
    """Quadratic oracle optimum sits on the scan boundary"""


class SolutionFormatError(SbbError):
    """A solution directory is missing files or cannot be parsed"""
