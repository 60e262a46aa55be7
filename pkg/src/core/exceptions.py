"""Error hierarchy for the zicp kernel"""


class ZicpError(Exception):
    """Base class for every error raised by the package"""


class DomainError(ZicpError, ValueError):
    """Numeric input outside the domain of a function or distribution"""


class ConfigError(ZicpError, ValueError):
    """Configuration file or grid that does not validate"""


class DataFormatError(ZicpError, ValueError):
    """Dataset file that does not match the `stratum,effort,y` schema"""


class UnidentifiableError(ZicpError):
    """Dataset carries no information on the mark parameter (all zeros)"""


class ConvergenceError(ZicpError):
    """Iterative solver or MCEM run that did not converge"""


class MStepInfeasibleError(ConvergenceError):
    """M-step moments outside the region where the stationarity equations have a root"""


class ImportanceSamplingError(ZicpError):
    """Importance weights or proposal normalisation degenerated"""


class EnumerationGuardError(ZicpError):
    """Exact enumeration requested on a lattice that is too large"""


class NotPositiveDefiniteError(ZicpError):
    """Information or covariance matrix that is not positive definite"""
