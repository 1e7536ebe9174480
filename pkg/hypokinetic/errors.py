class HypoError(Exception):
    """Base class for every error raised by the package."""


class GridError(HypoError, ValueError):
    pass


class RepresentationError(HypoError, ValueError):
    pass


class InadmissibleStepError(HypoError, ValueError):
    pass


class ConvergenceError(HypoError, RuntimeError):
    pass


class ConfigError(HypoError, ValueError):
    pass


class SnapshotError(HypoError, ValueError):
    pass
