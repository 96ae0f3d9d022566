"""Exception types raised by the engine."""


class HardWallError(Exception):
    """Base class for engine errors."""


class GridTooNarrowError(HardWallError):
    pass


class CorruptCacheError(HardWallError):
    pass


class VersionMismatchError(HardWallError):
    pass


class DegenerateKernelError(HardWallError):
    pass


class WindowEscapeError(HardWallError):
    pass


class BudgetExceededError(HardWallError):
    pass


class ConfigInvalidError(HardWallError):
    pass


class EmptyBatchError(HardWallError):
    pass


class InsufficientSamplesError(HardWallError):
    pass
