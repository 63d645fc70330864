"""Exception hierarchy shared by every mtst module."""


class MTSTError(Exception):
    """Base class for all errors raised by mtst."""


class ShapeError(MTSTError, ValueError):
    pass


class ConfigError(MTSTError, ValueError):
    pass


class UsageError(MTSTError, ValueError):
    pass


class DataError(MTSTError, ValueError):
    pass


class TrainingError(MTSTError, RuntimeError):
    pass


class CheckpointError(MTSTError, ValueError):
    pass
