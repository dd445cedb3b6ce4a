"""Exception hierarchy shared by all modules.

The CLI maps :class:`UsageError` subclasses to exit code 2 and everything
else derived from :class:`BinauralError` to exit code 1.
"""


class BinauralError(Exception):
    pass


class UsageError(BinauralError, ValueError):
    """Bad input supplied by the caller (maps to CLI exit code 2)."""


class ValidationError(UsageError):
    pass


class InvalidPoseError(UsageError):
    pass


class InsufficientDataError(UsageError):
    pass


class DegenerateGeometryError(UsageError):
    pass


class CoverageError(UsageError):
    pass


class SupersonicError(UsageError):
    pass


class ShapeError(UsageError):
    pass


class FormatError(UsageError):
    pass


class ParseError(UsageError):
    def __init__(self, message: str, line: int | None = None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f"{':' if where else 'line '}{line}"
        super().__init__(f"{where}: {message}" if where else message)


class UndefinedMetricError(BinauralError):
    pass


class LoadError(UsageError):
    pass


class DimensionError(LoadError):
    pass


class ConsistencyError(BinauralError):
    pass


class TrainingAborted(BinauralError):
    def __init__(self, message: str, step: int, scene_id: str | None = None):
        self.step = step
        self.scene_id = scene_id
        super().__init__(f"step {step}, scene {scene_id}: {message}")
