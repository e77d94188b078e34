"""Exception hierarchy.

``DataError`` subclasses signal bad or insufficient input data (CLI exit code 2);
``UsageError`` signals an invalid configuration or invocation (exit code 1).
"""


class GridGuardError(Exception):
    pass


class UsageError(GridGuardError, ValueError):
    pass


class DataError(GridGuardError, ValueError):
    pass


class MissingColumn(DataError):
    pass


class EmptyInput(DataError):
    pass


class NoRecords(DataError):
    pass


class AllMissingChannel(DataError):
    def __init__(self, channel, meter_id=None):
        self.channel = channel
        self.meter_id = meter_id
        where = f" for meter {meter_id}" if meter_id is not None else ""
        super().__init__(f"channel {channel!r} is entirely missing{where}")


class MissingChannel(DataError):
    pass


class InfeasiblePrevalence(DataError):
    pass


class EmptySeries(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class LengthMismatch(DataError):
    pass


class NotTrained(GridGuardError, RuntimeError):
    pass


class EmptyScores(DataError):
    pass


class EmptyData(DataError):
    pass


class SingleClass(DataError):
    pass


class UnknownMeter(DataError):
    pass


class EmptyHistory(DataError):
    pass


class InvalidWeights(UsageError):
    pass


class IncompleteRun(DataError):
    pass


class StageFailure(GridGuardError):
    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")
