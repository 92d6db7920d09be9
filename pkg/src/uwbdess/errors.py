"""Exception types raised across the package."""


class UwbDessError(Exception):
    """Base class for all errors raised by this package."""


# dataset ingestion / manipulation

class DatasetError(UwbDessError, ValueError):
    pass


class MissingColumn(DatasetError):
    def __init__(self, column):
        super().__init__(f"missing column {column!r}")
        self.column = column


class MalformedNumber(DatasetError):
    def __init__(self, row, col, value):
        super().__init__(f"row {row}: column {col!r} holds malformed value {value!r}")
        self.row = row
        self.col = col
        self.value = value


class InvariantViolation(DatasetError):
    def __init__(self, row, rule):
        where = f"row {row}" if row is not None else "dataset"
        super().__init__(f"{where}: {rule}")
        self.row = row
        self.rule = rule


class MixedAgcState(DatasetError):
    def __init__(self):
        super().__init__("dataset mixes AGC-on and AGC-off records")


class EmptyStratum(DatasetError):
    def __init__(self, distance, gain):
        super().__init__(f"stratum (distance={distance} m, gain={gain} dB) has no delivered records")
        self.distance = distance
        self.gain = gain


class NoDeliveredRecords(DatasetError):
    def __init__(self, distance=None):
        msg = "no delivered records" if distance is None else f"no delivered records at distance {distance} m"
        super().__init__(msg)
        self.distance = distance


class IoFailure(UwbDessError, OSError):
    pass


# channel simulator

class NonPositiveDistance(UwbDessError, ValueError):
    pass


class AllZeroCir(UwbDessError, ValueError):
    pass


class InsufficientDistances(UwbDessError, ValueError):
    pass


class ConfigError(UwbDessError, ValueError):
    pass


# features

class EmptySpec(UwbDessError, ValueError):
    pass


class TooFewRows(UwbDessError, ValueError):
    pass


class ColumnMismatch(UwbDessError, ValueError):
    pass


# regressors

class EmptyMatrix(UwbDessError, ValueError):
    pass


class KTooLarge(UwbDessError, ValueError):
    pass


class DimensionMismatch(UwbDessError, ValueError):
    pass


class Untrained(UwbDessError, RuntimeError):
    pass


class SingularDesign(UwbDessError, ValueError):
    pass


class UnknownRegressor(UwbDessError, KeyError):
    def __init__(self, name, available):
        super().__init__(f"unknown regressor {name!r}; available: {', '.join(sorted(available))}")
        self.name = name
        self.available = tuple(sorted(available))

    def __str__(self):
        return self.args[0]


# evaluation / protocol

class EmptyTestSet(UwbDessError, ValueError):
    pass


class TooFewDistances(UwbDessError, ValueError):
    pass


class MissingGainCoverage(UwbDessError, ValueError):
    pass


class SoundingLost(UwbDessError, RuntimeError):
    pass
