"""
Error types for the crash-risk pipeline

Every error carries the process exit code used by the command line:
2 input error, 3 numeric failure, 4 infeasible synthetic spec.
"""
from typing import Optional

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_INFEASIBLE = 4


class CrashcastError(Exception):
    """Base class for all pipeline errors"""

    exit_code = EXIT_INPUT


class ConfigError(CrashcastError):
    pass


class EmptyFile(CrashcastError):
    def __init__(self, source: str = "input"):
        super().__init__(f"{source} is empty")
        self.source = source


class MissingColumn(CrashcastError):
    def __init__(self, name: str, source: str = "input"):
        super().__init__(f"{source}: missing column '{name}'")
        self.name = name


class MalformedRow(CrashcastError):
    def __init__(self, line: int, reason: str, source: str = "input"):
        super().__init__(f"{source} line {line}: {reason}")
        self.line = line
        self.reason = reason


class MissingWeather(CrashcastError):
    def __init__(self, date: str):
        super().__init__(f"no weather record for {date}")
        self.date = date


class UnknownSensor(CrashcastError):
    def __init__(self, sensor_id: str, line: Optional[int] = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}crash references unknown sensor '{sensor_id}'")
        self.sensor_id = sensor_id


class ClassTooSmall(CrashcastError):
    def __init__(self, label: float, count: int):
        super().__init__(f"class {label} has {count} window(s); at least 2 are required to split")
        self.label = label
        self.count = count


class DimensionMismatch(CrashcastError):
    pass


class EmptyAfterPool(CrashcastError):
    pass


class FeatureMismatch(CrashcastError):
    def __init__(self, expected, actual):
        super().__init__(f"model expects features {list(expected)}, got {list(actual)}")
        self.expected = list(expected)
        self.actual = list(actual)


class DegenerateTarget(CrashcastError):
    def __init__(self, value: float):
        super().__init__(f"all targets equal {value}; nothing to learn")
        self.value = value


class LengthMismatch(CrashcastError):
    def __init__(self, left: int, right: int):
        super().__init__(f"length mismatch: {left} != {right}")


class SingleClass(CrashcastError):
    pass


class UndefinedRate(CrashcastError):
    pass


class ZeroVariance(CrashcastError):
    pass


class ModelFormatError(CrashcastError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"model file line {line}: {reason}")
        self.line = line
        self.reason = reason


class BoundViolation(CrashcastError):
    def __init__(self, feature: str, value: float, low: float, high: float):
        super().__init__(f"{feature} value {value!r} outside [{low}, {high}]")
        self.feature = feature


class NonFiniteLoss(CrashcastError):
    exit_code = EXIT_NUMERIC

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


class SpecInfeasible(CrashcastError):
    exit_code = EXIT_INFEASIBLE


class MissingClass(CrashcastError):
    def __init__(self, label: float):
        super().__init__(f"class {label} has no instances in the evaluation set")
        self.label = label
