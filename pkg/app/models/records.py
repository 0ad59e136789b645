"""
Record types shared across the pipeline

Frames carry the same columns as the dataclasses below; the dataclasses are
used where a single record is handled on its own.
"""
from dataclasses import dataclass
from datetime import date
from enum import Enum
from typing import Tuple

INTERVAL_SECONDS = 240
DAY_SECONDS = 86400

SPEED_FEATURES = ("up_speed", "down_speed")
VOLUME_FEATURES = ("up_volume", "down_volume")
LANE_FEATURES = tuple(f"vl{i}" for i in range(1, 9))
TRAFFIC_FEATURES = SPEED_FEATURES + VOLUME_FEATURES + LANE_FEATURES
WEATHER_FEATURES = ("temperature", "precipitation")

# Fixed order used by every stage of the pipeline
FEATURE_NAMES: Tuple[str, ...] = TRAFFIC_FEATURES + WEATHER_FEATURES

SENSOR_COLUMNS = ("timestamp", "sensor_id") + TRAFFIC_FEATURES
WEATHER_COLUMNS = ("date", "temperature", "precipitation")
CRASH_COLUMNS = ("timestamp", "sensor_id")
INTERVAL_COLUMNS = ("sensor_id", "interval_start") + FEATURE_NAMES + ("sample_count",)


class CrashRisk(float, Enum):
    NONE = 0.0
    LOW = 0.5
    HIGH = 1.0

    @classmethod
    def from_value(cls, value: float) -> "CrashRisk":
        for member in cls:
            if member.value == float(value):
                return member
        raise ValueError(f"crash risk must be one of 0, 0.5, 1 (got {value!r})")


CLASS_VALUES: Tuple[float, ...] = tuple(member.value for member in CrashRisk)


class WindowOrigin(str, Enum):
    """Where a window sits relative to a crash"""

    NEAR = "0-12"
    FAR = "12-24"
    MATCHED = "matched"


class Provenance(str, Enum):
    CRASH = "crash"
    MATCHED = "matched"


@dataclass(frozen=True)
class RawSensorRecord:
    timestamp: int
    sensor_id: str
    up_speed: float
    down_speed: float
    up_volume: float
    down_volume: float
    vl1: float
    vl2: float
    vl3: float
    vl4: float
    vl5: float
    vl6: float
    vl7: float
    vl8: float


@dataclass(frozen=True)
class WeatherRecord:
    date: date
    temperature: float
    precipitation: int


@dataclass(frozen=True)
class CrashEvent:
    timestamp: int
    sensor_id: str

    @property
    def interval_start(self) -> int:
        return self.timestamp - self.timestamp % INTERVAL_SECONDS


@dataclass(frozen=True)
class IntervalRecord:
    sensor_id: str
    interval_start: int
    features: Tuple[float, ...]
    sample_count: int
