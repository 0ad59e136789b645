"""
Ingest - parse sensor/weather/crash CSVs and average readings into 4-minute intervals
"""
import io
import re
from datetime import date
from typing import Iterator, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app.core.errors import EmptyFile, MalformedRow, MissingColumn, MissingWeather, UnknownSensor
from app.models.records import (
    CRASH_COLUMNS,
    DAY_SECONDS,
    FEATURE_NAMES,
    INTERVAL_COLUMNS,
    INTERVAL_SECONDS,
    SENSOR_COLUMNS,
    SPEED_FEATURES,
    TRAFFIC_FEATURES,
    WEATHER_COLUMNS,
    CrashEvent,
    IntervalRecord,
    RawSensorRecord,
)
from app.utils.csvio import Source, decode_text, frame_to_csv
from app.utils.logger import get_logger

logger = get_logger(__name__)

_DATE_RE = re.compile(r"^\d{4}-\d{2}-\d{2}$")
_INT_RE = re.compile(r"^[+-]?\d+$")
_FLOAT_RE = re.compile(r"^[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?$")


def _read_table(source: Source, columns: Sequence[str], name: str) -> pd.DataFrame:
    """Read a header-bearing CSV as strings; line numbers count the header as line 1"""
    text = decode_text(source, name)
    try:
        df = pd.read_csv(
            io.StringIO(text),
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=False,
        )
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        raise MalformedRow(int(match.group(1)) if match else 0, str(e), name) from e
    except pd.errors.EmptyDataError as e:
        raise MissingColumn(columns[0], name) from e

    df.columns = df.columns.astype(str).str.strip()
    for col in columns:
        if col not in df.columns:
            raise MissingColumn(col, name)
    df = df[list(columns)].fillna("")
    if df.empty:
        raise EmptyFile(name)
    return df


def _first_bad(mask: np.ndarray) -> Optional[int]:
    hits = np.flatnonzero(mask)
    return int(hits[0]) if len(hits) else None


def _line(row: int) -> int:
    return row + 2


def _parse_int_column(df: pd.DataFrame, col: str, name: str) -> np.ndarray:
    values = df[col].str.strip()
    bad = _first_bad(~values.str.match(_INT_RE).to_numpy())
    if bad is not None:
        raise MalformedRow(_line(bad), f"{col} is not an integer: {df[col].iloc[bad]!r}", name)
    return values.astype(np.int64).to_numpy()


def _parse_float_column(df: pd.DataFrame, col: str, name: str) -> np.ndarray:
    raw = df[col].str.strip()
    well_formed = raw.str.match(_FLOAT_RE).to_numpy()
    # float() is correctly rounded, so repr-written values parse back exactly
    values = np.array([float(v) if ok else np.nan for v, ok in zip(raw, well_formed)], dtype=np.float64)
    bad = _first_bad(~np.isfinite(values))
    if bad is not None:
        raise MalformedRow(_line(bad), f"{col} is not a finite number: {df[col].iloc[bad]!r}", name)
    return values


def _parse_sensor_ids(df: pd.DataFrame, name: str) -> np.ndarray:
    ids = df["sensor_id"].str.strip()
    bad = _first_bad((ids == "").to_numpy())
    if bad is not None:
        raise MalformedRow(_line(bad), "empty sensor_id", name)
    return ids.to_numpy(dtype=object)


def parse_sensor_csv(
    source: Source,
    study_range: Optional[Tuple[int, int]] = None,
    name: str = "sensors.csv",
) -> pd.DataFrame:
    """
    Parse sensors.csv into one row per reading, in file order

    Columns are the RawSensorRecord fields. Malformed rows raise MalformedRow
    with the 1-based line number of the file.
    """
    df = _read_table(source, SENSOR_COLUMNS, name)
    out = pd.DataFrame({
        "timestamp": _parse_int_column(df, "timestamp", name),
        "sensor_id": _parse_sensor_ids(df, name),
    })
    for col in TRAFFIC_FEATURES:
        values = _parse_float_column(df, col, name)
        bad = _first_bad(values < 0)
        if bad is not None:
            kind = "speed" if col in SPEED_FEATURES else "volume"
            raise MalformedRow(_line(bad), f"negative {kind} {col}={df[col].iloc[bad]}", name)
        out[col] = values

    if study_range is not None:
        start, end = study_range
        ts = out["timestamp"].to_numpy()
        bad = _first_bad((ts < start) | (ts >= end))
        if bad is not None:
            raise MalformedRow(_line(bad), f"timestamp {ts[bad]} outside study range [{start}, {end})", name)

    logger.info(f"Parsed {len(out)} sensor readings from {name}")
    return out


def parse_weather_csv(source: Source, name: str = "weather.csv") -> pd.DataFrame:
    """Parse weather.csv; one record per date, precipitation in {0, 1}"""
    df = _read_table(source, WEATHER_COLUMNS, name)
    dates = df["date"].str.strip()
    bad = _first_bad(~dates.str.match(_DATE_RE).to_numpy())
    if bad is None:
        parsed = pd.to_datetime(dates, format="%Y-%m-%d", errors="coerce")
        bad = _first_bad(parsed.isna().to_numpy())
    if bad is not None:
        raise MalformedRow(_line(bad), f"date is not YYYY-MM-DD: {df['date'].iloc[bad]!r}", name)
    dup = _first_bad(dates.duplicated().to_numpy())
    if dup is not None:
        raise MalformedRow(_line(dup), f"duplicate date {dates.iloc[dup]}", name)

    temperature = _parse_float_column(df, "temperature", name)
    precip = df["precipitation"].str.strip()
    bad = _first_bad(~precip.isin(["0", "1"]).to_numpy())
    if bad is not None:
        raise MalformedRow(_line(bad), f"precipitation must be 0 or 1: {df['precipitation'].iloc[bad]!r}", name)

    out = pd.DataFrame({
        "date": [d.date() for d in parsed],
        "temperature": temperature,
        "precipitation": precip.astype(np.int64).to_numpy(),
    })
    logger.info(f"Parsed {len(out)} weather days from {name}")
    return out


def parse_crash_csv(source: Source, name: str = "crashes.csv") -> pd.DataFrame:
    """Parse crashes.csv; at most one crash per (sensor, 4-minute interval)"""
    df = _read_table(source, CRASH_COLUMNS, name)
    out = pd.DataFrame({
        "timestamp": _parse_int_column(df, "timestamp", name),
        "sensor_id": _parse_sensor_ids(df, name),
    })
    bucket = out["timestamp"] - out["timestamp"] % INTERVAL_SECONDS
    dup = _first_bad(pd.DataFrame({"s": out["sensor_id"], "b": bucket}).duplicated().to_numpy())
    if dup is not None:
        raise MalformedRow(_line(dup), "second crash in the same sensor interval", name)
    logger.info(f"Parsed {len(out)} crash events from {name}")
    return out


def validate_crashes(crashes: pd.DataFrame, sensor_ids: Sequence[str]) -> None:
    known = set(sensor_ids)
    for row, sensor in enumerate(crashes["sensor_id"]):
        if sensor not in known:
            raise UnknownSensor(sensor, _line(row))


def serialize_sensor_csv(records: pd.DataFrame) -> str:
    return frame_to_csv(records[list(SENSOR_COLUMNS)])


def serialize_weather_csv(weather: pd.DataFrame) -> str:
    out = weather[list(WEATHER_COLUMNS)].copy()
    out["date"] = [d.isoformat() for d in out["date"]]
    return frame_to_csv(out)


def serialize_crash_csv(crashes: pd.DataFrame) -> str:
    return frame_to_csv(crashes[list(CRASH_COLUMNS)])


def iter_sensor_records(records: pd.DataFrame) -> Iterator[RawSensorRecord]:
    for row in records[list(SENSOR_COLUMNS)].itertuples(index=False):
        yield RawSensorRecord(*row)


def iter_crash_events(crashes: pd.DataFrame) -> Iterator[CrashEvent]:
    for ts, sensor in zip(crashes["timestamp"], crashes["sensor_id"]):
        yield CrashEvent(int(ts), str(sensor))


def aggregate_intervals(records: pd.DataFrame, interval_seconds: int = INTERVAL_SECONDS) -> pd.DataFrame:
    """
    Average raw readings into one row per (sensor_id, 4-minute bucket)

    Buckets without readings are absent. Weather columns are left as NaN
    until join_weather fills them.
    """
    if interval_seconds != INTERVAL_SECONDS:
        raise ValueError(f"interval width is fixed at {INTERVAL_SECONDS} s")
    df = records[list(SENSOR_COLUMNS)].copy()
    df["interval_start"] = df["timestamp"] - df["timestamp"] % interval_seconds
    # canonical order so the floating-point sums do not depend on input order
    df = df.sort_values(["sensor_id", "interval_start", "timestamp", *TRAFFIC_FEATURES], kind="mergesort")

    grouped = df.groupby(["sensor_id", "interval_start"], sort=True)
    out = grouped[list(TRAFFIC_FEATURES)].mean()
    out["sample_count"] = grouped.size()
    out = out.reset_index()
    out["temperature"] = np.nan
    out["precipitation"] = np.nan
    out = out[list(INTERVAL_COLUMNS)]
    out["interval_start"] = out["interval_start"].astype(np.int64)
    out["sample_count"] = out["sample_count"].astype(np.int64)
    logger.info(f"Aggregated {len(records)} readings into {len(out)} intervals")
    return out.reset_index(drop=True)


def join_weather(intervals: pd.DataFrame, weather: pd.DataFrame) -> pd.DataFrame:
    """Fill temperature/precipitation of each interval from its (UTC) calendar date"""
    lookup = {
        d: (float(t), float(p))
        for d, t, p in zip(weather["date"], weather["temperature"], weather["precipitation"])
    }
    day_index = intervals["interval_start"].to_numpy() // DAY_SECONDS
    unique_days = np.unique(day_index)
    temps, precs = {}, {}
    for day in unique_days:
        d = date.fromordinal(date(1970, 1, 1).toordinal() + int(day))
        if d not in lookup:
            raise MissingWeather(d.isoformat())
        temps[day], precs[day] = lookup[d]

    out = intervals.copy()
    out["temperature"] = [temps[d] for d in day_index]
    out["precipitation"] = [precs[d] for d in day_index]
    logger.info(f"Joined weather onto {len(out)} intervals ({len(unique_days)} days)")
    return out


def interval_records(intervals: pd.DataFrame) -> Iterator[IntervalRecord]:
    for row in intervals[list(INTERVAL_COLUMNS)].itertuples(index=False):
        yield IntervalRecord(
            sensor_id=row[0],
            interval_start=int(row[1]),
            features=tuple(float(v) for v in row[2:2 + len(FEATURE_NAMES)]),
            sample_count=int(row[-1]),
        )


def local_time_of_day(timestamp: int, utc_offset_minutes: int) -> int:
    """Seconds since local midnight for a fixed UTC offset"""
    return (int(timestamp) + utc_offset_minutes * 60) % DAY_SECONDS


def local_day(timestamp: int, utc_offset_minutes: int) -> int:
    """Local calendar day as days since the epoch"""
    return (int(timestamp) + utc_offset_minutes * 60) // DAY_SECONDS
