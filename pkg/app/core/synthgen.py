"""
Synthetic study year - sensor readings, daily weather and a crash log

Readings follow clipped Gaussians per feature with a rush-hour profile, and
the minutes before every crash carry a planted precursor (speed drop, volume
surge) at the crash's sensor so that learning can be checked end to end.
"""
import bisect
import math
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np
import pandas as pd

from app.core.config import SynthSpec
from app.core.errors import BoundViolation, SpecInfeasible
from app.core.ingest import serialize_crash_csv, serialize_sensor_csv, serialize_weather_csv
from app.models.records import (
    DAY_SECONDS,
    INTERVAL_SECONDS,
    LANE_FEATURES,
    SENSOR_COLUMNS,
    SPEED_FEATURES,
    TRAFFIC_FEATURES,
    VOLUME_FEATURES,
)
from app.utils.csvio import write_csv, write_text
from app.utils.logger import get_logger

logger = get_logger(__name__)

# labeled random streams, all derived from the one run seed
CRASH_STREAM = 1
WEATHER_STREAM = 2
READING_STREAM = 3
BAND_STREAM = 4
PRECURSOR_STREAM = 5

LEAD_IN_SECONDS = 6 * INTERVAL_SECONDS
CRASH_SPACING_SECONDS = 30 * 60
BAND_INTERVALS = 7
RUSH_HOURS = (8.0, 18.0)
RUSH_WIDTH_HOURS = 1.5
READING_DECIMALS = 2

SURGE_FEATURES = VOLUME_FEATURES + LANE_FEATURES


@dataclass
class SynthResult:
    sensors: pd.DataFrame
    weather: pd.DataFrame
    crashes: pd.DataFrame
    spec: SynthSpec
    seed: int

    def write(self, out_dir: Union[str, Path]) -> Dict[str, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {
            "sensors": write_text(out_dir / "sensors.csv", serialize_sensor_csv(self.sensors)),
            "weather": write_text(out_dir / "weather.csv", serialize_weather_csv(self.weather)),
            "crashes": write_text(out_dir / "crashes.csv", serialize_crash_csv(self.crashes)),
            "spec_report": write_csv(out_dir / "spec_report.csv", verify_spec(self.sensors, self.weather, self.spec)),
            "spec": write_text(out_dir / "spec.json", self.spec.model_dump_json(indent=2) + "\n"),
        }
        logger.info(f"Wrote synthetic study to {out_dir}")
        return paths


def study_start(spec: SynthSpec) -> int:
    moment = datetime(spec.start_date.year, spec.start_date.month, spec.start_date.day, tzinfo=timezone.utc)
    return int(moment.timestamp())


def sensor_names(count: int) -> List[str]:
    width = max(2, len(str(count)))
    return [f"S{i:0{width}d}" for i in range(1, count + 1)]


def diurnal_profile(seconds_of_day: np.ndarray) -> np.ndarray:
    """Zero-mean rush-hour bumps at 08:00 and 18:00 local, scaled so the peak is 1"""

    def bumps(sec):
        hours = np.asarray(sec, dtype=np.float64) / 3600.0
        total = np.zeros_like(hours)
        for peak in RUSH_HOURS:
            delta = np.abs(hours - peak)
            delta = np.minimum(delta, 24.0 - delta)
            total += np.exp(-delta ** 2 / (2 * RUSH_WIDTH_HOURS ** 2))
        return total

    grid = bumps(np.arange(0, DAY_SECONDS, INTERVAL_SECONDS))
    mean = grid.mean()
    peak = (grid - mean).max()
    return (bumps(seconds_of_day) - mean) / peak


def place_crashes(spec: SynthSpec, sensors: List[str], start: int, end: int, rng: np.random.Generator) -> pd.DataFrame:
    """Uniform crash moments after the lead-in, at least 30 minutes apart per sensor"""
    earliest = start + LEAD_IN_SECONDS
    if spec.crash_count == 0:
        return pd.DataFrame({"timestamp": np.empty(0, np.int64), "sensor_id": np.empty(0, object)})
    if earliest >= end:
        raise SpecInfeasible("study period is shorter than the crash lead-in")
    per_sensor = (end - 1 - earliest) // (CRASH_SPACING_SECONDS + 1) + 1
    if spec.crash_count > per_sensor * len(sensors):
        raise SpecInfeasible(
            f"{spec.crash_count} crashes cannot be spaced 30 min apart on {len(sensors)} sensors over {spec.study_days} days"
        )

    times: Dict[int, List[int]] = {i: [] for i in range(len(sensors))}
    placed = 0
    attempts = 0
    max_attempts = 50 * spec.crash_count + 1000
    while placed < spec.crash_count:
        attempts += 1
        if attempts > max_attempts:
            raise SpecInfeasible(f"placed only {placed} of {spec.crash_count} crashes after {max_attempts} attempts")
        s = int(rng.integers(len(sensors)))
        ts = int(rng.integers(earliest, end))
        taken = times[s]
        pos = bisect.bisect_left(taken, ts)
        if pos > 0 and ts - taken[pos - 1] <= CRASH_SPACING_SECONDS:
            continue
        if pos < len(taken) and taken[pos] - ts <= CRASH_SPACING_SECONDS:
            continue
        taken.insert(pos, ts)
        placed += 1

    rows = sorted((ts, sensors[s]) for s, ts_list in times.items() for ts in ts_list)
    return pd.DataFrame({
        "timestamp": np.array([r[0] for r in rows], dtype=np.int64),
        "sensor_id": np.array([r[1] for r in rows], dtype=object),
    })


def _band_intervals(
    spec: SynthSpec, crashes: pd.DataFrame, start: int, end: int, rng: np.random.Generator
) -> List[Tuple[str, int]]:
    """The intervals ending at each crash interval, on the crash day and on crash-free band days"""
    by_sensor = {s: np.sort(g["timestamp"].to_numpy(np.int64)) for s, g in crashes.groupby("sensor_id", sort=True)}
    keys = set()
    for ts, sensor in zip(crashes["timestamp"], crashes["sensor_id"]):
        ts = int(ts)
        crash_interval = ts - ts % INTERVAL_SECONDS
        first = crash_interval - (BAND_INTERVALS - 1) * INTERVAL_SECONDS
        k_min = math.ceil((start - first) / DAY_SECONDS)
        k_max = (end - INTERVAL_SECONDS - crash_interval) // DAY_SECONDS
        ks = np.array([k for k in range(k_min, k_max + 1) if k != 0], dtype=np.int64)
        times = by_sensor[sensor]
        moments = ts + ks * DAY_SECONDS
        lo = np.searchsorted(times, moments - CRASH_SPACING_SECONDS, side="left")
        hi = np.searchsorted(times, moments + CRASH_SPACING_SECONDS, side="right")
        ks = ks[hi == lo]
        take = min(spec.band_days, len(ks))
        chosen = np.sort(rng.choice(ks, size=take, replace=False)) if take else np.empty(0, np.int64)
        for k in (0, *chosen.tolist()):
            base = first + int(k) * DAY_SECONDS
            for m in range(BAND_INTERVALS):
                keys.add((sensor, base + m * INTERVAL_SECONDS))
    return sorted(keys, key=lambda key: (key[1], key[0]))


def _full_intervals(sensors: List[str], start: int, end: int) -> List[Tuple[str, int]]:
    return [(s, t) for t in range(start, end, INTERVAL_SECONDS) for s in sensors]


def _draw_readings(
    spec: SynthSpec,
    intervals: List[Tuple[str, int]],
    crashes: pd.DataFrame,
    utc_offset_minutes: int,
    seed: int,
) -> pd.DataFrame:
    r = spec.readings_per_interval
    step = INTERVAL_SECONDS // r
    starts = np.array([t for _, t in intervals], dtype=np.int64)
    ids = np.array([s for s, _ in intervals], dtype=object)
    timestamps = (starts[:, None] + np.arange(r) * step).reshape(-1)
    sensor_ids = np.repeat(ids, r)
    n = len(timestamps)

    rng = np.random.default_rng([seed, READING_STREAM])
    z = rng.standard_normal((n, len(TRAFFIC_FEATURES)))
    col = {name: i for i, name in enumerate(TRAFFIC_FEATURES)}
    rho = spec.redundancy_corr
    own = math.sqrt(max(0.0, 1.0 - rho * rho))
    for derived, partner in spec.lane_redundancy.items():
        z[:, col[derived]] = rho * z[:, col[partner]] + own * z[:, col[derived]]

    stats = spec.features
    values = np.empty_like(z)
    for name, j in col.items():
        values[:, j] = stats[name].mean + stats[name].std * z[:, j]

    tod = (starts + utc_offset_minutes * 60) % DAY_SECONDS
    profile = np.repeat(diurnal_profile(tod), r)
    a = spec.diurnal_amplitude
    for name in SPEED_FEATURES:
        values[:, col[name]] *= 1.0 - a * profile
    for name in SURGE_FEATURES:
        values[:, col[name]] *= 1.0 + a * profile

    affected = _precursor_mask(timestamps, sensor_ids, crashes, spec.onset_minutes * 60)
    if affected.any() and (spec.speed_drop_fraction > 0 or spec.volume_surge_fraction > 0):
        noise_rng = np.random.default_rng([seed, PRECURSOR_STREAM])
        idx = np.flatnonzero(affected)
        eps = noise_rng.normal(0.0, spec.noise_scale, size=(len(idx), len(TRAFFIC_FEATURES)))
        for name in SPEED_FEATURES:
            j = col[name]
            values[idx, j] *= (1.0 - spec.speed_drop_fraction) * (1.0 + eps[:, j])
        for name in SURGE_FEATURES:
            j = col[name]
            values[idx, j] *= (1.0 + spec.volume_surge_fraction) * (1.0 + eps[:, j])
    logger.debug(f"Precursor applied to {int(affected.sum())} readings")

    for name, j in col.items():
        values[:, j] = np.round(np.clip(values[:, j], stats[name].min, stats[name].max), READING_DECIMALS)

    frame = pd.DataFrame(values, columns=list(TRAFFIC_FEATURES))
    frame.insert(0, "sensor_id", sensor_ids)
    frame.insert(0, "timestamp", timestamps)
    frame = frame.sort_values(["timestamp", "sensor_id"], kind="mergesort").reset_index(drop=True)
    return frame[list(SENSOR_COLUMNS)]


def _precursor_mask(timestamps: np.ndarray, sensor_ids: np.ndarray, crashes: pd.DataFrame, onset: int) -> np.ndarray:
    """Readings in [crash - onset, crash) at the crash's sensor"""
    mask = np.zeros(len(timestamps), dtype=bool)
    if onset <= 0 or crashes.empty:
        return mask
    for sensor, group in crashes.groupby("sensor_id", sort=True):
        rows = np.flatnonzero(sensor_ids == sensor)
        ts = timestamps[rows]
        crash_times = np.sort(group["timestamp"].to_numpy(np.int64))
        # next crash strictly after each reading
        pos = np.searchsorted(crash_times, ts, side="right")
        has_next = pos < len(crash_times)
        nxt = np.where(has_next, crash_times[np.minimum(pos, len(crash_times) - 1)], 0)
        mask[rows] = has_next & (nxt - ts <= onset) & (nxt > ts)
    return mask


def _draw_weather(spec: SynthSpec, seed: int) -> pd.DataFrame:
    rng = np.random.default_rng([seed, WEATHER_STREAM])
    t = spec.features["temperature"]
    temps = np.clip(t.mean + t.std * rng.standard_normal(spec.study_days), t.min, t.max)
    precip = (rng.random(spec.study_days) < spec.precipitation_rate).astype(np.int64)
    return pd.DataFrame({
        "date": [spec.start_date + timedelta(days=i) for i in range(spec.study_days)],
        "temperature": np.round(temps, READING_DECIMALS),
        "precipitation": precip,
    })


def generate(spec: SynthSpec, seed: int, utc_offset_minutes: int = 180) -> SynthResult:
    """One synthetic study year; identical seed and spec give identical frames"""
    start = study_start(spec)
    end = start + spec.study_days * DAY_SECONDS
    sensors = sensor_names(spec.sensor_count)

    crashes = place_crashes(spec, sensors, start, end, np.random.default_rng([seed, CRASH_STREAM]))
    if spec.coverage == "full":
        intervals = _full_intervals(sensors, start, end)
    else:
        intervals = _band_intervals(spec, crashes, start, end, np.random.default_rng([seed, BAND_STREAM]))
    readings = _draw_readings(spec, intervals, crashes, utc_offset_minutes, seed)
    weather = _draw_weather(spec, seed)
    logger.info(
        f"Generated {len(readings)} readings over {len(intervals)} intervals, "
        f"{len(crashes)} crashes, {len(weather)} weather days"
    )
    return SynthResult(readings, weather, crashes, spec, seed)


STATS_COLUMNS = (
    "feature", "spec_mean", "spec_std", "spec_min", "spec_max",
    "sample_mean", "sample_std", "sample_min", "sample_max", "count",
)


def verify_spec(sensors: pd.DataFrame, weather: pd.DataFrame, spec: SynthSpec) -> pd.DataFrame:
    """Achieved statistics per feature; any value outside the spec bounds raises BoundViolation"""
    rows = []
    columns = [(name, sensors[name].to_numpy(np.float64)) for name in TRAFFIC_FEATURES]
    columns.append(("temperature", weather["temperature"].to_numpy(np.float64)))
    for name, values in columns:
        s = spec.features[name]
        if len(values):
            lo_i, hi_i = int(np.argmin(values)), int(np.argmax(values))
            if values[lo_i] < s.min:
                raise BoundViolation(name, float(values[lo_i]), s.min, s.max)
            if values[hi_i] > s.max:
                raise BoundViolation(name, float(values[hi_i]), s.min, s.max)
        rows.append(_stats_row(name, s.mean, s.std, s.min, s.max, values))
    precip = weather["precipitation"].to_numpy(np.float64)
    bad = np.flatnonzero((precip != 0) & (precip != 1))
    if len(bad):
        raise BoundViolation("precipitation", float(precip[bad[0]]), 0, 1)
    rate = spec.precipitation_rate
    rows.append(_stats_row("precipitation", rate, math.sqrt(rate * (1 - rate)), 0, 1, precip))
    return pd.DataFrame(rows, columns=list(STATS_COLUMNS))


def _stats_row(name, mean, std, low, high, values: np.ndarray) -> Dict:
    row = {
        "feature": name,
        "spec_mean": float(mean),
        "spec_std": float(std),
        "spec_min": float(low),
        "spec_max": float(high),
        "sample_mean": float("nan"),
        "sample_std": float("nan"),
        "sample_min": float("nan"),
        "sample_max": float("nan"),
        "count": int(len(values)),
    }
    if len(values):
        row["sample_mean"] = float(values.mean())
        row["sample_std"] = float(values.std(ddof=1)) if len(values) > 1 else 0.0
        row["sample_min"] = float(values.min())
        row["sample_max"] = float(values.max())
    return row
