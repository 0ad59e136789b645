"""
Label - 3-step lookback windows, crash-risk labels, matched non-crash sampling, stratified split
"""
import io
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app.core.errors import ClassTooSmall, MalformedRow, MissingColumn
from app.models.dataset import TIMESTEPS, Dataset, Window
from app.models.records import (
    CLASS_VALUES,
    DAY_SECONDS,
    FEATURE_NAMES,
    INTERVAL_SECONDS,
    CrashEvent,
    CrashRisk,
    Provenance,
    WindowOrigin,
)
from app.utils.csvio import Source, decode_text, frame_to_csv
from app.utils.logger import get_logger

logger = get_logger(__name__)

POLICIES = ("near-far", "single-window")
WINDOW_SPAN = TIMESTEPS * INTERVAL_SECONDS


@dataclass(frozen=True)
class InsufficientCandidates:
    """A crash event for which fewer than `ratio` matched days were available"""

    event: CrashEvent
    found: int
    wanted: int


@dataclass
class LabelSummary:
    crash_events: int = 0
    skipped_events: List[CrashEvent] = field(default_factory=list)
    shortfalls: List[InsufficientCandidates] = field(default_factory=list)
    class_counts: Dict[float, int] = field(default_factory=dict)
    crash_windows: int = 0
    matched_windows: int = 0
    ratio: int = 0
    policy: str = "near-far"

    @property
    def achieved_ratio(self) -> Optional[float]:
        high = self.class_counts.get(CrashRisk.HIGH.value, 0)
        if high == 0:
            return None
        return self.matched_windows / high

    def to_dict(self) -> Dict:
        return {
            "policy": self.policy,
            "ratio": self.ratio,
            "crash_events": self.crash_events,
            "skipped_events": len(self.skipped_events),
            "insufficient_candidates": len(self.shortfalls),
            "crash_windows": self.crash_windows,
            "matched_windows": self.matched_windows,
            "class_counts": {str(k): v for k, v in self.class_counts.items()},
            "achieved_ratio": f"1:{self.achieved_ratio:g}" if self.achieved_ratio is not None else None,
        }


class IntervalIndex:
    """(sensor_id, interval_start) -> feature row lookup over joined intervals"""

    def __init__(self, intervals: pd.DataFrame, feature_names: Sequence[str] = FEATURE_NAMES):
        self.feature_names = tuple(feature_names)
        self.values = intervals[list(self.feature_names)].to_numpy(dtype=np.float64)
        if np.isnan(self.values).any():
            raise ValueError("intervals contain missing feature values; join weather before labeling")
        sensors = intervals["sensor_id"].to_numpy()
        starts = intervals["interval_start"].to_numpy(dtype=np.int64)
        self.rows = {(s, int(t)): i for i, (s, t) in enumerate(zip(sensors, starts))}
        self.first_start = int(starts.min()) if len(starts) else 0
        self.last_start = int(starts.max()) if len(starts) else -1

    def matrix(self, sensor_id: str, end_time: int) -> Optional[np.ndarray]:
        """Rows for the TIMESTEPS intervals ending at end_time, oldest first, or None if any is missing"""
        rows = []
        for step in range(TIMESTEPS, 0, -1):
            row = self.rows.get((sensor_id, end_time - step * INTERVAL_SECONDS))
            if row is None:
                return None
            rows.append(row)
        return self.values[rows]


def assign_risk_label(window_origin: WindowOrigin, policy: str = "near-far") -> CrashRisk:
    origin = WindowOrigin(window_origin)
    if origin is WindowOrigin.NEAR:
        return CrashRisk.HIGH
    if origin is WindowOrigin.MATCHED:
        return CrashRisk.NONE
    if policy == "single-window":
        raise ValueError("single-window policy has no low-risk (12-24 min) windows")
    return CrashRisk.LOW


def _sorted_events(crashes: pd.DataFrame) -> List[CrashEvent]:
    events = [CrashEvent(int(ts), str(s)) for ts, s in zip(crashes["timestamp"], crashes["sensor_id"])]
    return sorted(events, key=lambda e: (e.timestamp, e.sensor_id))


def extract_crash_windows(
    intervals: pd.DataFrame,
    crash_events: pd.DataFrame,
    policy: str = "near-far",
    index: Optional[IntervalIndex] = None,
) -> Tuple[List[Window], List[CrashEvent]]:
    """
    Windows strictly before each crash's interval

    Returns the windows and the events skipped for missing history.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown label policy {policy!r}; expected one of {POLICIES}")
    index = index or IntervalIndex(intervals)
    windows: List[Window] = []
    skipped: List[CrashEvent] = []
    for event in _sorted_events(crash_events):
        end = event.interval_start
        near = index.matrix(event.sensor_id, end)
        if near is None:
            skipped.append(event)
            logger.debug(f"Skipping crash at {event.timestamp} ({event.sensor_id}): incomplete history")
            continue
        windows.append(Window(event.sensor_id, end, near, assign_risk_label(WindowOrigin.NEAR, policy), Provenance.CRASH))
        if policy == "near-far":
            far_end = end - WINDOW_SPAN
            far = index.matrix(event.sensor_id, far_end)
            if far is not None:
                windows.append(
                    Window(event.sensor_id, far_end, far, assign_risk_label(WindowOrigin.FAR, policy), Provenance.CRASH)
                )
    logger.info(f"Extracted {len(windows)} crash windows, skipped {len(skipped)} events")
    return windows, skipped


def _crash_times_by_sensor(crashes: pd.DataFrame) -> Dict[str, np.ndarray]:
    return {
        sensor: np.sort(group["timestamp"].to_numpy(dtype=np.int64))
        for sensor, group in crashes.groupby("sensor_id", sort=True)
    }


def _near_crash(times: np.ndarray, moments: np.ndarray, buffer_seconds: int) -> np.ndarray:
    """True where some crash time lies within +-buffer of the moment"""
    lo = np.searchsorted(times, moments - buffer_seconds, side="left")
    hi = np.searchsorted(times, moments + buffer_seconds, side="right")
    return hi > lo


def sample_matched_noncrash(
    intervals: pd.DataFrame,
    crash_events: pd.DataFrame,
    ratio: int = 5,
    rng_seed: int = 0,
    buffer_minutes: int = 30,
    index: Optional[IntervalIndex] = None,
    events: Optional[Sequence[CrashEvent]] = None,
) -> Tuple[List[Window], List[InsufficientCandidates]]:
    """
    Up to `ratio` windows per crash at the same sensor and local time of day on other days

    A candidate day qualifies when its three intervals exist and no crash at
    that sensor lies within +-buffer_minutes of the shifted crash moment. Days
    are drawn uniformly without replacement among the qualifying ones.
    """
    if ratio < 1:
        raise ValueError("ratio must be a positive integer")
    index = index or IntervalIndex(intervals)
    rng = np.random.default_rng(rng_seed)
    crash_times = _crash_times_by_sensor(crash_events)
    buffer_seconds = buffer_minutes * 60
    events = list(events) if events is not None else _sorted_events(crash_events)

    windows: List[Window] = []
    shortfalls: List[InsufficientCandidates] = []
    for event in events:
        end = event.interval_start
        k_min = math.ceil((index.first_start + WINDOW_SPAN - end) / DAY_SECONDS)
        k_max = (index.last_start + INTERVAL_SECONDS - end) // DAY_SECONDS
        shifts = np.array([k for k in range(k_min, k_max + 1) if k != 0], dtype=np.int64)
        if len(shifts):
            moments = event.timestamp + shifts * DAY_SECONDS
            clear = ~_near_crash(crash_times.get(event.sensor_id, np.empty(0, np.int64)), moments, buffer_seconds)
            shifts = shifts[clear]

        candidates = []
        for k in shifts:
            matrix = index.matrix(event.sensor_id, end + int(k) * DAY_SECONDS)
            if matrix is not None:
                candidates.append((int(k), matrix))

        take = min(ratio, len(candidates))
        chosen = sorted(rng.choice(len(candidates), size=take, replace=False)) if take else []
        for i in chosen:
            k, matrix = candidates[i]
            windows.append(
                Window(event.sensor_id, end + k * DAY_SECONDS, matrix, CrashRisk.NONE, Provenance.MATCHED)
            )
        if take < ratio:
            shortfalls.append(InsufficientCandidates(event, take, ratio))
            logger.warning(
                f"Insufficient candidates for crash at {event.timestamp} ({event.sensor_id}): {take} of {ratio}"
            )
    logger.info(f"Sampled {len(windows)} matched non-crash windows for {len(events)} crashes")
    return windows, shortfalls


def build_dataset(
    intervals: pd.DataFrame,
    crash_events: pd.DataFrame,
    policy: str = "near-far",
    ratio: int = 5,
    seed: int = 0,
    buffer_minutes: int = 30,
    feature_names: Sequence[str] = FEATURE_NAMES,
) -> Tuple[Dataset, LabelSummary]:
    """Crash windows plus matched non-crash windows for the events that produced a crash window"""
    index = IntervalIndex(intervals, feature_names)
    crash_windows, skipped = extract_crash_windows(intervals, crash_events, policy, index=index)
    skipped_set = set(skipped)
    kept_events = [e for e in _sorted_events(crash_events) if e not in skipped_set]
    matched, shortfalls = sample_matched_noncrash(
        intervals, crash_events, ratio, seed, buffer_minutes, index=index, events=kept_events
    )
    dataset = Dataset.from_windows(crash_windows + matched, feature_names)
    summary = LabelSummary(
        crash_events=len(crash_events),
        skipped_events=skipped,
        shortfalls=shortfalls,
        class_counts=dataset.class_counts,
        crash_windows=len(crash_windows),
        matched_windows=len(matched),
        ratio=ratio,
        policy=policy,
    )
    logger.info(f"Dataset: {len(dataset)} windows, class counts {summary.class_counts}")
    return dataset, summary


def split_train_test(dataset: Dataset, train_fraction: float = 0.8, seed: int = 0) -> Tuple[Dataset, Dataset]:
    """Stratified split: each class split at floor(n_c * train_fraction)"""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in CLASS_VALUES:
        members = np.flatnonzero(dataset.labels == c)
        if len(members) == 0:
            continue
        if len(members) < 2:
            raise ClassTooSmall(c, len(members))
        order = rng.permutation(members)
        n_train = math.floor(len(members) * train_fraction + 1e-9)
        train_idx.append(order[:n_train])
        test_idx.append(order[n_train:])
    train = np.sort(np.concatenate(train_idx)) if train_idx else np.empty(0, np.int64)
    test = np.sort(np.concatenate(test_idx)) if test_idx else np.empty(0, np.int64)
    logger.info(f"Split {len(dataset)} windows into {len(train)} train / {len(test)} test")
    return dataset.subset(train), dataset.subset(test)


def dataset_columns(feature_names: Sequence[str]) -> List[str]:
    return [f"f{t}_{name}" for t in range(TIMESTEPS) for name in feature_names]


def dataset_to_frame(dataset: Dataset) -> pd.DataFrame:
    frame = pd.DataFrame(dataset.flattened(), columns=dataset_columns(dataset.feature_names))
    frame.insert(0, "label", dataset.labels)
    frame.insert(0, "end_time", dataset.end_times)
    frame.insert(0, "sensor_id", dataset.sensor_ids)
    frame["provenance"] = dataset.provenance
    return frame


def write_dataset_csv(dataset: Dataset) -> str:
    return frame_to_csv(dataset_to_frame(dataset))


def read_dataset_csv(source: Source, name: str = "dataset.csv") -> Dataset:
    """Read a prepared-dataset CSV, validating the header layout and labels"""
    text = decode_text(source, name)
    frame = pd.read_csv(
        io.StringIO(text),
        dtype={"sensor_id": str, "provenance": str},
        keep_default_na=False,
        float_precision="round_trip",
    )
    head = ["sensor_id", "end_time", "label"]
    for i, col in enumerate(head):
        if len(frame.columns) <= i or frame.columns[i] != col:
            raise MissingColumn(col, name)
    feature_cols = [c for c in frame.columns[3:] if c != "provenance"]
    names = [c[3:] for c in feature_cols if c.startswith("f0_")]
    if not names or feature_cols != dataset_columns(names):
        raise MalformedRow(1, "feature columns must be f<t>_<name> for t = 0, 1, 2 over one feature list", name)

    labels = pd.to_numeric(frame["label"], errors="coerce").to_numpy(dtype=np.float64)
    bad = np.flatnonzero(~np.isin(labels, CLASS_VALUES))
    if len(bad):
        raise MalformedRow(int(bad[0]) + 2, f"label must be 0, 0.5 or 1: {frame['label'].iloc[bad[0]]!r}", name)
    values = frame[feature_cols].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64)
    bad_rows = np.flatnonzero(~np.isfinite(values).all(axis=1))
    if len(bad_rows):
        raise MalformedRow(int(bad_rows[0]) + 2, "non-numeric feature value", name)

    if "provenance" in frame.columns:
        provenance = frame["provenance"].to_numpy(dtype=object)
    else:
        provenance = np.where(labels == CrashRisk.NONE.value, Provenance.MATCHED.value, Provenance.CRASH.value)
    return Dataset(
        X=values.reshape(len(frame), TIMESTEPS, len(names)),
        labels=labels,
        sensor_ids=frame["sensor_id"].to_numpy(dtype=object),
        end_times=pd.to_numeric(frame["end_time"]).to_numpy(dtype=np.int64),
        provenance=provenance,
        feature_names=tuple(names),
    )