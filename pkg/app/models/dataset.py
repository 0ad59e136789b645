"""
Windows and labeled datasets
"""
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import FeatureMismatch
from app.models.records import CLASS_VALUES, CrashRisk, Provenance

TIMESTEPS = 3


@dataclass(frozen=True)
class Window:
    sensor_id: str
    end_time: int
    matrix: np.ndarray  # TIMESTEPS x F, oldest row first
    label: CrashRisk
    provenance: Provenance


@dataclass(frozen=True)
class NormalizationParams:
    feature_names: Tuple[str, ...]
    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        if np.any(self.maxs < self.mins):
            raise ValueError("normalization max must be >= min")

    @property
    def constant(self) -> np.ndarray:
        return self.maxs == self.mins


@dataclass
class Dataset:
    """Labeled windows stored as one (n, TIMESTEPS, F) array"""

    X: np.ndarray
    labels: np.ndarray
    sensor_ids: np.ndarray
    end_times: np.ndarray
    provenance: np.ndarray
    feature_names: Tuple[str, ...]
    normalization: Optional[NormalizationParams] = field(default=None)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        self.end_times = np.asarray(self.end_times, dtype=np.int64)
        self.sensor_ids = np.asarray(self.sensor_ids, dtype=object)
        self.provenance = np.asarray(self.provenance, dtype=object)
        self.feature_names = tuple(self.feature_names)
        n = len(self.labels)
        if self.X.ndim != 3 or self.X.shape[0] != n or self.X.shape[2] != len(self.feature_names):
            raise ValueError(
                f"window array shape {self.X.shape} does not match {n} labels x {len(self.feature_names)} features"
            )
        for name, arr in (("sensor_ids", self.sensor_ids), ("end_times", self.end_times), ("provenance", self.provenance)):
            if len(arr) != n:
                raise ValueError(f"{name} has {len(arr)} entries for {n} windows")

    @classmethod
    def from_windows(cls, windows: Sequence[Window], feature_names: Sequence[str]) -> "Dataset":
        f = len(feature_names)
        X = np.array([w.matrix for w in windows], dtype=np.float64).reshape(len(windows), TIMESTEPS, f)
        return cls(
            X=X,
            labels=np.array([float(w.label) for w in windows]),
            sensor_ids=np.array([w.sensor_id for w in windows], dtype=object),
            end_times=np.array([w.end_time for w in windows], dtype=np.int64),
            provenance=np.array([Provenance(w.provenance).value for w in windows], dtype=object),
            feature_names=tuple(feature_names),
        )

    def __len__(self) -> int:
        return len(self.labels)

    def window(self, i: int) -> Window:
        return Window(
            sensor_id=str(self.sensor_ids[i]),
            end_time=int(self.end_times[i]),
            matrix=self.X[i],
            label=CrashRisk.from_value(self.labels[i]),
            provenance=Provenance(self.provenance[i]),
        )

    @property
    def class_counts(self) -> Dict[float, int]:
        return {c: int(np.sum(self.labels == c)) for c in CLASS_VALUES}

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return replace(
            self,
            X=self.X[idx],
            labels=self.labels[idx],
            sensor_ids=self.sensor_ids[idx],
            end_times=self.end_times[idx],
            provenance=self.provenance[idx],
        )

    def select_features(self, names: Sequence[str]) -> "Dataset":
        missing = [n for n in names if n not in self.feature_names]
        if missing:
            raise FeatureMismatch(names, self.feature_names)
        cols = [self.feature_names.index(n) for n in names]
        norm = None
        if self.normalization is not None:
            norm = NormalizationParams(
                tuple(names), self.normalization.mins[cols], self.normalization.maxs[cols]
            )
        return replace(self, X=self.X[:, :, cols], feature_names=tuple(names), normalization=norm)

    def window_means(self) -> np.ndarray:
        """One row per window: each feature averaged over the time steps"""
        return self.X.mean(axis=1)

    def flattened(self) -> np.ndarray:
        """One row per window: time steps laid out oldest first, features within each step"""
        return self.X.reshape(len(self), -1)

    def require_features(self, expected: Sequence[str]) -> None:
        if tuple(expected) != self.feature_names:
            raise FeatureMismatch(expected, self.feature_names)


def concat(datasets: List[Dataset]) -> Dataset:
    first = datasets[0]
    for d in datasets[1:]:
        d.require_features(first.feature_names)
    return Dataset(
        X=np.concatenate([d.X for d in datasets]),
        labels=np.concatenate([d.labels for d in datasets]),
        sensor_ids=np.concatenate([d.sensor_ids for d in datasets]),
        end_times=np.concatenate([d.end_times for d in datasets]),
        provenance=np.concatenate([d.provenance for d in datasets]),
        feature_names=first.feature_names,
        normalization=first.normalization,
    )
