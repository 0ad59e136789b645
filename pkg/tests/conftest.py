import os
import tempfile

# Keep HTTP uploads out of the repository during tests
os.environ.setdefault("CRASHCAST_STORAGE", tempfile.mkdtemp(prefix="crashcast-storage-"))

import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
import pytest  # noqa: E402

from app.core.config import SynthSpec  # noqa: E402
from app.core.ingest import aggregate_intervals, join_weather  # noqa: E402
from app.core.synthgen import generate  # noqa: E402
from app.models.dataset import TIMESTEPS, Dataset  # noqa: E402
from app.models.records import FEATURE_NAMES, INTERVAL_COLUMNS, SENSOR_COLUMNS  # noqa: E402

T0 = 1546300800  # 2019-01-01T00:00:00Z


def sensor_csv(rows) -> bytes:
    """rows: (timestamp, sensor_id, *12 traffic values)"""
    lines = [",".join(SENSOR_COLUMNS)]
    lines += [",".join(str(v) for v in row) for row in rows]
    return ("\n".join(lines) + "\n").encode("utf-8")


def make_intervals(sensor_ids, starts) -> pd.DataFrame:
    """Joined intervals whose feature j at interval start t holds t / 240 + j"""
    rows = []
    for s in sensor_ids:
        for t in starts:
            rows.append([s, int(t)] + [t / 240 + j for j in range(len(FEATURE_NAMES))] + [1])
    frame = pd.DataFrame(rows, columns=list(INTERVAL_COLUMNS))
    frame["interval_start"] = frame["interval_start"].astype(np.int64)
    return frame


def random_dataset(counts=(20, 20, 20), n_features=4, seed=0, signal=True) -> Dataset:
    """Windows whose feature 0 rises with the risk class when `signal` is set"""
    rng = np.random.default_rng(seed)
    labels = np.concatenate([np.full(n, c) for n, c in zip(counts, (0.0, 0.5, 1.0))])
    X = rng.random((len(labels), TIMESTEPS, n_features))
    if signal:
        X[:, :, 0] += 2.0 * labels[:, None]
    return Dataset(
        X=X,
        labels=labels,
        sensor_ids=np.array([f"S{i % 3}" for i in range(len(labels))], dtype=object),
        end_times=T0 + 240 * np.arange(len(labels)),
        provenance=np.where(labels == 0.0, "matched", "crash"),
        feature_names=tuple(f"x{j}" for j in range(n_features)),
    )


@pytest.fixture
def dataset_factory():
    return random_dataset


@pytest.fixture(scope="session")
def tiny_spec() -> SynthSpec:
    return SynthSpec(sensor_count=3, crash_count=12, study_days=20, coverage="crash-bands", band_days=8)


@pytest.fixture(scope="session")
def tiny_study(tiny_spec):
    return generate(tiny_spec, seed=7)


@pytest.fixture(scope="session")
def tiny_intervals(tiny_study):
    return join_weather(aggregate_intervals(tiny_study.sensors), tiny_study.weather)


@pytest.fixture(scope="session")
def study_files(tiny_study, tmp_path_factory):
    out = tmp_path_factory.mktemp("study")
    tiny_study.write(out)
    return out
