import numpy as np
import pandas as pd
import pytest

from app.core.errors import EmptyFile, MalformedRow, MissingColumn, MissingWeather, UnknownSensor
from app.core.ingest import (
    aggregate_intervals,
    join_weather,
    local_day,
    local_time_of_day,
    parse_crash_csv,
    parse_sensor_csv,
    parse_weather_csv,
    serialize_sensor_csv,
    validate_crashes,
)
from app.models.records import TRAFFIC_FEATURES
from conftest import T0, sensor_csv

VALUES = [70.5, 68.0, 150, 120, 10, 12, 14, 13, 11, 9, 2, 3]


def test_parse_sensor_csv_keeps_file_order():
    raw = sensor_csv([(T0 + 10, "S2", *VALUES), (T0, "S1", *VALUES)])
    records = parse_sensor_csv(raw)
    assert list(records["sensor_id"]) == ["S2", "S1"]
    assert records["timestamp"].tolist() == [T0 + 10, T0]
    assert records["up_speed"].iloc[0] == 70.5


def test_parse_sensor_csv_accepts_utf8_bom():
    raw = b"\xef\xbb\xbf" + sensor_csv([(T0, "S1", *VALUES)])
    assert len(parse_sensor_csv(raw)) == 1


def test_malformed_row_reports_file_line():
    bad = list(VALUES)
    bad[0] = "fast"
    raw = sensor_csv([(T0, "S1", *VALUES), (T0 + 1, "S1", *bad)])
    with pytest.raises(MalformedRow) as exc:
        parse_sensor_csv(raw)
    assert exc.value.line == 3


def test_negative_volume_is_malformed():
    bad = list(VALUES)
    bad[2] = -1
    with pytest.raises(MalformedRow) as exc:
        parse_sensor_csv(sensor_csv([(T0, "S1", *bad)]))
    assert exc.value.line == 2


def test_missing_column_and_empty_file():
    with pytest.raises(MissingColumn):
        parse_sensor_csv(b"timestamp,sensor_id\n1,S1\n")
    with pytest.raises(EmptyFile):
        parse_sensor_csv(b"")


def test_timestamps_outside_study_range_are_rejected():
    raw = sensor_csv([(T0, "S1", *VALUES), (T0 + 999, "S1", *VALUES)])
    with pytest.raises(MalformedRow) as exc:
        parse_sensor_csv(raw, study_range=(T0, T0 + 500))
    assert exc.value.line == 3


def test_bucket_mean_matches_direct_summation():
    rng = np.random.default_rng(3)
    n = 100
    frame = pd.DataFrame({"timestamp": T0 + rng.integers(0, 240, n), "sensor_id": "S1"})
    for col in TRAFFIC_FEATURES:
        frame[col] = rng.uniform(0, 200, n)
    out = aggregate_intervals(frame)
    assert len(out) == 1
    assert out["sample_count"].iloc[0] == n
    assert out["interval_start"].iloc[0] == T0
    for col in TRAFFIC_FEATURES:
        expected = sum(frame[col].tolist()) / n
        assert out[col].iloc[0] == pytest.approx(expected, rel=1e-12)


def test_aggregation_preserves_sums_and_ignores_input_order():
    rng = np.random.default_rng(5)
    n = 500
    frame = pd.DataFrame({
        "timestamp": T0 + rng.integers(0, 240 * 30, n),
        "sensor_id": rng.choice(["S1", "S2", "S3"], n),
    })
    for col in TRAFFIC_FEATURES:
        frame[col] = rng.uniform(0, 200, n)
    out = aggregate_intervals(frame)
    assert out["sample_count"].sum() == n
    for col in TRAFFIC_FEATURES:
        rebuilt = float((out[col] * out["sample_count"]).sum())
        assert rebuilt == pytest.approx(frame[col].sum(), rel=1e-9)

    shuffled = frame.sample(frac=1.0, random_state=1).reset_index(drop=True)
    pd.testing.assert_frame_equal(aggregate_intervals(shuffled), out)


def test_empty_buckets_are_absent():
    frame = pd.DataFrame({"timestamp": [T0, T0 + 3 * 240], "sensor_id": ["S1", "S1"]})
    for col in TRAFFIC_FEATURES:
        frame[col] = 1.0
    out = aggregate_intervals(frame)
    assert out["interval_start"].tolist() == [T0, T0 + 720]


def test_parse_weather_and_join():
    weather = parse_weather_csv(b"date,temperature,precipitation\n2019-01-01,12.5,0\n2019-01-02,8,1\n")
    frame = pd.DataFrame({"timestamp": [T0 + 100, T0 + 86400 + 5], "sensor_id": ["S1", "S1"]})
    for col in TRAFFIC_FEATURES:
        frame[col] = 1.0
    joined = join_weather(aggregate_intervals(frame), weather)
    assert joined["temperature"].tolist() == [12.5, 8.0]
    assert joined["precipitation"].tolist() == [0.0, 1.0]


def test_join_weather_needs_every_date():
    weather = parse_weather_csv(b"date,temperature,precipitation\n2019-01-01,12.5,0\n")
    frame = pd.DataFrame({"timestamp": [T0 + 2 * 86400], "sensor_id": ["S1"]})
    for col in TRAFFIC_FEATURES:
        frame[col] = 1.0
    with pytest.raises(MissingWeather):
        join_weather(aggregate_intervals(frame), weather)


@pytest.mark.parametrize("body, line", [
    (b"date,temperature,precipitation\n2019-01-01,12.5,2\n", 2),
    (b"date,temperature,precipitation\n2019-01-01,12.5,0\n2019-01-01,3,1\n", 3),
    (b"date,temperature,precipitation\n01/02/2019,12.5,0\n", 2),
])
def test_malformed_weather(body, line):
    with pytest.raises(MalformedRow) as exc:
        parse_weather_csv(body)
    assert exc.value.line == line


def test_second_crash_in_same_interval_is_rejected():
    body = f"timestamp,sensor_id\n{T0 + 10},S1\n{T0 + 200},S1\n".encode()
    with pytest.raises(MalformedRow) as exc:
        parse_crash_csv(body)
    assert exc.value.line == 3


def test_crash_sensor_must_exist():
    crashes = parse_crash_csv(f"timestamp,sensor_id\n{T0},S1\n{T0},S9\n".encode())
    validate_crashes(crashes, ["S1", "S9"])
    with pytest.raises(UnknownSensor):
        validate_crashes(crashes, ["S1"])


def test_serialized_readings_parse_back(tiny_study):
    parsed = parse_sensor_csv(serialize_sensor_csv(tiny_study.sensors).encode("utf-8"))
    pd.testing.assert_frame_equal(parsed, tiny_study.sensors, check_dtype=False)


def test_full_precision_readings_round_trip():
    rng = np.random.default_rng(11)
    values = rng.random((2000, len(TRAFFIC_FEATURES))) * 10.0 ** rng.integers(-4, 4, size=(2000, len(TRAFFIC_FEATURES)))
    rows = [(T0 + i, f"S{i % 4}", *(repr(float(v)) for v in row)) for i, row in enumerate(values)]
    raw = sensor_csv(rows)
    parsed = parse_sensor_csv(raw)
    np.testing.assert_array_equal(parsed[list(TRAFFIC_FEATURES)].to_numpy(), values)
    assert serialize_sensor_csv(parsed).encode("utf-8") == raw


def test_overflowing_reading_is_malformed():
    bad = list(VALUES)
    bad[1] = "1e999"
    with pytest.raises(MalformedRow) as exc:
        parse_sensor_csv(sensor_csv([(T0, "S1", *bad)]))
    assert exc.value.line == 2


def test_local_time_helpers():
    assert local_time_of_day(T0, 180) == 3 * 3600
    assert local_day(T0 + 21 * 3600, 180) == local_day(T0, 180) + 1
