from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from app import __version__
from app.main import app
from app.services.pipeline_service import prepare_step, train_step
from app.utils.storage import upload_name


@pytest.fixture
def client(tmp_path, monkeypatch):
    monkeypatch.setattr("app.utils.storage.STORAGE_BASE", tmp_path)
    return TestClient(app)


def upload(study_files, sensors=None):
    files = {name: (f"{name}.csv", (study_files / f"{name}.csv").read_bytes(), "text/csv")
             for name in ("sensors", "weather", "crashes")}
    if sensors is not None:
        files["sensors"] = ("sensors.csv", sensors, "text/csv")
    return files


def test_root_and_health(client):
    assert client.get("/").json()["health"] == "/api/v1/health"
    body = client.get("/api/v1/health").json()
    assert body == {"status": "ok", "service": "crashcast", "version": __version__}


def test_config(client):
    body = client.get("/api/v1/config").json()
    assert body["success"] is True
    assert body["config"]["label"]["ratio"] == 5


def test_prepare_writes_job_outputs(client, study_files, tmp_path):
    response = client.post("/api/v1/prepare", files=upload(study_files), data={"seed": "3", "ratio": "2"})
    assert response.status_code == 200
    body = response.json()
    assert body["success"] is True
    assert body["job"].startswith("prepare-")
    assert body["data"]["seed"] == 3
    job = tmp_path / "outputs" / body["job"]
    assert (job / "train.csv").exists() and (job / "prepare_summary.json").exists()
    assert (tmp_path / "uploads" / body["job"] / "sensors.csv").exists()


def test_prepare_needs_a_valid_seed(client, study_files):
    assert client.post("/api/v1/prepare", files=upload(study_files)).status_code == 422
    assert client.post("/api/v1/prepare", files=upload(study_files), data={"seed": "-1"}).status_code == 400
    assert client.post("/api/v1/prepare", files=upload(study_files), data={"seed": "1", "ratio": "0"}).status_code == 400


def test_prepare_reports_input_errors(client, study_files):
    response = client.post(
        "/api/v1/prepare", files=upload(study_files, sensors=b"timestamp,sensor_id\n1,S01\n"), data={"seed": "1"}
    )
    assert response.status_code == 422
    assert response.json()["detail"]["exit_code"] == 2


def test_evaluate_uploaded_model(client, study_files, tmp_path_factory):
    work = tmp_path_factory.mktemp("api-eval")
    prepare_step(study_files / "sensors.csv", study_files / "weather.csv", study_files / "crashes.csv", work, seed=3)
    trained = train_step(work / "train.csv", "tree", work, seed=3)
    files = {
        "model": ("tree.model", Path(trained["files"]["model"]).read_bytes(), "text/plain"),
        "dataset": ("test.csv", (work / "test.csv").read_bytes(), "text/csv"),
    }
    response = client.post("/api/v1/evaluate", files=files)
    assert response.status_code == 200
    data = response.json()["data"]
    assert data["summary"]["model"] == "tree"
    assert set(data["report"]["classes"]) == {"0.0", "0.5", "1.0"}


def test_upload_names_keep_the_stem_and_force_the_suffix():
    assert upload_name("readings (1).CSV", "sensors") == "readings_1.csv"
    assert upload_name("../../runs/tree.model", "model") == "tree.model"
    assert upload_name("C:\\runs\\cnn.model", "model") == "cnn.model"
    assert upload_name("notes.txt", "crashes") == "notes.txt.csv"
    assert upload_name(None, "weather") == "weather.csv"
    assert upload_name("...", "dataset") == "dataset.csv"


def test_same_named_uploads_are_kept_apart(client, study_files, tmp_path):
    files = {name: ("data.csv", (study_files / f"{name}.csv").read_bytes(), "text/csv")
             for name in ("sensors", "weather", "crashes")}
    response = client.post("/api/v1/prepare", files=files, data={"seed": "3", "ratio": "2"})
    assert response.status_code == 200
    stored = sorted(p.name for p in (tmp_path / "uploads" / response.json()["job"]).iterdir())
    assert stored == ["crashes-data.csv", "data.csv", "weather-data.csv"]


def test_empty_upload_is_an_input_error(client, study_files):
    response = client.post("/api/v1/prepare", files=upload(study_files, sensors=b""), data={"seed": "1"})
    assert response.status_code == 422
    detail = response.json()["detail"]
    assert detail["exit_code"] == 2
    assert "uploaded sensors file" in detail["error"]
