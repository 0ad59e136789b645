import json
from argparse import Namespace

import pandas as pd
import pytest

from app.cli import _label_config, main
from app.core.config import get_default_config
from app.models.records import FEATURE_NAMES

SMALL = ["--crash-count", "12", "--sensor-count", "3", "--study-days", "20", "--band-days", "8"]


def run_ok(*argv) -> None:
    assert main([str(a) for a in argv]) == 0


def test_synth_is_reproducible(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    run_ok("synth", "--seed", 7, *SMALL, "--out", first)
    run_ok("synth", "--seed", 7, *SMALL, "--out", second)
    for name in ("sensors.csv", "weather.csv", "crashes.csv", "spec_report.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes()
    assert len(pd.read_csv(first / "crashes.csv")) == 12


def test_seed_is_mandatory(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--out", str(tmp_path)])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--seed", "-3", "--out", str(tmp_path)])
    assert exc.value.code == 2


def test_infeasible_spec_exit_code(tmp_path):
    argv = ["synth", "--seed", "1", "--sensor-count", "1", "--study-days", "2", "--crash-count", "1000"]
    assert main(argv + ["--out", str(tmp_path)]) == 4


def prepare_args(study_files, out, *extra):
    return [
        "prepare", "--seed", "3",
        "--sensors", study_files / "sensors.csv",
        "--weather", study_files / "weather.csv",
        "--crashes", study_files / "crashes.csv",
        *extra,
        "--out", out,
    ]


def test_run_labels_single_window_unless_told_otherwise():
    config = get_default_config()
    args = Namespace(policy=None, ratio=None, train_frac=None)
    assert _label_config(config, args).policy == "near-far"
    assert _label_config(config, args, whole_run=True).policy == "single-window"
    args.policy = "near-far"
    assert _label_config(config, args, whole_run=True).policy == "near-far"
    config["label"]["run_policy"] = "near-far"
    args.policy = None
    assert _label_config(config, args, whole_run=True).policy == "near-far"


def test_prepare_with_ratio_one(study_files, tmp_path, capsys):
    run_ok(*prepare_args(study_files, tmp_path, "--ratio", 1))
    summary = json.loads((tmp_path / "prepare_summary.json").read_text(encoding="utf-8"))
    assert summary["achieved_ratio"] == "1:1"
    assert summary["seed"] == 3
    printed = json.loads(capsys.readouterr().out)
    assert printed["windows"] == summary["windows"]
    train = pd.read_csv(tmp_path / "train.csv")
    test = pd.read_csv(tmp_path / "test.csv")
    assert len(train) + len(test) == summary["windows"]


def test_malformed_input_exit_code(study_files, tmp_path):
    bad = tmp_path / "bad"
    bad.mkdir()
    for name in ("weather.csv", "crashes.csv"):
        (bad / name).write_bytes((study_files / name).read_bytes())
    (bad / "sensors.csv").write_text("timestamp,sensor_id\n1,S01\n", encoding="utf-8")
    assert main([str(a) for a in prepare_args(bad, tmp_path / "out")]) == 2


@pytest.fixture(scope="module")
def prepared(study_files, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli")
    run_ok(*prepare_args(study_files, out / "prepared"))
    run_ok(
        "features", "--seed", 3, "--data", out / "prepared" / "train.csv",
        "--apply", out / "prepared" / "test.csv", "--trees", 5, "--out", out / "features",
    )
    return out


def test_features_threshold_above_one_keeps_everything(prepared, tmp_path):
    run_ok(
        "features", "--seed", 3, "--data", prepared / "prepared" / "train.csv",
        "--corr-threshold", 1.1, "--trees", 3, "--out", tmp_path,
    )
    report = pd.read_csv(tmp_path / "feature_report.csv")
    assert report["feature"].tolist() == list(FEATURE_NAMES)
    assert report["kept"].all()
    assert (tmp_path / "train_reduced.csv").exists()


def test_train_evaluate_compare_and_plot(prepared):
    features = prepared / "features"
    models = prepared / "models"
    reports = prepared / "reports"
    run_ok("train", "--seed", 3, "--data", features / "train_reduced.csv", "--model", "tree", "--out", models)
    run_ok(
        "train", "--seed", 3, "--data", features / "train_reduced.csv", "--test", features / "test_reduced.csv",
        "--model", "mlp", "--epochs", 3, "--out", models,
    )
    assert (models / "tree.model").read_text(encoding="utf-8").splitlines()[0] == "crashcast-model tree v1"
    trace = pd.read_csv(models / "mlp_trace.csv")
    assert trace["epoch"].tolist() == [1, 2, 3]
    predictions = pd.read_csv(models / "mlp_predictions.csv")
    assert set(predictions["split"]) == {"train", "test"}

    run_ok("evaluate", "--model", models / "tree.model", "--data", features / "test_reduced.csv", "--out", reports)
    report = pd.read_csv(reports / "tree_report.csv")
    assert report["row"].tolist()[-3:] == ["micro", "macro", "weighted"]
    assert (reports / "tree_roc_micro.csv").exists()

    run_ok(
        "compare", "--models", models / "tree.model", models / "mlp.model",
        "--data", features / "test_reduced.csv", "--out", reports,
    )
    table = pd.read_csv(reports / "comparison.csv")
    assert table["model"].tolist() == ["tree", "mlp"]

    (reports / "tree_roc.svg").unlink()
    run_ok("plot", "--dir", reports)
    assert (reports / "tree_roc.svg").exists()
    assert (reports / "comparison.svg").exists()


def test_missing_input_file_is_a_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["evaluate", "--model", str(tmp_path / "none.model"), "--data", str(tmp_path / "x.csv"), "--out", str(tmp_path)])
    assert exc.value.code == 2
