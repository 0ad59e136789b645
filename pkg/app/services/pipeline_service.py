"""
Pipeline Service - runs the pipeline steps and persists their artifacts

The step functions are synchronous and shared by the command line and the
HTTP routes; PipelineService wraps them for the async handlers.
"""
import asyncio
import zlib
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from app.core.baselines import train_bp_mlp, train_decision_tree, train_svm_ovr
from app.core.config import BaselineConfig, CnnConfig, FeatureConfig, IngestConfig, LabelConfig, RunConfig, SynthSpec
from app.core.errors import CrashcastError
from app.core.evaluation import (
    comparison_table,
    evaluate_model,
    regression_metrics,
    report_dict,
    report_frame,
    summary_row,
)
from app.core.features import select_and_reduce
from app.core.ingest import aggregate_intervals, join_weather, parse_crash_csv, parse_sensor_csv, parse_weather_csv, validate_crashes
from app.core.label import build_dataset, read_dataset_csv, split_train_test, write_dataset_csv
from app.core.neuralnet import evaluate_mse, predictions_frame, train_cnn
from app.core.persistence import load_model, save_model
from app.core.synthgen import generate
from app.models.dataset import Dataset
from app.utils.csvio import write_csv, write_json, write_text
from app.utils.logger import get_logger
from app.utils.plotting import comparison_svg, importance_svg, predictions_svg, roc_svg

logger = get_logger(__name__)

PathLike = Union[str, Path]
MODEL_KINDS = ("cnn", "mlp", "svm", "tree")


def derive_seed(seed: int, label: str) -> int:
    """Independent sub-seed for one labeled use of the run seed"""
    return int(np.random.SeedSequence([seed, zlib.crc32(label.encode("utf-8"))]).generate_state(1)[0])


def _str_paths(paths: Dict[str, Path]) -> Dict[str, str]:
    return {k: str(v) for k, v in paths.items()}


# ==================== synth ====================

def synth_step(spec: SynthSpec, seed: int, out_dir: PathLike, ingest: Optional[IngestConfig] = None) -> Dict[str, Any]:
    ingest = ingest or IngestConfig()
    result = generate(spec, seed, ingest.utc_offset_minutes)
    paths = result.write(out_dir)
    return {
        "readings": len(result.sensors),
        "crashes": len(result.crashes),
        "weather_days": len(result.weather),
        "files": _str_paths(paths),
    }


# ==================== prepare ====================

def load_intervals(sensors_path: PathLike, weather_path: PathLike, crashes_path: PathLike):
    """Parse the three inputs and return (joined intervals, crashes)"""
    records = parse_sensor_csv(Path(sensors_path), name=Path(sensors_path).name)
    weather = parse_weather_csv(Path(weather_path), name=Path(weather_path).name)
    crashes = parse_crash_csv(Path(crashes_path), name=Path(crashes_path).name)
    validate_crashes(crashes, records["sensor_id"].unique())
    intervals = join_weather(aggregate_intervals(records), weather)
    return intervals, crashes


def prepare_step(
    sensors_path: PathLike,
    weather_path: PathLike,
    crashes_path: PathLike,
    out_dir: PathLike,
    seed: int,
    label: Optional[LabelConfig] = None,
) -> Dict[str, Any]:
    label = label or LabelConfig()
    out_dir = Path(out_dir)
    intervals, crashes = load_intervals(sensors_path, weather_path, crashes_path)
    dataset, summary = build_dataset(
        intervals, crashes, label.policy, label.ratio, derive_seed(seed, "sampling"), label.crash_buffer_minutes
    )
    train, test = split_train_test(dataset, label.train_fraction, derive_seed(seed, "split"))
    files = {
        "dataset": write_text(out_dir / "dataset.csv", write_dataset_csv(dataset)),
        "train": write_text(out_dir / "train.csv", write_dataset_csv(train)),
        "test": write_text(out_dir / "test.csv", write_dataset_csv(test)),
    }
    payload = summary.to_dict()
    payload.update(seed=seed, windows=len(dataset), train_windows=len(train), test_windows=len(test))
    files["summary"] = write_json(out_dir / "prepare_summary.json", payload)
    logger.info(f"Prepared {len(dataset)} windows (achieved ratio {payload['achieved_ratio']})")
    return {**payload, "files": _str_paths(files)}


# ==================== features ====================

def _reduced_name(path: Path) -> str:
    return f"{path.stem}_reduced.csv"


def features_step(
    data_path: PathLike,
    out_dir: PathLike,
    seed: int,
    features: Optional[FeatureConfig] = None,
    apply_paths: Sequence[PathLike] = (),
) -> Dict[str, Any]:
    features = features or FeatureConfig()
    out_dir = Path(out_dir)
    data_path = Path(data_path)
    train = read_dataset_csv(data_path, data_path.name)
    others = [read_dataset_csv(Path(p), Path(p).name) for p in apply_paths]
    result, reduced, reduced_others = select_and_reduce(
        train, others, features.corr_threshold, features.tree_count, derive_seed(seed, "trees"), features.min_samples_split
    )
    report = result.report_frame()
    files = {
        "report": write_csv(out_dir / "feature_report.csv", report),
        "correlation": write_csv(out_dir / "correlation.csv", result.correlation_frame()),
        "importance_svg": importance_svg(report, out_dir / "importance.svg"),
        "reduced": write_text(out_dir / _reduced_name(data_path), write_dataset_csv(reduced)),
    }
    for path, dataset in zip(apply_paths, reduced_others):
        files[f"reduced:{Path(path).name}"] = write_text(out_dir / _reduced_name(Path(path)), write_dataset_csv(dataset))
    return {"kept": list(result.kept), "importance": result.importance.as_dict(), "files": _str_paths(files)}


# ==================== train ====================

def fit_model(kind: str, train: Dataset, seed: int, cnn: CnnConfig, baselines: BaselineConfig, test: Optional[Dataset] = None):
    """Returns (model, trace frame or None, final test MSE or None)"""
    if kind == "cnn":
        config = cnn.model_copy(update={"seed": derive_seed(seed, "init-cnn")})
        model, trace = train_cnn(train, config, test)
        return model, trace.to_frame(), trace.test_mse
    if kind == "mlp":
        c = baselines.mlp
        model, trace = train_bp_mlp(train, c.learning_rate, c.momentum, c.epochs, derive_seed(seed, "init-mlp"), c.hidden_width)
        return model, trace.to_frame(), evaluate_mse(model, test) if test is not None else None
    if kind == "svm":
        c = baselines.svm
        model = train_svm_ovr(train, c.lam, c.epochs, derive_seed(seed, "svm"))
        return model, model.objective_frame(), evaluate_mse(model, test) if test is not None else None
    if kind == "tree":
        c = baselines.tree
        model = train_decision_tree(train, c.max_depth, c.min_leaf)
        return model, None, evaluate_mse(model, test) if test is not None else None
    raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def train_step(
    data_path: PathLike,
    kind: str,
    out_dir: PathLike,
    seed: int,
    cnn: Optional[CnnConfig] = None,
    baselines: Optional[BaselineConfig] = None,
    test_path: Optional[PathLike] = None,
) -> Dict[str, Any]:
    out_dir = Path(out_dir)
    train = read_dataset_csv(Path(data_path), Path(data_path).name)
    test = None
    if test_path is not None:
        test = read_dataset_csv(Path(test_path), Path(test_path).name).select_features(train.feature_names)
    model, trace, test_mse = fit_model(kind, train, seed, cnn or CnnConfig(), baselines or BaselineConfig(), test)

    files = {"model": save_model(out_dir / f"{kind}.model", model)}
    if trace is not None:
        files["trace"] = write_csv(out_dir / f"{kind}_trace.csv", trace)

    frames = [predictions_frame(model, train).assign(split="train")]
    if test is not None:
        frames.append(predictions_frame(model, test).assign(split="test"))
    predictions = pd.concat(frames, ignore_index=True)
    files["predictions"] = write_csv(out_dir / f"{kind}_predictions.csv", predictions)
    files["predictions_svg"] = predictions_svg(predictions, out_dir / f"{kind}_predictions.svg", f"{kind}: predicted vs observed")
    overall = regression_metrics(predictions["predicted"], predictions["observed"])

    summary = {
        "model": kind,
        "seed": seed,
        "train_windows": len(train),
        "features": list(train.feature_names),
        "final_train_mse": float(trace["train_mse"].iloc[-1]) if trace is not None and "train_mse" in trace and len(trace) else None,
        "test_mse": test_mse,
        "all_data_r": overall.r,
    }
    files["summary"] = write_json(out_dir / f"{kind}_train_summary.json", json_safe(summary))
    logger.info(f"Trained {kind} model -> {files['model']}")
    return {**summary, "files": _str_paths(files)}


# ==================== evaluate / compare / plot ====================

def _roc_files(report, name: str, out_dir: Path) -> Dict[str, Path]:
    files = {}
    curves = {}
    for result in report.classes:
        if result.missing:
            continue
        frame = result.curve.to_frame()
        files[f"roc_{result.label}"] = write_csv(out_dir / f"{name}_roc_{result.label}.csv", frame)
        curves[f"class {result.label}"] = frame
    micro = report.micro_curve.to_frame()
    files["roc_micro"] = write_csv(out_dir / f"{name}_roc_micro.csv", micro)
    curves["micro"] = micro
    files["roc_svg"] = roc_svg(curves, out_dir / f"{name}_roc.svg", f"{name} ROC")
    return files


def evaluate_step(model_path: PathLike, data_path: PathLike, out_dir: PathLike, name: Optional[str] = None) -> Dict[str, Any]:
    out_dir = Path(out_dir)
    model = load_model(Path(model_path), Path(model_path).name)
    dataset = read_dataset_csv(Path(data_path), Path(data_path).name).select_features(model.feature_names)
    name = name or Path(model_path).stem
    report = evaluate_model(model, dataset)
    payload = json_safe(report_dict(report))
    files = {
        "report": write_csv(out_dir / f"{name}_report.csv", report_frame(report)),
        "report_json": write_json(out_dir / f"{name}_report.json", payload),
        **_roc_files(report, name, out_dir),
    }
    logger.info(f"Evaluated {name} on {len(dataset)} windows: micro AUC {report.headline_auc}")
    return {"name": name, "summary": summary_row(report, name), "report": payload, "files": _str_paths(files)}


def compare_step(model_paths: Sequence[PathLike], data_path: PathLike, out_dir: PathLike) -> Dict[str, Any]:
    out_dir = Path(out_dir)
    rows = []
    for path in model_paths:
        model = load_model(Path(path), Path(path).name)
        dataset = read_dataset_csv(Path(data_path), Path(data_path).name).select_features(model.feature_names)
        rows.append(summary_row(evaluate_model(model, dataset), Path(path).stem))
    table = comparison_table(rows)
    files = {
        "comparison": write_csv(out_dir / "comparison.csv", table),
        "comparison_svg": comparison_svg(table, out_dir / "comparison.svg"),
    }
    return {"rows": len(table), "table": table, "files": _str_paths(files)}


def plot_step(in_dir: PathLike, out_dir: Optional[PathLike] = None) -> Dict[str, Any]:
    """Re-render SVGs from the CSV artifacts found in a directory"""
    in_dir = Path(in_dir)
    out_dir = Path(out_dir) if out_dir else in_dir
    groups: Dict[str, Dict[str, pd.DataFrame]] = {}
    for path in sorted(in_dir.glob("*_roc_*.csv")):
        name, _, label = path.stem.rpartition("_roc_")
        curve_label = "micro" if label == "micro" else f"class {label}"
        groups.setdefault(name, {})[curve_label] = pd.read_csv(path)
    files = {}
    for name, curves in groups.items():
        files[f"{name}_roc"] = roc_svg(curves, out_dir / f"{name}_roc.svg", f"{name} ROC")
    if (in_dir / "comparison.csv").exists():
        files["comparison"] = comparison_svg(pd.read_csv(in_dir / "comparison.csv"), out_dir / "comparison.svg")
    if (in_dir / "feature_report.csv").exists():
        files["importance"] = importance_svg(pd.read_csv(in_dir / "feature_report.csv"), out_dir / "importance.svg")
    logger.info(f"Rendered {len(files)} figures into {out_dir}")
    return {"files": _str_paths(files)}


# ==================== whole run ====================

def run_pipeline(run: RunConfig, spec: Optional[SynthSpec] = None) -> Dict[str, Any]:
    """synth (unless inputs are given) -> prepare -> features -> train -> evaluate -> compare"""
    out = Path(run.out_dir)
    summary: Dict[str, Any] = {"seed": run.seed}

    if run.sensors_csv is None:
        summary["synth"] = synth_step(spec or SynthSpec(), run.seed, out / "data", run.ingest)
        sensors, weather, crashes = out / "data" / "sensors.csv", out / "data" / "weather.csv", out / "data" / "crashes.csv"
    else:
        run.check_inputs()
        sensors, weather, crashes = run.sensors_csv, run.weather_csv, run.crashes_csv

    prepared = prepare_step(sensors, weather, crashes, out / "prepared", run.seed, run.label)
    summary["prepare"] = {k: v for k, v in prepared.items() if k != "files"}

    selected = features_step(
        out / "prepared" / "train.csv", out / "features", run.seed, run.features, [out / "prepared" / "test.csv"]
    )
    summary["features"] = {"kept": selected["kept"]}
    train_path = out / "features" / "train_reduced.csv"
    test_path = out / "features" / "test_reduced.csv"

    model_paths: List[Path] = []
    summary["train"] = {}
    summary["evaluate"] = {}
    for kind in run.models:
        trained = train_step(train_path, kind, out / "models", run.seed, run.cnn, run.baselines, test_path)
        summary["train"][kind] = {k: v for k, v in trained.items() if k != "files"}
        model_paths.append(Path(trained["files"]["model"]))
        evaluated = evaluate_step(trained["files"]["model"], test_path, out / "reports", kind)
        summary["evaluate"][kind] = evaluated["summary"] | {"report": evaluated["report"]}

    compared = compare_step(model_paths, test_path, out)
    summary["compare"] = compared["files"]
    write_json(out / "run_summary.json", json_safe(summary))
    logger.info(f"Pipeline finished; artifacts in {out}")
    return summary


def json_safe(value):
    if isinstance(value, dict):
        return {str(k): json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    if isinstance(value, float) and not np.isfinite(value):
        return None
    if isinstance(value, np.generic):
        return json_safe(value.item())
    return value


class PipelineService:
    """Async facade for the HTTP routes; long steps run on a worker thread"""

    async def _call(self, func, *args, **kwargs) -> Dict[str, Any]:
        try:
            data = await asyncio.to_thread(func, *args, **kwargs)
            return {"success": True, "data": json_safe(data), "error": None}
        except CrashcastError as e:
            logger.warning(f"{func.__name__} failed: {e}")
            return {"success": False, "data": None, "error": str(e), "exit_code": e.exit_code}

    async def prepare(self, sensors_path, weather_path, crashes_path, out_dir, seed: int, label: LabelConfig) -> Dict[str, Any]:
        return await self._call(prepare_step, sensors_path, weather_path, crashes_path, out_dir, seed, label)

    async def evaluate(self, model_path, data_path, out_dir) -> Dict[str, Any]:
        return await self._call(evaluate_step, model_path, data_path, out_dir)
