"""
Command line - one subcommand per pipeline step

    python -m app synth    --seed 7 --out data/
    python -m app prepare  --seed 7 --sensors data/sensors.csv --weather data/weather.csv --crashes data/crashes.csv --out prepared/
    python -m app features --seed 7 --data prepared/train.csv --apply prepared/test.csv --out features/
    python -m app train    --seed 7 --data features/train_reduced.csv --model cnn --out models/
    python -m app evaluate --model models/cnn.model --data features/test_reduced.csv --out reports/
    python -m app compare  --models models/*.model --data features/test_reduced.csv --out reports/
    python -m app plot     --dir reports/
    python -m app run      --seed 7 --out run/

Exit codes: 0 success, 2 input error, 3 numeric failure, 4 infeasible synthetic spec.
"""
import argparse
import copy
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from app.core.config import (
    BaselineConfig,
    CnnConfig,
    FeatureConfig,
    IngestConfig,
    LabelConfig,
    RunConfig,
    SynthSpec,
    build_section,
    load_config,
)
from app.core.errors import ConfigError, CrashcastError
from app.services import pipeline_service as pipeline
from app.utils.logger import configure_logging, get_logger

logger = get_logger(__name__)


# ==================== argument types ====================

def _seed(value: str) -> int:
    try:
        seed = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {value!r}")
    if seed < 0:
        raise argparse.ArgumentTypeError("seed must be >= 0")
    return seed


def _existing_file(value: str) -> Path:
    path = Path(value)
    if not path.is_file():
        raise argparse.ArgumentTypeError(f"file not found: {value}")
    return path


def _existing_dir(value: str) -> Path:
    path = Path(value)
    if not path.is_dir():
        raise argparse.ArgumentTypeError(f"directory not found: {value}")
    return path


# ==================== config assembly ====================

def _given(**values) -> Dict[str, Any]:
    return {k: v for k, v in values.items() if v is not None}


def _synth_spec(config: Dict[str, Any], args) -> SynthSpec:
    return build_section(
        SynthSpec, config, "synth",
        crash_count=args.crash_count,
        sensor_count=args.sensor_count,
        study_days=args.study_days,
        coverage=args.coverage,
        band_days=args.band_days,
    )


def _label_config(config: Dict[str, Any], args, whole_run: bool = False) -> LabelConfig:
    policy = args.policy
    if policy is None and whole_run:
        policy = build_section(LabelConfig, config, "label").run_policy
    return build_section(
        LabelConfig, config, "label", ratio=args.ratio, policy=policy, train_fraction=args.train_frac
    )


def _feature_config(config: Dict[str, Any], args) -> FeatureConfig:
    return build_section(FeatureConfig, config, "features", corr_threshold=args.corr_threshold, tree_count=args.trees)


def _cnn_config(config: Dict[str, Any], args) -> CnnConfig:
    return build_section(
        CnnConfig, config, "cnn", epochs=args.epochs, learning_rate=args.lr, filter_count=args.filters
    )


def _baseline_config(config: Dict[str, Any], args) -> BaselineConfig:
    values = copy.deepcopy(config.get("baselines", {}))
    for name, overrides in (("mlp", _given(epochs=args.epochs, learning_rate=args.lr)), ("svm", _given(epochs=args.epochs))):
        values.setdefault(name, {}).update(overrides)
    return build_section(BaselineConfig, {"baselines": values}, "baselines")


# ==================== commands ====================

def cmd_synth(args, config) -> Dict[str, Any]:
    return pipeline.synth_step(_synth_spec(config, args), args.seed, args.out, build_section(IngestConfig, config, "ingest"))


def cmd_prepare(args, config) -> Dict[str, Any]:
    return pipeline.prepare_step(args.sensors, args.weather, args.crashes, args.out, args.seed, _label_config(config, args))


def cmd_features(args, config) -> Dict[str, Any]:
    return pipeline.features_step(args.data, args.out, args.seed, _feature_config(config, args), args.apply or ())


def cmd_train(args, config) -> Dict[str, Any]:
    return pipeline.train_step(
        args.data, args.model, args.out, args.seed,
        _cnn_config(config, args), _baseline_config(config, args), args.test,
    )


def cmd_evaluate(args, config) -> Dict[str, Any]:
    result = pipeline.evaluate_step(args.model, args.data, args.out, args.name)
    return {k: v for k, v in result.items() if k != "report"}


def cmd_compare(args, config) -> Dict[str, Any]:
    result = pipeline.compare_step(args.models, args.data, args.out)
    return {"rows": result["table"].to_dict(orient="records"), "files": result["files"]}


def cmd_plot(args, config) -> Dict[str, Any]:
    return pipeline.plot_step(args.dir, args.out)


def cmd_run(args, config) -> Dict[str, Any]:
    run = RunConfig(
        seed=args.seed,
        out_dir=args.out,
        sensors_csv=args.sensors,
        weather_csv=args.weather,
        crashes_csv=args.crashes,
        ingest=build_section(IngestConfig, config, "ingest"),
        label=_label_config(config, args, whole_run=True),
        features=_feature_config(config, args),
        cnn=_cnn_config(config, args),
        baselines=_baseline_config(config, args),
        models=tuple(args.models),
    )
    inputs = (args.sensors, args.weather, args.crashes)
    if any(p is not None for p in inputs) and not all(p is not None for p in inputs):
        raise ConfigError("--sensors, --weather and --crashes must be given together")
    summary = pipeline.run_pipeline(run, _synth_spec(config, args))
    return {"seed": summary["seed"], "kept": summary["features"]["kept"], "evaluate": {
        kind: {k: v for k, v in row.items() if k != "report"} for kind, row in summary["evaluate"].items()
    }}


# ==================== parser ====================

def _add_seed(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=_seed, required=True, help="Run seed (mandatory, non-negative)")


def _add_synth_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--crash-count", type=int, help="Number of crashes to place")
    p.add_argument("--sensor-count", type=int, help="Number of sensors")
    p.add_argument("--study-days", type=int, help="Length of the study period in days")
    p.add_argument("--coverage", choices=["full", "crash-bands"], help="Which intervals get readings")
    p.add_argument("--band-days", type=int, help="Crash-free days per crash band")


def _add_label_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ratio", type=int, help="Non-crash windows per crash window")
    p.add_argument("--policy", choices=["near-far", "single-window"], help="Risk labelling policy")
    p.add_argument("--train-frac", type=float, help="Stratified train fraction")


def _add_training_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float, help="Learning rate")
    p.add_argument("--filters", type=int, help="CNN filter count")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crashcast", description="Traffic crash-risk forecasting pipeline")
    parser.add_argument("--config", type=_existing_file, help="JSON config file (defaults to CRASHCAST_CONFIG)")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="Generate a synthetic study year")
    _add_seed(p)
    _add_synth_flags(p)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="Ingest, label and split")
    _add_seed(p)
    p.add_argument("--sensors", type=_existing_file, required=True)
    p.add_argument("--weather", type=_existing_file, required=True)
    p.add_argument("--crashes", type=_existing_file, required=True)
    _add_label_flags(p)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("features", help="Select features and reduce datasets")
    _add_seed(p)
    p.add_argument("--data", type=_existing_file, required=True, help="Dataset the selection is fitted on")
    p.add_argument("--apply", type=_existing_file, nargs="*", help="Further datasets to reduce")
    p.add_argument("--corr-threshold", type=float)
    p.add_argument("--trees", type=int, help="Extra-trees ensemble size")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="Train one model")
    _add_seed(p)
    p.add_argument("--data", type=_existing_file, required=True)
    p.add_argument("--test", type=_existing_file, help="Held-out dataset for the final test MSE")
    p.add_argument("--model", choices=list(pipeline.MODEL_KINDS), default="cnn")
    _add_training_flags(p)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="One-vs-rest report of one model")
    p.add_argument("--model", type=_existing_file, required=True)
    p.add_argument("--data", type=_existing_file, required=True)
    p.add_argument("--name", help="Prefix of the report files (defaults to the model file stem)")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="Performance table of several models")
    p.add_argument("--models", type=_existing_file, nargs="+", required=True)
    p.add_argument("--data", type=_existing_file, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("plot", help="Re-render SVG figures from CSV artifacts")
    p.add_argument("--dir", type=_existing_dir, required=True)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("run", help="synth, prepare, features, train, evaluate and compare in one go")
    _add_seed(p)
    p.add_argument("--sensors", type=_existing_file, help="Use these inputs instead of synthetic data")
    p.add_argument("--weather", type=_existing_file)
    p.add_argument("--crashes", type=_existing_file)
    _add_synth_flags(p)
    _add_label_flags(p)
    p.add_argument("--corr-threshold", type=float)
    p.add_argument("--trees", type=int, help="Extra-trees ensemble size")
    _add_training_flags(p)
    p.add_argument("--models", nargs="+", choices=list(pipeline.MODEL_KINDS), default=list(pipeline.MODEL_KINDS))
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        config = load_config(args.config)
        result = args.func(args, config)
    except CrashcastError as e:
        logger.error(str(e))
        return e.exit_code
    except OSError as e:
        logger.error(f"{e.strerror or e}: {e.filename}" if e.filename else str(e))
        return 2
    print(json.dumps(pipeline.json_safe(result), indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
