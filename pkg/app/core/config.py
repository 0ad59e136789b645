"""
Configuration - JSON defaults plus typed pydantic views per pipeline section
"""
import copy
import json
import os
from datetime import date
from pathlib import Path
from typing import Any, Dict, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from app.core.errors import ConfigError

# Default config path (relative to this file)
DEFAULT_CONFIG_PATH = Path(__file__).parent / "config.json"

SECTIONS = ("ingest", "synth", "label", "features", "cnn", "baselines")


def get_default_config() -> Dict[str, Any]:
    """Return the built-in configuration (used when no config file is found)"""
    return {
        "ingest": IngestConfig().model_dump(mode="json"),
        "synth": SynthSpec().model_dump(mode="json"),
        "label": LabelConfig().model_dump(mode="json"),
        "features": FeatureConfig().model_dump(mode="json"),
        "cnn": CnnConfig().model_dump(mode="json", exclude={"seed"}),
        "baselines": BaselineConfig().model_dump(mode="json"),
    }


def load_config(config_path: Optional[Path] = None) -> Dict[str, Any]:
    """Load configuration from JSON file, honouring CRASHCAST_CONFIG"""
    env_path = os.getenv("CRASHCAST_CONFIG")
    config_path = Path(config_path or env_path or DEFAULT_CONFIG_PATH)
    if not config_path.exists():
        if config_path != DEFAULT_CONFIG_PATH:
            raise ConfigError(f"config file not found: {config_path}")
        return get_default_config()
    try:
        with open(config_path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON in {config_path}: {e}") from e
    return normalize_config(raw)


def normalize_config(config: Dict[str, Any]) -> Dict[str, Any]:
    """Fill sections missing from a user config with defaults, section by section"""
    normalized = get_default_config()
    for section in SECTIONS:
        if section in config and isinstance(config[section], dict):
            merged = copy.deepcopy(normalized[section])
            merged.update(config[section])
            normalized[section] = merged
    return normalized


class IngestConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    interval_seconds: int = 240
    utc_offset_minutes: int = 180

    @field_validator("interval_seconds")
    @classmethod
    def _fixed_interval(cls, v: int) -> int:
        if v != 240:
            raise ValueError("interval width is fixed at 240 s")
        return v


class FeatureStats(BaseModel):
    mean: float
    std: float
    min: float
    max: float

    @model_validator(mode="after")
    def _ordered(self):
        if not (self.min <= self.mean <= self.max):
            raise ValueError(f"need min <= mean <= max, got {self.min}, {self.mean}, {self.max}")
        if self.std < 0:
            raise ValueError("std must be >= 0")
        return self


# per-reading statistics of the recorded study year (mean, std, min, max)
DEFAULT_FEATURE_STATS = {
    "up_speed": (75.06, 26.23, 3, 123),
    "down_speed": (72.49, 29.50, 4, 247),
    "up_volume": (176.52, 57.40, 1, 314),
    "down_volume": (113.78, 61.95, 0, 296),
    "vl1": (12.63, 16.50, 0, 246),
    "vl2": (16.19, 19.84, 0, 207),
    "vl3": (16.41, 23.34, 0, 93),
    "vl4": (14.42, 20.88, 0, 88),
    "vl5": (13.70, 18.02, 0, 105),
    "vl6": (11.16, 12.08, 0, 68),
    "vl7": (2.35, 5.43, 0, 61),
    "vl8": (2.40, 5.11, 0, 55),
    "temperature": (17.71, 7.00, 0, 29),
}


def _default_features() -> Dict[str, FeatureStats]:
    return {
        name: FeatureStats(mean=mean, std=std, min=lo, max=hi)
        for name, (mean, std, lo, hi) in DEFAULT_FEATURE_STATS.items()
    }


class SynthSpec(BaseModel):
    """Synthetic study-year description; feature statistics default to the recorded data table"""

    model_config = ConfigDict(extra="forbid")

    sensor_count: int = Field(36, ge=1)
    crash_count: int = Field(1293, ge=0)
    study_days: int = Field(365, ge=2)
    start_date: date = date(2019, 1, 1)
    coverage: Literal["full", "crash-bands"] = "crash-bands"
    band_days: int = Field(12, ge=1)
    readings_per_interval: int = Field(1, ge=1, le=240)
    speed_drop_fraction: float = Field(0.3, ge=0.0, lt=1.0)
    volume_surge_fraction: float = Field(0.3, ge=0.0)
    onset_minutes: int = Field(12, ge=0)
    noise_scale: float = Field(0.05, ge=0.0)
    diurnal_amplitude: float = Field(0.2, ge=0.0, lt=1.0)
    precipitation_rate: float = Field(0.17, ge=0.0, le=1.0)
    redundancy_corr: float = Field(0.9, ge=-1.0, le=1.0)
    lane_redundancy: Dict[str, str] = Field(
        default_factory=lambda: {"vl1": "vl2", "vl4": "vl3", "vl8": "vl5", "vl7": "vl6"}
    )
    allow_zero_std: bool = False
    features: Dict[str, FeatureStats] = Field(default_factory=_default_features)

    @model_validator(mode="after")
    def _check(self):
        from app.models.records import TRAFFIC_FEATURES

        missing = [n for n in (*TRAFFIC_FEATURES, "temperature") if n not in self.features]
        if missing:
            raise ValueError(f"feature statistics missing for {missing}")
        if not self.allow_zero_std:
            flat = [n for n, s in self.features.items() if s.std <= 0]
            if flat:
                raise ValueError(f"std must be > 0 for {flat} (set allow_zero_std to permit)")
        for derived, partner in self.lane_redundancy.items():
            if derived not in TRAFFIC_FEATURES or partner not in TRAFFIC_FEATURES:
                raise ValueError(f"lane_redundancy names unknown feature: {derived} <- {partner}")
            if partner in self.lane_redundancy:
                raise ValueError(f"lane_redundancy partner {partner} is itself derived")
        return self


class LabelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    policy: Literal["near-far", "single-window"] = "near-far"
    # whole-chain runs label this way unless a policy is given explicitly
    run_policy: Literal["near-far", "single-window"] = "single-window"
    ratio: int = Field(5, ge=1)
    crash_buffer_minutes: int = Field(30, ge=0)
    train_fraction: float = Field(0.8, gt=0.0, lt=1.0)


class FeatureConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    corr_threshold: float = 0.5
    tree_count: int = Field(100, ge=1)
    min_samples_split: int = Field(5, ge=2)


class CnnConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    learning_rate: float = Field(0.01, gt=0.0)
    epochs: int = Field(100, ge=0)
    batch_cap: int = Field(10000, ge=1)
    filter_count: int = Field(64, ge=1)
    kernel_width: int = Field(2, ge=1)
    pool_width: int = Field(2, ge=1)
    dense_width: int = Field(32, ge=1)
    adam_beta1: float = Field(0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(0.999, ge=0.0, lt=1.0)
    adam_epsilon: float = Field(1e-8, gt=0.0)
    seed: int = 0

    def check_timesteps(self, timesteps: int) -> None:
        if self.kernel_width > timesteps:
            raise ConfigError(f"kernel_width {self.kernel_width} exceeds timestep count {timesteps}")
        conv_len = timesteps - self.kernel_width + 1
        if self.pool_width > conv_len:
            raise ConfigError(f"pool_width {self.pool_width} exceeds conv output length {conv_len}")


class MlpConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    learning_rate: float = Field(0.01, gt=0.0)
    momentum: float = Field(0.9, ge=0.0, lt=1.0)
    epochs: int = Field(100, ge=0)
    hidden_width: int = Field(32, ge=1)


class SvmConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lam: float = Field(0.01, gt=0.0)
    epochs: int = Field(100, ge=1)


class TreeConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    max_depth: int = Field(8, ge=0)
    min_leaf: int = Field(5, ge=1)


class BaselineConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mlp: MlpConfig = Field(default_factory=MlpConfig)
    svm: SvmConfig = Field(default_factory=SvmConfig)
    tree: TreeConfig = Field(default_factory=TreeConfig)


class RunConfig(BaseModel):
    """Everything one command invocation needs; the seed is mandatory"""

    model_config = ConfigDict(extra="forbid")

    seed: int = Field(..., ge=0)
    out_dir: Path
    sensors_csv: Optional[Path] = None
    weather_csv: Optional[Path] = None
    crashes_csv: Optional[Path] = None
    ingest: IngestConfig = Field(default_factory=IngestConfig)
    label: LabelConfig = Field(default_factory=lambda: LabelConfig(policy=LabelConfig().run_policy))
    features: FeatureConfig = Field(default_factory=FeatureConfig)
    cnn: CnnConfig = Field(default_factory=CnnConfig)
    baselines: BaselineConfig = Field(default_factory=BaselineConfig)
    models: tuple = ("cnn", "mlp", "svm", "tree")

    def check_inputs(self) -> None:
        for name in ("sensors_csv", "weather_csv", "crashes_csv"):
            path = getattr(self, name)
            if path is not None and not Path(path).is_file():
                raise ConfigError(f"{name.replace('_csv', '')} file not found: {path}")


def build_section(model_cls, config: Dict[str, Any], section: str, **overrides):
    """Validate one config section, applying non-None overrides"""
    values = copy.deepcopy(config.get(section, {}))
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return model_cls(**values)
    except ValidationError as e:
        raise ConfigError(f"invalid '{section}' configuration: {e}") from e
