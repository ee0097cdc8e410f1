"""Run configuration: one document wiring every module's knobs.

Defaults follow the published training recipe wherever it states a value
(loss weights 5e-3/1e-2/5e-3, batch 32, 400 epochs, 192 crops, sigma ratios
0.078/0.104); everything else is a desk-scale default that the config file
or CLI flags can override. Unknown keys are rejected, naming every offender.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

from .arm import ArmConfig
from .losses import LossWeights
from .networks import DiscriminatorConfig, GeneratorConfig


class ConfigError(ValueError):
    """Raised when a run configuration document fails validation."""


@dataclass(frozen=True)
class DataConfig:
    crop_size: int = 192
    scale_factor: int = 4


@dataclass(frozen=True)
class ModelConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 400
    batch_size: int = 32
    adam_lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    warmup_l1_steps: int = 0
    arm_start_step: int = 0
    d_every: int = 1
    lr_final_scale: float = 1.0
    checkpoint_every: int = 1000
    max_steps: Optional[int] = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.adam_lr <= 0:
            raise ConfigError("adam_lr must be > 0")
        if self.warmup_l1_steps < 0 or self.arm_start_step < 0:
            raise ConfigError("step thresholds must be >= 0")
        if self.d_every < 1:
            raise ConfigError("d_every must be >= 1")
        if not 0 < self.lr_final_scale <= 1:
            raise ConfigError("lr_final_scale must lie in (0, 1]")


@dataclass(frozen=True)
class LossConfig:
    lambda_adv: float = 5e-3
    eta_l1: float = 1e-2
    beta_arm: float = 5e-3
    feature_extractor: str = "random-conv:0"

    def weights(self) -> LossWeights:
        return LossWeights(
            lambda_adv=self.lambda_adv, eta_l1=self.eta_l1, beta_arm=self.beta_arm
        )


@dataclass(frozen=True)
class EvalConfig:
    tile_size: int = 128
    tile_overlap: int = 16
    feature_extractor: str = "random-conv:0"


@dataclass(frozen=True)
class ClassifyConfig:
    backbone: str = "compact"
    input_size: int = 512
    epochs: int = 20
    batch_size: int = 16
    adam_lr: float = 1e-4
    cb_beta: float = 0.9999
    hflip: bool = True
    vflip: bool = True

    def __post_init__(self):
        if not 0 <= self.cb_beta < 1:
            raise ConfigError(f"cb_beta must lie in [0, 1), got {self.cb_beta}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("classifier epochs and batch_size must be positive")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    arm: ArmConfig = field(default_factory=ArmConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    classify: ClassifyConfig = field(default_factory=ClassifyConfig)


_SIMPLE_TYPES = (int, float, str, bool, type(None))


def _coerce(value: Any, typ: Any, key: str, errors: list[str]) -> Any:
    if typ in (int, "int"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            errors.append(f"{key}: expected an integer, got {value!r}")
            return 0
        if isinstance(value, float) and not value.is_integer():
            errors.append(f"{key}: expected an integer, got {value!r}")
            return 0
        return int(value)
    if typ in (float, "float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            errors.append(f"{key}: expected a number, got {value!r}")
            return 0.0
        return float(value)
    if typ in (bool, "bool"):
        if not isinstance(value, bool):
            errors.append(f"{key}: expected a boolean, got {value!r}")
            return False
        return value
    if typ in (str, "str"):
        if not isinstance(value, str):
            errors.append(f"{key}: expected a string, got {value!r}")
            return ""
        return value
    return value


def _build_dataclass(dc_type: type, doc: dict, prefix: str, errors: list[str]) -> Any:
    """Recursively build a config dataclass, collecting every bad key."""
    known = {f.name: f for f in fields(dc_type)}
    kwargs: dict[str, Any] = {}
    for key, value in doc.items():
        dotted = f"{prefix}{key}"
        if key not in known:
            errors.append(f"unknown key: {dotted}")
            continue
        f = known[key]
        if dataclasses.is_dataclass(f.type) or dataclasses.is_dataclass(
            getattr(f.type, "__origin__", None)
        ):
            sub_type = f.type
        else:
            sub_type = _SECTION_TYPES.get((dc_type, key))
        if sub_type is not None:
            if not isinstance(value, dict):
                errors.append(f"{dotted}: expected a table/object")
                continue
            kwargs[key] = _build_dataclass(sub_type, value, dotted + ".", errors)
        elif key == "block_channels":
            if not isinstance(value, (list, tuple)):
                errors.append(f"{dotted}: expected a list of six channel counts")
                continue
            kwargs[key] = tuple(int(v) for v in value)
        elif key == "max_steps" and value is None:
            kwargs[key] = None
        else:
            default = getattr(dc_type(), key) if _can_default(dc_type) else None
            target = type(default) if default is not None else None
            kwargs[key] = _coerce(value, target, dotted, errors) if target else value
    if errors:
        # Let the caller aggregate; return defaults so probing can continue.
        try:
            return dc_type(**{k: v for k, v in kwargs.items() if k in known})
        except Exception:
            return dc_type()
    try:
        return dc_type(**kwargs)
    except (ValueError, ConfigError) as exc:
        errors.append(str(exc))
        return dc_type()


def _can_default(dc_type: type) -> bool:
    try:
        dc_type()
        return True
    except Exception:
        return False


_SECTION_TYPES: dict[tuple[type, str], type] = {
    (RunConfig, "data"): DataConfig,
    (RunConfig, "model"): ModelConfig,
    (RunConfig, "train"): TrainConfig,
    (RunConfig, "arm"): ArmConfig,
    (RunConfig, "loss"): LossConfig,
    (RunConfig, "eval"): EvalConfig,
    (RunConfig, "classify"): ClassifyConfig,
    (ModelConfig, "generator"): GeneratorConfig,
    (ModelConfig, "discriminator"): DiscriminatorConfig,
}


def run_config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("run configuration must be a JSON/TOML table")
    errors: list[str] = []
    cfg = _build_dataclass(RunConfig, doc, "", errors)
    if errors:
        raise ConfigError(
            "invalid run configuration: " + "; ".join(sorted(set(errors)))
        )
    return cfg


def run_config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def load_run_config(path: str | Path) -> RunConfig:
    """Load a JSON (or TOML, when tomllib/tomli is importable) config file."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib  # py311+
        except ImportError:
            try:
                import tomli as tomllib  # type: ignore[no-redef]
            except ImportError as exc:
                raise ConfigError(
                    f"{path}: TOML configs need Python 3.11+ or the tomli package; "
                    f"use JSON instead"
                ) from exc
        doc = tomllib.loads(text)
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return run_config_from_dict(doc)


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply dotted key=value overrides (flags win over the file)."""
    doc = run_config_to_dict(cfg)
    errors = []
    for item in overrides:
        if "=" not in item:
            errors.append(f"override {item!r} is not of the form section.key=value")
            continue
        dotted, raw = item.split("=", 1)
        parts = dotted.strip().split(".")
        node = doc
        for p in parts[:-1]:
            if not isinstance(node, dict) or p not in node:
                errors.append(f"unknown key: {dotted}")
                node = None
                break
            node = node[p]
        if node is None:
            continue
        leaf = parts[-1]
        if not isinstance(node, dict) or leaf not in node:
            errors.append(f"unknown key: {dotted}")
            continue
        node[leaf] = _parse_literal(raw)
    if errors:
        raise ConfigError("invalid overrides: " + "; ".join(errors))
    return run_config_from_dict(doc)


def _parse_literal(raw: str) -> Any:
    raw = raw.strip()
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def flatten_defaults() -> list[tuple[str, Any]]:
    """Every dotted RunConfig key with its default, for --help enumeration."""
    out: list[tuple[str, Any]] = []

    def walk(obj: Any, prefix: str) -> None:
        for f in fields(obj):
            value = getattr(obj, f.name)
            if dataclasses.is_dataclass(value):
                walk(value, f"{prefix}{f.name}.")
            else:
                out.append((f"{prefix}{f.name}", value))

    walk(RunConfig(), "")
    return out
