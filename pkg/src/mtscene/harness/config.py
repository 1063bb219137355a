"""Training configuration, loaded from and saved to JSON.

Every section is optional in the file; missing keys take the defaults below.
Unknown keys are rejected so typos do not silently fall back to defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

from ..balancer import BalancerConfig
from ..data.synth import SceneConfig, SplitSpec
from ..errors import ConfigError
from ..losses import DepthLossConfig, SegLossConfig
from ..model import EncoderConfig, ModelConfig, StageConfig

OPTIMIZERS = ("adamw",)


@dataclass(frozen=True)
class DatasetConfig:
    # directory written by ``mtscene synth``; None generates the splits in memory
    path: Optional[str] = None
    scene: SceneConfig = SceneConfig()
    splits: SplitSpec = SplitSpec()
    base_seed: int = 0


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adamw"
    learning_rate: float = 1e-3
    weight_decay: float = 0.02
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(self.betas))
        if self.kind not in OPTIMIZERS:
            raise ConfigError(f"optimizer.kind must be one of {OPTIMIZERS}, got {self.kind!r}")
        if not self.learning_rate > 0:
            raise ConfigError(f"optimizer.learning_rate must be > 0, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ConfigError("optimizer.weight_decay must be >= 0")
        if len(self.betas) != 2 or not all(0.0 <= b < 1.0 for b in self.betas):
            raise ConfigError(f"optimizer.betas must be two values in [0, 1), got {self.betas}")


@dataclass(frozen=True)
class PlateauConfig:
    factor: float = 0.5
    patience: int = 3
    threshold: float = 1e-4
    min_lr: float = 1e-6


@dataclass(frozen=True)
class ExponentialConfig:
    gamma: float = 0.95


@dataclass(frozen=True)
class SchedulerConfig:
    reduce_on_plateau: PlateauConfig = PlateauConfig()
    exponential: ExponentialConfig = ExponentialConfig()

    def __post_init__(self):
        p, e = self.reduce_on_plateau, self.exponential
        if not 0.0 < p.factor < 1.0 or p.patience < 0 or p.min_lr < 0:
            raise ConfigError("reduce_on_plateau needs 0 < factor < 1, patience >= 0, min_lr >= 0")
        if not 0.0 < e.gamma <= 1.0:
            raise ConfigError(f"exponential.gamma must lie in (0, 1], got {e.gamma}")


@dataclass(frozen=True)
class TrainConfig:
    dataset: DatasetConfig = DatasetConfig()
    model: ModelConfig = ModelConfig()
    seg_loss: SegLossConfig = SegLossConfig()
    depth_loss: DepthLossConfig = DepthLossConfig()
    balancer: BalancerConfig = BalancerConfig()
    initial_weights: Optional[tuple] = None
    optimizer: OptimizerConfig = OptimizerConfig()
    schedulers: SchedulerConfig = SchedulerConfig()
    epochs: int = 30
    batch_size: int = 8
    seed: int = 0
    eval_split: str = "val"
    objectness_threshold: float = 0.05
    nms_iou: float = 0.5

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.initial_weights is not None:
            object.__setattr__(self, "initial_weights", tuple(float(w) for w in self.initial_weights))
        n = self.model.num_classes
        if self.seg_loss.num_classes != n or self.dataset.scene.num_classes != n:
            raise ConfigError(
                f"class counts disagree: model {n}, seg_loss {self.seg_loss.num_classes}, "
                f"dataset {self.dataset.scene.num_classes}"
            )
        H, W = self.dataset.scene.image_size
        d = self.model.encoder.downsampling
        if H % d or W % d:
            raise ConfigError(f"image size {H}x{W} must be divisible by the encoder downsampling {d}")

    # ------------------------------------------------------------------

    def to_dict(self) -> Dict[str, Any]:
        return _to_plain(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "TrainConfig":
        return _build(cls, d, "")

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        try:
            d = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        return cls.from_dict(d)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


# nested dataclass types that are not spelled out in annotations (string annotations)
_NESTED = {
    (TrainConfig, "dataset"): DatasetConfig,
    (TrainConfig, "model"): ModelConfig,
    (TrainConfig, "seg_loss"): SegLossConfig,
    (TrainConfig, "depth_loss"): DepthLossConfig,
    (TrainConfig, "balancer"): BalancerConfig,
    (TrainConfig, "optimizer"): OptimizerConfig,
    (TrainConfig, "schedulers"): SchedulerConfig,
    (DatasetConfig, "scene"): SceneConfig,
    (DatasetConfig, "splits"): SplitSpec,
    (SchedulerConfig, "reduce_on_plateau"): PlateauConfig,
    (SchedulerConfig, "exponential"): ExponentialConfig,
    (ModelConfig, "encoder"): EncoderConfig,
}


def _build(cls, d, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where or 'config'} must be an object, got {type(d).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for key, value in d.items():
        sub = _NESTED.get((cls, key))
        path = f"{where}.{key}" if where else key
        if sub is not None:
            value = _build(sub, value, path)
        elif cls is EncoderConfig and key == "stages":
            value = tuple(_build(StageConfig, s, f"{path}[{i}]") for i, s in enumerate(value))
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where or 'config'}: {exc}") from exc


def diff_dicts(a: Dict[str, Any], b: Dict[str, Any], prefix: str = "") -> list:
    """Dotted paths at which two nested plain dicts differ."""
    out = []
    for key in sorted(set(a) | set(b)):
        path = f"{prefix}{key}"
        if key not in a or key not in b:
            out.append(path)
        elif isinstance(a[key], dict) and isinstance(b[key], dict):
            out.extend(diff_dicts(a[key], b[key], path + "."))
        elif a[key] != b[key]:
            out.append(path)
    return out
