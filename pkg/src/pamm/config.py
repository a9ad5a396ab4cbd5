"""Dataclass configuration with strict JSON loading and validation."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

__all__ = [
    "ConfigError", "TaskSpec", "ExpertsConfig", "PameConfig", "DecoderConfig",
    "BackboneConfig", "DataConfig", "TrainConfig", "Config", "default_tasks",
]

KNOWN_TASK_NAMES = ("segment", "depth", "boundary", "mirror_depth")
METRIC_DIRECTION = {"miou": False, "rmse": True, "merr": True}


class ConfigError(ValueError):
    """Invalid configuration content (CLI exit code 2)."""


@dataclass
class TaskSpec:
    name: str
    kind: str                 # "classification" | "regression"
    channels: int
    loss: str                 # "cross-entropy" | "l1"
    metric: str               # "miou" | "rmse"
    lower_is_better: bool


@dataclass
class ExpertsConfig:
    count: int = 15
    top_k: int = 9
    share_bc_bank: bool = False
    noise: bool = True
    enabled: bool = True      # ablation hook: plain projection only when off
    priors: bool = True       # ablation hook: drop the learnable task priors
    aux_loss_weight: float = 0.0  # optional gate load-balancing penalty


@dataclass
class PameConfig:
    state_dim: int = 8
    expansion: int = 2
    dw_kernel: int = 3
    tasks: int | None = None  # optional; must match len(config.tasks) when set
    directions: int = 4


@dataclass
class DecoderConfig:
    stages: int = 4
    mlp_nonlinear: bool = True


@dataclass
class BackboneConfig:
    patch_stride: int = 4
    width: int = 32
    depth: int = 12
    taps: tuple[int, ...] = (3, 6, 9, 12)


@dataclass
class DataConfig:
    image_size: int = 32
    train_count: int = 512
    eval_count: int = 128
    num_classes: int = 4


@dataclass
class TrainConfig:
    steps: int = 200
    batch_size: int = 4
    lr: float = 1e-3
    seed: int = 0
    eval_every: int = 50
    workers: int = 1
    baseline_report: str | None = None


def default_tasks(num_classes: int = 4) -> list[TaskSpec]:
    return [
        TaskSpec("segment", "classification", num_classes, "cross-entropy",
                 "miou", False),
        TaskSpec("depth", "regression", 1, "l1", "rmse", True),
        TaskSpec("boundary", "classification", 2, "cross-entropy", "miou", False),
    ]


@dataclass
class Config:
    experts: ExpertsConfig = field(default_factory=ExpertsConfig)
    pame: PameConfig = field(default_factory=PameConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    tasks: list[TaskSpec] = field(default_factory=default_tasks)

    # -- validation -----------------------------------------------------

    def validate(self) -> "Config":
        e, p, d, b, t = self.experts, self.pame, self.decoder, self.backbone, self.train
        if e.count < 1 or not 1 <= e.top_k <= e.count:
            raise ConfigError(
                f"experts.top_k must lie in [1, experts.count], got {e.top_k}/{e.count}")
        if e.aux_loss_weight < 0:
            raise ConfigError("experts.aux_loss_weight must be >= 0")
        if p.state_dim < 1 or p.expansion < 1:
            raise ConfigError("pame.state_dim and pame.expansion must be >= 1")
        if p.dw_kernel % 2 == 0 or p.dw_kernel < 1:
            raise ConfigError(f"pame.dw_kernel must be odd, got {p.dw_kernel}")
        if p.directions not in (1, 2, 3, 4):
            raise ConfigError(f"pame.directions must be 1..4, got {p.directions}")
        inner = p.expansion * b.width
        if inner % 4:
            raise ConfigError(
                f"pame.expansion * backbone.width must be divisible by 4, got {inner}")
        if d.stages != len(b.taps):
            raise ConfigError(
                f"decoder.stages ({d.stages}) must equal len(backbone.taps) "
                f"({len(b.taps)})")
        if any(tap < 1 or tap > b.depth for tap in b.taps):
            raise ConfigError(f"backbone.taps {b.taps} outside 1..{b.depth}")
        if list(b.taps) != sorted(b.taps):
            raise ConfigError(f"backbone.taps must be ascending, got {b.taps}")
        if self.data.image_size % b.patch_stride:
            raise ConfigError(
                f"image size {self.data.image_size} not divisible by patch stride "
                f"{b.patch_stride}")
        if self.data.train_count < 1 or self.data.eval_count < 1:
            raise ConfigError("dataset counts must be >= 1")
        if self.data.num_classes < 2:
            raise ConfigError("need at least 2 segmentation classes")
        if t.steps < 0 or t.batch_size < 1 or t.workers < 1 or t.eval_every < 1:
            raise ConfigError("invalid training loop parameters")
        if not self.tasks:
            raise ConfigError("need at least one task")
        if p.tasks is not None and p.tasks != len(self.tasks):
            raise ConfigError(
                f"pame.tasks ({p.tasks}) conflicts with the task list "
                f"({len(self.tasks)})")
        names = [spec.name for spec in self.tasks]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate task names: {names}")
        for spec in self.tasks:
            self._validate_task(spec)
        return self

    def _validate_task(self, spec: TaskSpec) -> None:
        if spec.name not in KNOWN_TASK_NAMES:
            raise ConfigError(
                f"unknown task {spec.name!r}; the synthetic generator supports "
                f"{KNOWN_TASK_NAMES}")
        if spec.metric == "merr":
            raise ConfigError(
                "angular-error metric needs unit-vector targets, which the "
                "synthetic generator does not produce")
        if spec.kind == "classification":
            if spec.loss != "cross-entropy" or spec.metric != "miou":
                raise ConfigError(
                    f"classification task {spec.name} must use cross-entropy/miou")
        elif spec.kind == "regression":
            if spec.loss != "l1" or spec.metric != "rmse":
                raise ConfigError(
                    f"regression task {spec.name} must use l1/rmse")
        else:
            raise ConfigError(f"unknown task kind {spec.kind!r}")
        if spec.metric not in METRIC_DIRECTION:
            raise ConfigError(f"unknown metric {spec.metric!r}")
        if spec.lower_is_better != METRIC_DIRECTION[spec.metric]:
            raise ConfigError(
                f"metric {spec.metric} must have lower_is_better="
                f"{METRIC_DIRECTION[spec.metric]}")
        expected = {"segment": self.data.num_classes, "boundary": 2,
                    "depth": 1, "mirror_depth": 1}[spec.name]
        if spec.channels != expected:
            raise ConfigError(
                f"task {spec.name} needs {expected} channels, got {spec.channels}")

    @property
    def task_count(self) -> int:
        return len(self.tasks)

    @property
    def feature_size(self) -> int:
        return self.data.image_size // self.backbone.patch_stride

    # -- (de)serialization ------------------------------------------------

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["backbone"]["taps"] = list(self.backbone.taps)
        return out

    @staticmethod
    def from_dict(raw: dict) -> "Config":
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        sections = {
            "experts": ExpertsConfig, "pame": PameConfig, "decoder": DecoderConfig,
            "backbone": BackboneConfig, "data": DataConfig, "train": TrainConfig,
        }
        unknown = set(raw) - set(sections) - {"tasks"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        for key, cls in sections.items():
            body = raw.get(key, {})
            if not isinstance(body, dict):
                raise ConfigError(f"section {key!r} must be an object")
            kwargs[key] = _build(cls, body, key)
        if "tasks" in raw:
            if not isinstance(raw["tasks"], list):
                raise ConfigError("tasks must be a list")
            kwargs["tasks"] = [_build(TaskSpec, item, f"tasks[{i}]")
                               for i, item in enumerate(raw["tasks"])]
        else:
            data = kwargs["data"]
            kwargs["tasks"] = default_tasks(data.num_classes)
        return Config(**kwargs).validate()

    @staticmethod
    def from_json(path: str | Path) -> "Config":
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as err:
            raise ConfigError(f"config is not valid JSON: {err}")
        return Config.from_dict(raw)


def _build(cls, body: dict, where: str):
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(body) - fields
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    if cls is BackboneConfig and "taps" in body:
        body = dict(body)
        body["taps"] = tuple(body["taps"])
    try:
        return cls(**body)
    except TypeError as err:
        raise ConfigError(f"bad {where} section: {err}")
