"""Run configuration: one TOML table per module, overridable with ``section.key=value``."""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

from .metrics import EvalConfig
from .model import ModelConfig
from .scenegen import SceneSpec
from .training import LossCoefficients

OUTPUT_ROOT_ENV = "CURVELAB_OUTPUT_ROOT"


@dataclass
class OptimConfig:
    lr: float = 2e-4
    weight_decay: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)

    def __post_init__(self):
        self.betas = tuple(self.betas)


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 4
    seed: int = 0
    num_train_scenes: int = 50
    num_eval_scenes: int = 20
    checkpoint_every: int = 500
    log_every: int = 1


@dataclass
class RunConfig:
    scene: SceneSpec = field(default_factory=SceneSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossCoefficients = field(default_factory=LossCoefficients)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    output_dir: str = ""

    def __post_init__(self):
        if not self.output_dir:
            self.output_dir = os.environ.get(OUTPUT_ROOT_ENV, "runs")
        if tuple(self.scene.image_size) != tuple(self.model.image_size):
            raise ValueError(f"scene.image_size {self.scene.image_size} != model.image_size {self.model.image_size}")

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    def to_dict(self) -> dict:
        def clean(obj):
            if isinstance(obj, dict):
                return {k: clean(v) for k, v in obj.items()}
            if isinstance(obj, (tuple, list)):
                return [clean(v) for v in obj]
            return obj
        d = {name: clean(asdict(getattr(self, name))) for name in SECTIONS}
        d["run"] = {"output_dir": self.output_dir}
        return d

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    def with_overrides(self, overrides: dict) -> "RunConfig":
        return from_dict(merge(self.to_dict(), overrides))


SECTIONS = {"scene": SceneSpec, "model": ModelConfig, "loss": LossCoefficients,
            "optim": OptimConfig, "train": TrainConfig, "eval": EvalConfig}


def merge(base: dict, extra: dict) -> dict:
    out = {k: dict(v) if isinstance(v, dict) else v for k, v in base.items()}
    for k, v in extra.items():
        if isinstance(v, dict):
            out.setdefault(k, {}).update(v)
        else:
            out[k] = v
    return out


def from_dict(d: dict) -> RunConfig:
    unknown = set(d) - set(SECTIONS) - {"run"}
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    kwargs = {}
    for name, cls in SECTIONS.items():
        sect = d.get(name, {})
        valid = {f.name for f in fields(cls)}
        bad = set(sect) - valid
        if bad:
            raise ValueError(f"unknown keys in [{name}]: {sorted(bad)}")
        kwargs[name] = cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in sect.items()})
    run = d.get("run", {})
    return RunConfig(**kwargs, output_dir=run.get("output_dir", ""))


def loads(text: str) -> RunConfig:
    return from_dict(tomllib.loads(text))


def load(path) -> RunConfig:
    return loads(Path(path).read_text())


def parse_override(item: str) -> dict:
    """``section.key=value`` -> nested dict; the value is read as TOML, else kept as a string."""
    if "=" not in item:
        raise ValueError(f"override {item!r} is not of the form section.key=value")
    key, raw = item.split("=", 1)
    parts = key.strip().split(".")
    if len(parts) != 2:
        raise ValueError(f"override key {key!r} must be section.key")
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    sect, name = parts
    if sect == "run":
        return {"run": {name: value}}
    return {sect: {name: value}}


def build(path=None, overrides=()) -> RunConfig:
    cfg = load(path) if path else RunConfig()
    extra = {}
    for item in overrides:
        extra = merge(extra, parse_override(item))
    return cfg.with_overrides(extra) if extra else cfg


def variant(cfg: RunConfig, **model_changes) -> RunConfig:
    return replace(cfg, model=replace(cfg.model, **model_changes))
