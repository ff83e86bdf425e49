"""Run configuration: one versioned JSON document for science parameters.

Every parameter that affects results lives here (CLI flags only point at
files and pick seeds/splits), so a printed config header fully reproduces a
run.  Unknown keys are rejected rather than ignored.
"""

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import ConfigError
from .scene import SceneConfig

CONFIG_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    lr: float = 1e-3
    weight_decay: float = 1e-4
    warmup_epochs: int = 5
    grad_clip: float = 1.0
    lambda_bw: float = 0.01
    lambda_l1: float = 1e-4
    seeds: tuple = (42, 123, 456, 789, 1024)
    splits: dict = field(default_factory=lambda: {"train": 500, "val": 80, "test": 150})
    budget_samples: tuple = (0.1, 0.5, 1.0)

    def __post_init__(self):
        if self.warmup_epochs >= self.epochs:
            raise ConfigError("warmup_epochs must be < epochs")
        for name in ("lr", "weight_decay", "grad_clip", "lambda_bw", "lambda_l1"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if set(self.splits) != {"train", "val", "test"}:
            raise ConfigError("splits must define exactly train/val/test")
        if not all(0.0 < b <= 1.0 for b in self.budget_samples):
            raise ConfigError("budget samples must lie in (0, 1]")


@dataclass(frozen=True)
class RunConfig:
    scene: SceneConfig = SceneConfig()
    train: TrainConfig = TrainConfig()
    scenes_dir: str = None
    out_dir: str = None


def _build(cls, doc, where):
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown fields {sorted(unknown)}")
    try:
        return cls(**doc)
    except TypeError as e:
        raise ConfigError(f"{where}: {e}") from e


def config_from_dict(doc):
    doc = dict(doc)
    version = doc.pop("version", None)
    if version != CONFIG_VERSION:
        raise ConfigError(f"config version {version!r} unsupported (expected {CONFIG_VERSION})")
    scene = _build(SceneConfig, doc.pop("scene", {}), "scene")
    train_doc = dict(doc.pop("train", {}))
    if "seeds" in train_doc:
        train_doc["seeds"] = tuple(train_doc["seeds"])
    if "budget_samples" in train_doc:
        train_doc["budget_samples"] = tuple(train_doc["budget_samples"])
    train = _build(TrainConfig, train_doc, "train")
    paths = doc.pop("paths", {})
    extra = set(doc)
    if extra:
        raise ConfigError(f"unknown top-level fields {sorted(extra)}")
    bad = set(paths) - {"scenes_dir", "out_dir"}
    if bad:
        raise ConfigError(f"paths: unknown fields {sorted(bad)}")
    return RunConfig(scene=scene, train=train,
                     scenes_dir=paths.get("scenes_dir"), out_dir=paths.get("out_dir"))


def config_to_dict(cfg):
    doc = {
        "version": CONFIG_VERSION,
        "scene": dataclasses.asdict(cfg.scene),
        "train": {**dataclasses.asdict(cfg.train),
                  "seeds": list(cfg.train.seeds),
                  "budget_samples": list(cfg.train.budget_samples)},
    }
    paths = {}
    if cfg.scenes_dir:
        paths["scenes_dir"] = cfg.scenes_dir
    if cfg.out_dir:
        paths["out_dir"] = cfg.out_dir
    if paths:
        doc["paths"] = paths
    return doc


def load_config(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return config_from_dict(doc)


def default_config():
    return RunConfig()
