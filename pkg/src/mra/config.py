"""Run configuration: a flat JSON document with pinned schema version."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .attention import STRATEGIES
from .errors import ConfigError, SchemaError

SCHEMA_VERSION = 1
TASKS = ("pretrain", "classify")
AUGMENTORS = ("none", "cutout", "mixup", "cutmix", "mra", "mra_mask_only", "mra+cutmix")
DEFAULT_EPOCHS = {"pretrain": 200, "classify": 30}
DEFAULT_OPTIMIZER = {
    "pretrain": dict(optimizer="adamw", lr=3e-4, weight_decay=0.05, schedule="cosine"),
    "classify": dict(optimizer="sgd", lr=0.05, weight_decay=5e-4, schedule="step"),
}


@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    task: str = "classify"
    dataset: str = "synthetic:blobs10"
    n_train: int | None = None
    n_eval: int | None = None
    image_size: int = 32
    # autoencoder
    model_preset: str = "mae-mini-desk"
    mae_overrides: dict = field(default_factory=dict)
    mask_ratio: float = 0.40
    loss_on: str = "masked"
    max_steps: int | None = None
    checkpoint_every: int = 1
    pretrain_epochs: int | None = None
    # downstream
    classifier_width: int = 32
    augmentor: str = "none"
    checkpoint: str | None = None
    strategy: str = "mask_low"
    aug_mask_ratio: float = 0.40
    apply_probability: float = 1.0
    cutout_size: int = 16
    mixup_alpha: float = 0.2
    cutmix_alpha: float = 1.0
    crop_padding: int = 4
    flip: bool = True
    hole_sizes: list | None = None
    # optimisation
    epochs: int | None = None
    batch_size: int = 64
    optimizer: str | None = None
    lr: float | None = None
    momentum: float = 0.9
    weight_decay: float | None = None
    schedule: str | None = None
    warmup_steps: int = 0
    # run
    seed: int = 0
    out_dir: str = "runs/default"
    deterministic: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        for f in fields(self):
            value = getattr(self, f.name)
            allowed = _TYPES[f.name]
            if value is None and type(None) in allowed:
                continue
            if isinstance(value, bool) and bool not in allowed:
                raise ConfigError(f"{f.name} must be {_type_names(allowed)}, got {value!r}")
            if not isinstance(value, allowed):
                raise ConfigError(f"{f.name} must be {_type_names(allowed)}, got {value!r}")
        if self.schema_version != SCHEMA_VERSION:
            raise SchemaError(f"config schema version {self.schema_version} is not supported "
                              f"(expected {SCHEMA_VERSION})")
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.augmentor not in AUGMENTORS:
            raise ConfigError(f"augmentor must be one of {AUGMENTORS}, got {self.augmentor!r}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        for name in ("mask_ratio", "aug_mask_ratio"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), got {getattr(self, name)}")
        if not 0.0 <= self.apply_probability <= 1.0:
            raise ConfigError(f"apply_probability must lie in [0, 1], got {self.apply_probability}")
        if self.epochs is not None and self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.pretrain_epochs is not None and self.pretrain_epochs < 1:
            raise ConfigError(f"pretrain_epochs must be >= 1, got {self.pretrain_epochs}")
        if self.hole_sizes is not None and not all(
                isinstance(h, int) and 0 <= h <= self.image_size for h in self.hole_sizes):
            raise ConfigError(f"hole_sizes must be integers in [0, {self.image_size}]")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.optimizer not in (None, "sgd", "adamw"):
            raise ConfigError(f"optimizer must be 'sgd' or 'adamw', got {self.optimizer!r}")
        if self.schedule not in (None, "cosine", "step", "constant"):
            raise ConfigError(f"schedule must be 'cosine', 'step' or 'constant', got {self.schedule!r}")
        if self.loss_on not in ("masked", "all"):
            raise ConfigError(f"loss_on must be 'masked' or 'all', got {self.loss_on!r}")
        if not isinstance(self.mae_overrides, dict):
            raise ConfigError("mae_overrides must be an object")
        return self

    def materialize(self) -> "RunConfig":
        """Copy with task-dependent defaults filled in."""
        filled = {k: v for k, v in DEFAULT_OPTIMIZER[self.task].items() if getattr(self, k) is None}
        if self.epochs is None:
            filled["epochs"] = DEFAULT_EPOCHS[self.task]
        if self.pretrain_epochs is None:
            filled["pretrain_epochs"] = DEFAULT_EPOCHS["pretrain"]
        if self.hole_sizes is None:
            s = self.image_size
            filled["hole_sizes"] = [0, s // 4, s // 2, 3 * s // 4, s]
        return replace(self, **filled)

    def pretrain_config(self, out_dir: str) -> "RunConfig":
        """The pretraining run implied by this config's autoencoder settings."""
        cfg = self.materialize()
        return replace(cfg, task="pretrain", epochs=cfg.pretrain_epochs, augmentor="none",
                       checkpoint=None, optimizer=None, lr=None, weight_decay=None,
                       schedule=None, out_dir=out_dir).materialize()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config document must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
        return cls.from_dict(doc)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def identity(self) -> dict:
        """Materialized settings that determine results (everything but ``out_dir``)."""
        d = self.materialize().to_dict()
        d.pop("out_dir")
        return d

    def hash(self) -> str:
        """Digest of the materialized config, ignoring where outputs go."""
        d = self.identity()
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def diff(self, other: "RunConfig") -> list[str]:
        a, b = self.materialize().to_dict(), other.materialize().to_dict()
        return sorted(k for k in a if k != "out_dir" and a[k] != b[k])


_NONE = type(None)
_TYPES = {
    "schema_version": (int,), "task": (str,), "dataset": (str,), "n_train": (int, _NONE),
    "n_eval": (int, _NONE), "image_size": (int,), "model_preset": (str,), "mae_overrides": (dict,),
    "mask_ratio": (float, int), "loss_on": (str,), "max_steps": (int, _NONE),
    "checkpoint_every": (int,), "pretrain_epochs": (int, _NONE), "hole_sizes": (list, _NONE), "classifier_width": (int,), "augmentor": (str,),
    "checkpoint": (str, _NONE), "strategy": (str,), "aug_mask_ratio": (float, int),
    "apply_probability": (float, int), "cutout_size": (int,), "mixup_alpha": (float, int),
    "cutmix_alpha": (float, int), "crop_padding": (int,), "flip": (bool,), "epochs": (int, _NONE),
    "batch_size": (int,), "optimizer": (str, _NONE), "lr": (float, int, _NONE),
    "momentum": (float, int), "weight_decay": (float, int, _NONE), "schedule": (str, _NONE),
    "warmup_steps": (int,), "seed": (int,), "out_dir": (str,), "deterministic": (bool,),
}


def _type_names(types) -> str:
    return " or ".join("null" if t is _NONE else t.__name__ for t in types)
