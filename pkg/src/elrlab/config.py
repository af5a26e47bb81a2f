"""Declarative experiment and sweep configuration.

Configs are plain nested mappings (YAML on disk). Parsing is strict:
unknown keys raise ConfigError so typos in sweep specs fail fast.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import yaml

from .data import AugmentSpec, NoiseSpec
from .exceptions import ConfigError
from .models import ModelConfig
from .optim import ScheduleConfig


def _check_keys(d: dict, allowed, where: str):
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}")


@dataclass
class DatasetSpec:
    kind: str = "synthetic"  # cifar10 | cifar100 | synthetic
    paths: list = field(default_factory=list)
    classes: int = 10
    per_class: int = 500
    image_size: list = field(default_factory=lambda: [1, 8, 8])
    sigma: float = 0.15

    def validate(self):
        if self.kind not in ("cifar10", "cifar100", "synthetic"):
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        if self.kind != "synthetic" and not self.paths:
            raise ConfigError(f"dataset kind {self.kind!r} requires paths")

    def to_dict(self):
        return {
            "kind": self.kind,
            "paths": list(self.paths),
            "classes": self.classes,
            "per_class": self.per_class,
            "image_size": list(self.image_size),
            "sigma": self.sigma,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        _check_keys(d, cls().to_dict(), "dataset")
        spec = cls(**d)
        spec.validate()
        return spec

    @property
    def num_classes(self) -> int:
        return {"cifar10": 10, "cifar100": 100, "synthetic": self.classes}[self.kind]

    @property
    def shape(self) -> tuple:
        if self.kind == "synthetic":
            return tuple(self.image_size)
        return (3, 32, 32)


@dataclass
class OptimizerConfig:
    momentum: float = 0.9
    weight_decay: float = 0.001
    sam_rho: float = 0.0

    def to_dict(self):
        return {
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "sam_rho": self.sam_rho,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerConfig":
        _check_keys(d, cls().to_dict(), "optimizer")
        return cls(**d)


@dataclass
class AugmentConfig:
    normalize: str | list = "none"  # "auto" | "none" | [per-channel means]
    std: list | None = None  # paired with explicit normalize means
    crop_pad: int = 0
    hflip_prob: float = 0.0

    def to_dict(self):
        return {
            "normalize": self.normalize,
            "std": self.std,
            "crop_pad": self.crop_pad,
            "hflip_prob": self.hflip_prob,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentConfig":
        _check_keys(d, cls().to_dict(), "augment")
        return cls(**d)

    def resolve(self, train_images) -> AugmentSpec:
        """Turn the declarative block into concrete per-channel statistics."""
        c = train_images.shape[1]
        if self.normalize == "none":
            mean, std = [0.0] * c, [1.0] * c
        elif self.normalize == "auto":
            mean = train_images.mean(axis=(0, 2, 3)).tolist()
            std = train_images.std(axis=(0, 2, 3)).tolist()
            std = [s if s > 0 else 1.0 for s in std]
        else:
            if self.std is None or len(self.normalize) != c or len(self.std) != c:
                raise ConfigError("explicit normalize needs per-channel means and stds")
            mean, std = list(self.normalize), list(self.std)
        spec = AugmentSpec(mean=mean, std=std, crop_pad=self.crop_pad, hflip_prob=self.hflip_prob)
        spec.validate()
        return spec


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: str = "ce"  # ce | elr
    lam: float = 0.0
    beta: float = 0.7
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    epochs: int = 10
    batch_size: int = 128
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    split_ratio: list = field(default_factory=lambda: [9, 1])
    split_seed: int = 0
    seed: int = 0
    out_dir: str | None = None

    def validate(self):
        self.dataset.validate()
        if self.loss not in ("ce", "elr"):
            raise ConfigError(f"loss must be 'ce' or 'elr', got {self.loss!r}")
        if self.loss == "ce" and self.lam != 0.0:
            raise ConfigError("loss 'ce' requires lam == 0")
        if self.lam < 0:
            raise ConfigError(f"lam must be >= 0, got {self.lam}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must be in [0, 1], got {self.beta}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        self.noise.validate()
        self.schedule.validate()
        # model shape/classes must agree with the dataset
        if tuple(self.model.input_shape) != self.dataset.shape:
            raise ConfigError(
                f"model input_shape {tuple(self.model.input_shape)} does not match "
                f"dataset shape {self.dataset.shape}"
            )
        if self.model.num_classes != self.dataset.num_classes:
            raise ConfigError(
                f"model num_classes {self.model.num_classes} does not match "
                f"dataset classes {self.dataset.num_classes}"
            )
        self.model.validate()

    def to_dict(self):
        return {
            "dataset": self.dataset.to_dict(),
            "model": self.model.to_dict(),
            "loss": self.loss,
            "lam": self.lam,
            "beta": self.beta,
            "optimizer": self.optimizer.to_dict(),
            "schedule": self.schedule.to_dict(),
            "augment": self.augment.to_dict(),
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "noise": {"rate": self.noise.rate, "seed": self.noise.seed},
            "split_ratio": list(self.split_ratio),
            "split_seed": self.split_seed,
            "seed": self.seed,
            "out_dir": self.out_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        _check_keys(d, cls().to_dict(), "experiment config")
        d = dict(d)
        dataset = DatasetSpec.from_dict(d.pop("dataset", {}))

        model_d = dict(d.pop("model", {}))
        _check_keys(model_d, ModelConfig().to_dict(), "model")
        # fill shape/classes from the dataset when not given explicitly
        model_d.setdefault("input_shape", list(dataset.shape))
        model_d.setdefault("num_classes", dataset.num_classes)
        defaults = ModelConfig().to_dict()
        defaults.update(model_d)
        model = ModelConfig.from_dict(defaults)

        opt = OptimizerConfig.from_dict(d.pop("optimizer", {}))

        sched_d = dict(d.pop("schedule", {}))
        _check_keys(sched_d, ScheduleConfig().to_dict(), "schedule")
        sched_defaults = ScheduleConfig().to_dict()
        sched_defaults.update(sched_d)
        schedule = ScheduleConfig(**sched_defaults)

        augment = AugmentConfig.from_dict(d.pop("augment", {}))

        noise_d = dict(d.pop("noise", {}))
        _check_keys(noise_d, {"rate", "seed"}, "noise")
        noise = NoiseSpec(**noise_d)

        cfg = cls(
            dataset=dataset,
            model=model,
            optimizer=opt,
            schedule=schedule,
            augment=augment,
            noise=noise,
            **d,
        )
        cfg.validate()
        return cfg

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("out_dir")
        return hashlib.sha1(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]


@dataclass
class SweepSpec:
    base: ExperimentConfig
    mode: str = "grid"  # grid | random
    parameters: dict = field(default_factory=dict)  # dotted path -> list | range spec
    max_runs: int = 100
    sweep_epochs: int = 5
    sweep_seed: int = 0
    out_dir: str | None = None
    refit_epochs: int | None = None

    def validate(self):
        if self.mode not in ("grid", "random"):
            raise ConfigError(f"sweep mode must be 'grid' or 'random', got {self.mode!r}")
        if not self.parameters:
            raise ConfigError("sweep needs at least one swept parameter")
        if self.max_runs < 1 or self.sweep_epochs < 0:
            raise ConfigError("max_runs must be >= 1 and sweep_epochs >= 0")
        for path, values in self.parameters.items():
            if isinstance(values, dict):
                _check_keys(values, {"low", "high", "log", "int"}, f"parameter {path!r}")
                if "low" not in values or "high" not in values:
                    raise ConfigError(f"range spec for {path!r} needs low and high")
            elif not isinstance(values, list) or not values:
                raise ConfigError(f"parameter {path!r} must map to a list or a range spec")

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSpec":
        allowed = {
            "base",
            "mode",
            "parameters",
            "max_runs",
            "sweep_epochs",
            "sweep_seed",
            "out_dir",
            "refit_epochs",
        }
        _check_keys(d, allowed, "sweep spec")
        d = dict(d)
        base = ExperimentConfig.from_dict(d.pop("base", {}))
        spec = cls(base=base, **d)
        spec.validate()
        return spec


def apply_override(config_dict: dict, dotted_path: str, value):
    """Set a dotted-path key (e.g. 'optimizer.sam_rho') in a nested dict."""
    parts = dotted_path.split(".")
    node = config_dict
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"unknown config path {dotted_path!r}")
        node = node[part]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config path {dotted_path!r}")
    node[parts[-1]] = value


def load_experiment_config(path) -> ExperimentConfig:
    with open(path) as f:
        raw = yaml.safe_load(f)
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return ExperimentConfig.from_dict(raw)


def load_sweep_spec(path) -> SweepSpec:
    with open(path) as f:
        raw = yaml.safe_load(f)
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return SweepSpec.from_dict(raw)
