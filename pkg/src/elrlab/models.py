"""Residual convnets (ResNet-18/34 topology at configurable depth) and MLPs."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, Tensor
from .exceptions import ConfigError, DimensionError


@dataclass
class ModelConfig:
    kind: str = "resnet"  # resnet | mlp
    block_counts: list = field(default_factory=lambda: [1, 1, 1, 1])
    base_channels: int = 16
    num_classes: int = 10
    mlp_hidden: list = field(default_factory=lambda: [128])
    input_shape: tuple = (3, 32, 32)

    def validate(self):
        if self.kind not in ("resnet", "mlp"):
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.kind == "resnet":
            if len(self.block_counts) != 4 or any(b < 1 for b in self.block_counts):
                raise ConfigError(f"resnet needs 4 positive block counts, got {self.block_counts}")
            if self.base_channels < 1:
                raise ConfigError("base_channels must be positive")
        if len(self.input_shape) != 3 or any(d < 1 for d in self.input_shape):
            raise ConfigError(f"bad input_shape {self.input_shape}")

    def to_dict(self):
        return {
            "kind": self.kind,
            "block_counts": list(self.block_counts),
            "base_channels": self.base_channels,
            "num_classes": self.num_classes,
            "mlp_hidden": list(self.mlp_hidden),
            "input_shape": list(self.input_shape),
        }

    @classmethod
    def from_dict(cls, d):
        cfg = cls(
            kind=d["kind"],
            block_counts=list(d["block_counts"]),
            base_channels=int(d["base_channels"]),
            num_classes=int(d["num_classes"]),
            mlp_hidden=list(d["mlp_hidden"]),
            input_shape=tuple(d["input_shape"]),
        )
        cfg.validate()
        return cfg


def _kaiming(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class Conv2d:
    def __init__(self, rng, name, in_ch, out_ch, ksize, stride=1, pad=0):
        self.stride = stride
        self.pad = pad
        fan_in = in_ch * ksize * ksize
        self.weight = Tensor(_kaiming(rng, (out_ch, in_ch, ksize, ksize), fan_in), requires_grad=True)
        self.params = {f"{name}.weight": self.weight}
        self.buffers = {}

    def __call__(self, x, mode):
        return ad.conv2d(x, self.weight, stride=self.stride, pad=self.pad)


class BatchNorm2d:
    def __init__(self, name, num_features):
        self.gamma = Tensor(np.ones(num_features), requires_grad=True)
        self.beta = Tensor(np.zeros(num_features), requires_grad=True)
        self.state = BatchNormState(num_features)
        self.params = {f"{name}.gamma": self.gamma, f"{name}.beta": self.beta}
        self.buffers = {
            f"{name}.running_mean": self.state,
            f"{name}.running_var": self.state,
        }

    def __call__(self, x, mode):
        return ad.batch_norm_2d(x, self.gamma, self.beta, self.state, mode)


class Linear:
    def __init__(self, rng, name, in_dim, out_dim):
        self.weight = Tensor(_kaiming(rng, (in_dim, out_dim), in_dim), requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)
        self.params = {f"{name}.weight": self.weight, f"{name}.bias": self.bias}
        self.buffers = {}

    def __call__(self, x, mode):
        return ad.matmul(x, self.weight) + self.bias


class ResidualBlock:
    """conv-BN-ReLU-conv-BN with the skip added before the final ReLU.

    A 1x1 projection conv sits on the skip path when channels or stride change.
    """

    def __init__(self, rng, name, in_ch, out_ch, stride):
        self.conv1 = Conv2d(rng, f"{name}.conv1", in_ch, out_ch, 3, stride=stride, pad=1)
        self.bn1 = BatchNorm2d(f"{name}.bn1", out_ch)
        self.conv2 = Conv2d(rng, f"{name}.conv2", out_ch, out_ch, 3, stride=1, pad=1)
        self.bn2 = BatchNorm2d(f"{name}.bn2", out_ch)
        self.proj = None
        if stride != 1 or in_ch != out_ch:
            self.proj = Conv2d(rng, f"{name}.proj", in_ch, out_ch, 1, stride=stride, pad=0)
        self.params = {}
        self.buffers = {}
        for sub in (self.conv1, self.bn1, self.conv2, self.bn2, self.proj):
            if sub is not None:
                self.params.update(sub.params)
                self.buffers.update(sub.buffers)

    def __call__(self, x, mode):
        out = ad.relu(self.bn1(self.conv1(x, mode), mode))
        out = self.bn2(self.conv2(out, mode), mode)
        skip = x if self.proj is None else self.proj(x, mode)
        return ad.relu(out + skip)


class Model:
    def __init__(self, config: ModelConfig):
        self.config = config
        self.mode = "train"
        self.params: dict[str, Tensor] = {}
        self._bn_layers: dict[str, BatchNorm2d] = {}
        self._forward = None

    def train(self):
        self.mode = "train"

    def eval(self):
        self.mode = "eval"

    def forward(self, batch: Tensor) -> Tensor:
        expected = tuple(self.config.input_shape)
        if batch.ndim != 4 or tuple(batch.shape[1:]) != expected:
            raise DimensionError(
                f"batch shape {batch.shape} does not match input shape {expected}"
            )
        return self._forward(batch, self.mode)

    def __call__(self, batch: Tensor) -> Tensor:
        return self.forward(batch)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    # checkpoint support -----------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"param/{k}": v.data for k, v in self.params.items()}
        for name, bn in self._bn_layers.items():
            out[f"buffer/{name}.running_mean"] = bn.state.running_mean
            out[f"buffer/{name}.running_var"] = bn.state.running_var
            out[f"buffer/{name}.initialized"] = np.asarray([float(bn.state.initialized)])
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        for k, v in self.params.items():
            v.data = np.array(arrays[f"param/{k}"], dtype=np.float64)
            v.grad = None
        for name, bn in self._bn_layers.items():
            bn.state.running_mean = np.array(arrays[f"buffer/{name}.running_mean"])
            bn.state.running_var = np.array(arrays[f"buffer/{name}.running_var"])
            bn.state.initialized = bool(arrays[f"buffer/{name}.initialized"][0])


def build_model(config: ModelConfig, seed: int) -> Model:
    """Deterministic model construction: same (config, seed) -> identical weights."""
    config.validate()
    rng = np.random.default_rng(seed)
    model = Model(config)

    if config.kind == "mlp":
        in_dim = int(np.prod(config.input_shape))
        dims = [in_dim] + [int(d) for d in config.mlp_hidden] + [config.num_classes]
        layers = [Linear(rng, f"fc{i}", dims[i], dims[i + 1]) for i in range(len(dims) - 1)]
        for layer in layers:
            model.params.update(layer.params)

        def forward(x, mode):
            h = ad.reshape(x, (x.shape[0], in_dim))
            for layer in layers[:-1]:
                h = ad.relu(layer(h, mode))
            return layers[-1](h, mode)

        model._forward = forward
        return model

    # resnet: CIFAR-style stem (3x3, stride 1, no max-pool), 4 stages, GAP, head
    c_in = config.input_shape[0]
    base = config.base_channels
    stem_conv = Conv2d(rng, "stem.conv", c_in, base, 3, stride=1, pad=1)
    stem_bn = BatchNorm2d("stem.bn", base)
    blocks = []
    ch = base
    for stage, count in enumerate(config.block_counts):
        out_ch = base * (2**stage)
        for b in range(count):
            stride = 2 if (stage > 0 and b == 0) else 1
            blocks.append(ResidualBlock(rng, f"stage{stage}.block{b}", ch, out_ch, stride))
            ch = out_ch
    head = Linear(rng, "head", ch, config.num_classes)

    for layer in [stem_conv, stem_bn, *blocks, head]:
        model.params.update(layer.params)
    for name, layer in [("stem.bn", stem_bn)]:
        model._bn_layers[name] = layer
    for block in blocks:
        for sub_name, sub in vars(block).items():
            if isinstance(sub, BatchNorm2d):
                bn_name = next(iter(sub.params)).rsplit(".", 1)[0]
                model._bn_layers[bn_name] = sub

    def forward(x, mode):
        h = ad.relu(stem_bn(stem_conv(x, mode), mode))
        for block in blocks:
            h = block(h, mode)
        h = ad.global_avg_pool(h)
        return head(h, mode)

    model._forward = forward
    return model


def count_parameters(model: Model) -> int:
    return sum(int(np.prod(p.shape)) for p in model.params.values())


def save_checkpoint(path, model: Model, extra_arrays: dict | None = None):
    """Value-exact dump of parameters, BN buffers, and the model config."""
    arrays = model.state_arrays()
    if extra_arrays:
        arrays.update(extra_arrays)
    arrays["__config__"] = np.frombuffer(
        json.dumps(model.config.to_dict()).encode("utf-8"), dtype=np.uint8
    )
    np.savez(path, **arrays)


def load_checkpoint(path) -> tuple[Model, dict]:
    """Rebuild a model from a checkpoint; returns (model, extra arrays)."""
    with np.load(path) as npz:
        arrays = {k: npz[k] for k in npz.files}
    cfg = ModelConfig.from_dict(json.loads(bytes(arrays.pop("__config__")).decode("utf-8")))
    model = build_model(cfg, seed=0)
    model.load_state_arrays(arrays)
    extra = {
        k: v
        for k, v in arrays.items()
        if not (k.startswith("param/") or k.startswith("buffer/"))
    }
    return model, extra
