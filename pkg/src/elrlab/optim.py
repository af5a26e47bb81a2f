"""SGD with momentum/weight decay, a SAM wrapper, and the two LR schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, backward, no_grad
from .exceptions import ConfigError, ContractError

SAM_NORM_FLOOR = 1e-12


class SGD:
    """Classical momentum SGD with coupled L2 weight decay.

    Update per parameter: g' = g + wd*w; v <- mu*v + g'; w <- w - lr*v.
    With sam_rho > 0, sam_step runs the two-phase sharpness-aware protocol.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        momentum: float = 0.0,
        weight_decay: float = 0.0,
        sam_rho: float = 0.0,
    ):
        if sam_rho < 0:
            raise ContractError(f"sam_rho must be >= 0, got {sam_rho}")
        self.params = dict(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.sam_rho = sam_rho
        self.buffers = {k: np.zeros_like(p.data) for k, p in params.items()}
        self._saved = None  # pre-perturbation weights between SAM phases

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self, lr: float):
        if lr <= 0:
            raise ContractError(f"lr must be positive, got {lr}")
        for name, p in self.params.items():
            if p.grad is None:
                raise ContractError(f"parameter {name!r} has no gradient")
            g = p.grad + self.weight_decay * p.data
            v = self.buffers[name]
            v *= self.momentum
            v += g
            p.data = p.data - lr * v

    def _grad_norm(self) -> float:
        return math.sqrt(
            sum(float(np.sum(p.grad * p.grad)) for p in self.params.values() if p.grad is not None)
        )

    def sam_step(self, loss_fn, lr: float):
        """Two-phase step: perturb along the normalized phase-1 gradient
        (global L2 radius rho), take the phase-2 gradient there, apply it
        at the original weights. Falls back to a plain step when the
        phase-1 gradient is (numerically) zero.
        """
        if self.sam_rho <= 0:
            raise ContractError("sam_step requires sam_rho > 0")
        self.zero_grad()
        loss = loss_fn()
        if loss.data.size != 1:
            raise ContractError(f"loss_fn must produce a scalar, got shape {loss.shape}")
        backward(loss)

        norm = self._grad_norm()
        if norm < SAM_NORM_FLOOR:
            self.step(lr)
            return

        self._saved = {k: p.data.copy() for k, p in self.params.items()}
        with no_grad():
            scale = self.sam_rho / norm
            for p in self.params.values():
                p.data = p.data + scale * p.grad

        self.zero_grad()
        loss2 = loss_fn()
        backward(loss2)

        for k, p in self.params.items():
            p.data = self._saved[k]
        self._saved = None
        self.step(lr)


@dataclass
class ScheduleConfig:
    kind: str = "cosine"  # multistep | cosine
    base_lr: float = 0.02
    milestones: list = field(default_factory=lambda: [40, 80])
    decay_factor: float = 10.0
    eta_min: float = 0.001
    eta_max: float = 0.02
    t_max: int = 10

    def validate(self):
        if self.kind not in ("multistep", "cosine"):
            raise ConfigError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "multistep":
            if any(b >= a for a, b in zip(self.milestones[1:], self.milestones)):
                raise ConfigError(f"milestones must be strictly increasing: {self.milestones}")
            if self.decay_factor <= 1:
                raise ConfigError(f"decay_factor must be > 1, got {self.decay_factor}")
        else:
            if self.eta_min >= self.eta_max:
                raise ConfigError("cosine schedule needs eta_min < eta_max")
            if self.t_max < 1:
                raise ConfigError(f"t_max must be >= 1, got {self.t_max}")

    def to_dict(self):
        return {
            "kind": self.kind,
            "base_lr": self.base_lr,
            "milestones": list(self.milestones),
            "decay_factor": self.decay_factor,
            "eta_min": self.eta_min,
            "eta_max": self.eta_max,
            "t_max": self.t_max,
        }


def multistep_lr(config: ScheduleConfig, epoch: int) -> float:
    """base_lr divided by decay_factor once per milestone already passed."""
    passed = sum(1 for m in config.milestones if m <= epoch)
    return config.base_lr / config.decay_factor**passed


def cosine_lr(config: ScheduleConfig, t: int) -> float:
    """Half-cosine interpolation from eta_max (t=0) down to eta_min (t=t_max)."""
    return config.eta_min + 0.5 * (config.eta_max - config.eta_min) * (
        1.0 + math.cos(math.pi * t / config.t_max)
    )


def schedule_lr(config: ScheduleConfig, epoch: int) -> float:
    """Per-epoch learning rate; the cosine schedule restarts every t_max epochs."""
    if config.kind == "multistep":
        return multistep_lr(config, epoch)
    return cosine_lr(config, epoch % config.t_max)
