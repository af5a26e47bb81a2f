"""Cross-entropy baseline and the early-learning regularized objective.

The regularizer penalizes softmax outputs that drift away from a per-sample
moving average of past outputs: loss = CE + lambda * mean(log(1 - <p, t>)).
Targets t live in probability space and receive no gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, _result, softmax
from .exceptions import ContractError

INNER_CLAMP_EPS = 1e-4


class TargetStore:
    """Per-sample moving-average targets, indexed by stable sample id.

    Targets start at zero; each update moves them toward the current
    softmax output: t <- beta * t + (1 - beta) * p.
    """

    def __init__(self, num_samples: int, num_classes: int, beta: float):
        if not 0.0 <= beta <= 1.0:
            raise ContractError(f"beta must be in [0, 1], got {beta}")
        self.num_samples = num_samples
        self.num_classes = num_classes
        self.beta = beta
        self.targets = np.zeros((num_samples, num_classes))

    def _check_ids(self, sample_ids):
        sample_ids = np.asarray(sample_ids)
        if sample_ids.size and (sample_ids.min() < 0 or sample_ids.max() >= self.num_samples):
            raise ContractError(f"sample id out of range [0, {self.num_samples})")
        return sample_ids

    def lookup(self, sample_ids) -> np.ndarray:
        return self.targets[self._check_ids(sample_ids)]

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {
            "targets/values": self.targets,
            "targets/meta": np.asarray([self.num_samples, self.num_classes, self.beta]),
        }

    @classmethod
    def from_state_arrays(cls, arrays) -> "TargetStore":
        n, k, beta = arrays["targets/meta"]
        store = cls(int(n), int(k), float(beta))
        store.targets = np.array(arrays["targets/values"])
        return store


def update_targets(store: TargetStore, sample_ids, probs) -> None:
    """Moving-average update t <- beta*t + (1-beta)*p for each sample id."""
    ids = store._check_ids(sample_ids)
    p = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    store.targets[ids] = store.beta * store.targets[ids] + (1.0 - store.beta) * p


@dataclass
class LossValue:
    total: Tensor  # scalar, on the tape
    ce_part: float
    elr_part: float
    lam: float


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood, computed with log-sum-exp stability."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ContractError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.min() < 0 or labels.max() >= k:
        raise ContractError(f"label out of range [0, {k})")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    log_p = z - log_norm[:, None]
    loss = -log_p[np.arange(n), labels].mean()

    p = np.exp(log_p)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels] = 1.0

    def bwd(g):
        return (float(g) * (p - onehot) / n,)

    return _result(np.asarray(loss), "cross_entropy", (logits,), bwd)


def _elr_penalty(probs: Tensor, targets: np.ndarray) -> Tensor:
    """mean(log(1 - <p, t>)) with the inner product clamped into [0, 1-eps].

    Targets are constants: gradient flows only through p, and is zero where
    the clamp is active.
    """
    n = probs.shape[0]
    inner_raw = (probs.data * targets).sum(axis=1)
    inner = np.clip(inner_raw, 0.0, 1.0 - INNER_CLAMP_EPS)
    value = np.log(1.0 - inner).mean()
    active = (inner_raw > 0.0) & (inner_raw < 1.0 - INNER_CLAMP_EPS)

    def bwd(g):
        scale = np.where(active, -1.0 / (1.0 - inner), 0.0)
        return (float(g) / n * scale[:, None] * targets,)

    return _result(np.asarray(value), "elr_penalty", (probs,), bwd)


def elr_loss(
    logits: Tensor, labels, store: TargetStore, sample_ids, lam: float
) -> LossValue:
    """Cross-entropy plus the lambda-weighted early-learning penalty.

    With lam == 0 the returned total is the cross-entropy tensor itself
    (bit-exact, no extra tape nodes).
    """
    if lam < 0:
        raise ContractError(f"lambda must be >= 0, got {lam}")
    ce = cross_entropy(logits, labels)
    if lam == 0.0:
        return LossValue(total=ce, ce_part=ce.item(), elr_part=0.0, lam=0.0)
    targets = store.lookup(sample_ids)
    penalty = _elr_penalty(softmax(logits), targets)
    total = ce + lam * penalty
    return LossValue(total=total, ce_part=ce.item(), elr_part=penalty.item(), lam=lam)
