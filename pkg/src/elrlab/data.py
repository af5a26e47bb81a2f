"""Datasets: CIFAR binary loading, synthetic generation, symmetric label
noise, train/test splitting, and training-time augmentation."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import ContractError, FormatError

CIFAR10_RECORD = 3073  # 1 label byte + 3*32*32 pixels
CIFAR100_RECORD = 3074  # coarse + fine label bytes + pixels


@dataclass
class LabeledDataset:
    images: np.ndarray  # (N, C, H, W) float64 in [0, 1]
    given_labels: np.ndarray  # (N,) int
    true_labels: np.ndarray  # (N,) int
    flip_mask: np.ndarray  # (N,) bool
    num_classes: int
    sample_ids: np.ndarray  # (N,) stable int ids

    def __post_init__(self):
        n = len(self.images)
        if not (
            len(self.given_labels) == len(self.true_labels) == len(self.flip_mask) == n
            and len(self.sample_ids) == n
        ):
            raise ContractError("dataset field lengths disagree")
        if len(np.unique(self.sample_ids)) != n:
            raise ContractError("sample ids must be unique")

    def __len__(self):
        return len(self.images)

    def subset(self, indices) -> "LabeledDataset":
        indices = np.asarray(indices)
        return LabeledDataset(
            images=self.images[indices],
            given_labels=self.given_labels[indices],
            true_labels=self.true_labels[indices],
            flip_mask=self.flip_mask[indices],
            num_classes=self.num_classes,
            sample_ids=self.sample_ids[indices],
        )


@dataclass
class NoiseSpec:
    rate: float = 0.0
    seed: int = 0

    def validate(self):
        if not 0.0 <= self.rate <= 1.0:
            raise ContractError(f"noise rate must be in [0, 1], got {self.rate}")


@dataclass
class AugmentSpec:
    mean: list = field(default_factory=lambda: [0.0])
    std: list = field(default_factory=lambda: [1.0])
    crop_pad: int = 0
    hflip_prob: float = 0.0

    def validate(self):
        if self.crop_pad < 0:
            raise ContractError(f"crop_pad must be >= 0, got {self.crop_pad}")
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ContractError(f"hflip_prob must be in [0, 1], got {self.hflip_prob}")


def inject_symmetric_noise(ds: LabeledDataset, spec: NoiseSpec) -> LabeledDataset:
    """Flip exactly round(rate*N) labels, each to a uniform other class.

    Deterministic given the seed; the flipped label never equals the true
    label, so nominal and realized noise rates coincide.
    """
    spec.validate()
    if ds.num_classes < 2:
        raise ContractError("noise injection needs at least 2 classes")
    if ds.flip_mask.any():
        raise ContractError("noise injection expects a clean dataset")
    n = len(ds)
    n_flip = int(round(spec.rate * n))
    rng = np.random.default_rng(spec.seed)
    flip_idx = rng.choice(n, size=n_flip, replace=False)

    given = ds.true_labels.copy()
    # uniform over the K-1 classes other than the true one
    offsets = rng.integers(1, ds.num_classes, size=n_flip)
    given[flip_idx] = (ds.true_labels[flip_idx] + offsets) % ds.num_classes
    mask = np.zeros(n, dtype=bool)
    mask[flip_idx] = True
    return replace(ds, given_labels=given, flip_mask=mask)


def split_train_test(ds: LabeledDataset, ratio: tuple, seed: int):
    """Random disjoint split; sizes round(N * train/(train+test)) and the rest."""
    train_part, test_part = ratio
    if train_part <= 0 or test_part <= 0:
        raise ContractError(f"split ratio parts must be positive, got {ratio}")
    n = len(ds)
    n_train = int(round(n * train_part / (train_part + test_part)))
    if n_train == 0 or n_train == n:
        raise ContractError(f"split of {n} samples at ratio {ratio} leaves an empty side")
    perm = np.random.default_rng(seed).permutation(n)
    return ds.subset(perm[:n_train]), ds.subset(perm[n_train:])


def augment_batch(images: np.ndarray, spec: AugmentSpec, rng: np.random.Generator) -> np.ndarray:
    """Zero-pad + random crop, random horizontal flip, then normalization."""
    spec.validate()
    n, c, h, w = images.shape
    out = images
    if spec.crop_pad > 0:
        p = spec.crop_pad
        padded = np.pad(out, ((0, 0), (0, 0), (p, p), (p, p)))
        offsets = rng.integers(0, 2 * p + 1, size=(n, 2))
        out = np.empty_like(images)
        for i in range(n):
            dy, dx = offsets[i]
            out[i] = padded[i, :, dy : dy + h, dx : dx + w]
    if spec.hflip_prob > 0:
        flips = rng.random(n) < spec.hflip_prob
        out = out.copy() if out is images else out
        out[flips] = out[flips, :, :, ::-1]
    return normalize_batch(out, spec)


def normalize_batch(images: np.ndarray, spec: AugmentSpec) -> np.ndarray:
    """Per-channel (x - mean) / std; the whole eval-time pipeline."""
    mean = np.asarray(spec.mean, dtype=np.float64).reshape(1, -1, 1, 1)
    std = np.asarray(spec.std, dtype=np.float64).reshape(1, -1, 1, 1)
    return (images - mean) / std


def load_cifar_binary(paths, fmt: str = "cifar10") -> LabeledDataset:
    """Read CIFAR-10/100 binary batch files.

    cifar10 records are 3073 bytes (label, then R/G/B planes row-major);
    cifar100 records carry a coarse+fine label prefix and the fine label
    is kept.
    """
    if fmt == "cifar10":
        record, label_off, max_label, num_classes = CIFAR10_RECORD, 0, 9, 10
    elif fmt == "cifar100":
        record, label_off, max_label, num_classes = CIFAR100_RECORD, 1, 99, 100
    else:
        raise FormatError(f"unknown CIFAR format {fmt!r}")

    images, labels = [], []
    for path in paths:
        if not os.path.exists(path):
            raise FormatError(f"dataset file not found: {path}")
        raw = np.fromfile(path, dtype=np.uint8)
        if raw.size % record != 0:
            raise FormatError(
                f"{path}: length {raw.size} not divisible by record size {record} "
                f"(trailing bytes start at offset {raw.size - raw.size % record})"
            )
        recs = raw.reshape(-1, record)
        lab = recs[:, label_off]
        if lab.max(initial=0) > max_label:
            bad = int(np.argmax(lab > max_label))
            raise FormatError(f"{path}: label byte {lab[bad]} out of range in record {bad}")
        images.append(recs[:, label_off + 1 :].reshape(-1, 3, 32, 32) / 255.0)
        labels.append(lab.astype(np.int64))

    imgs = np.concatenate(images)
    labs = np.concatenate(labels)
    n = len(imgs)
    return LabeledDataset(
        images=imgs,
        given_labels=labs.copy(),
        true_labels=labs,
        flip_mask=np.zeros(n, dtype=bool),
        num_classes=num_classes,
        sample_ids=np.arange(n),
    )


def load_cifar10_binary(paths) -> LabeledDataset:
    return load_cifar_binary(paths, "cifar10")


def generate_synthetic(
    classes: int, per_class: int, image_size: tuple, noise_std: float, seed: int
) -> LabeledDataset:
    """Prototype-plus-noise images: K fixed class prototypes drawn from the
    seed, per_class samples each as prototype + N(0, std) pixel noise
    clipped to [0, 1]."""
    if classes < 2 or per_class < 1:
        raise ContractError("need classes >= 2 and per_class >= 1")
    c, h, w = image_size
    rng = np.random.default_rng(seed)
    # prototypes kept away from the [0,1] bounds so the pixel noise is
    # rarely clipped (keeps samples within a class distinguishable)
    prototypes = rng.uniform(0.2, 0.8, size=(classes, c, h, w))
    labels = np.repeat(np.arange(classes), per_class)
    noise = rng.normal(0.0, noise_std, size=(classes * per_class, c, h, w))
    images = np.clip(prototypes[labels] + noise, 0.0, 1.0)
    n = len(images)
    return LabeledDataset(
        images=images,
        given_labels=labels.copy(),
        true_labels=labels,
        flip_mask=np.zeros(n, dtype=bool),
        num_classes=classes,
        sample_ids=np.arange(n),
    )
