"""Memorization tracking and accuracy metrics, plus the metrics row schema."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset
from .exceptions import ContractError

CSV_HEADER = [
    "epoch",
    "lr",
    "train_ce",
    "train_elr",
    "train_total",
    "test_ce",
    "test_total",
    "top1",
    "top5",
    "mem_correct",
    "mem_memorized",
    "mem_other",
    "seconds",
]


@dataclass
class MemorizationRecord:
    epoch: int
    frac_correct: float
    frac_memorized: float
    frac_other: float
    empty: bool = False  # no flipped samples in the dataset

    @classmethod
    def empty_record(cls, epoch: int) -> "MemorizationRecord":
        return cls(epoch, 0.0, 0.0, 0.0, empty=True)


@dataclass
class MetricsRow:
    epoch: int
    lr: float
    train_ce: float
    train_elr: float
    train_total: float
    test_ce: float
    test_total: float
    top1: float
    top5: float
    memorization: MemorizationRecord
    seconds: float

    def to_csv_fields(self) -> list:
        return [
            repr(self.epoch),
            repr(self.lr),
            repr(self.train_ce),
            repr(self.train_elr),
            repr(self.train_total),
            repr(self.test_ce),
            repr(self.test_total),
            repr(self.top1),
            repr(self.top5),
            repr(self.memorization.frac_correct),
            repr(self.memorization.frac_memorized),
            repr(self.memorization.frac_other),
            repr(self.seconds),
        ]

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "lr": self.lr,
            "train_ce": self.train_ce,
            "train_elr": self.train_elr,
            "train_total": self.train_total,
            "test_ce": self.test_ce,
            "test_total": self.test_total,
            "top1": self.top1,
            "top5": self.top5,
            "mem_correct": self.memorization.frac_correct,
            "mem_memorized": self.memorization.frac_memorized,
            "mem_other": self.memorization.frac_other,
            "seconds": self.seconds,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsRow":
        return cls(
            epoch=int(d["epoch"]),
            lr=float(d["lr"]),
            train_ce=float(d["train_ce"]),
            train_elr=float(d["train_elr"]),
            train_total=float(d["train_total"]),
            test_ce=float(d["test_ce"]),
            test_total=float(d["test_total"]),
            top1=float(d["top1"]),
            top5=float(d["top5"]),
            memorization=MemorizationRecord(
                int(d["epoch"]),
                float(d["mem_correct"]),
                float(d["mem_memorized"]),
                float(d["mem_other"]),
            ),
            seconds=float(d["seconds"]),
        )


def memorization_fractions(
    predictions, ds: LabeledDataset, epoch: int = 0
) -> MemorizationRecord:
    """Among flipped samples, the fractions predicted as the true label
    (correct), the given noisy label (memorized), or neither (other)."""
    predictions = np.asarray(predictions)
    if len(predictions) != len(ds):
        raise ContractError(
            f"{len(predictions)} predictions for {len(ds)} samples"
        )
    flipped = ds.flip_mask
    n_flipped = int(flipped.sum())
    if n_flipped == 0:
        return MemorizationRecord.empty_record(epoch)
    pred = predictions[flipped]
    correct = float((pred == ds.true_labels[flipped]).mean())
    memorized = float((pred == ds.given_labels[flipped]).mean())
    return MemorizationRecord(epoch, correct, memorized, 1.0 - correct - memorized)


def topk_accuracy(logits, labels, k: int) -> float:
    """Fraction of rows whose true label ranks within the k largest logits.

    Ties rank the lower class index first, so the result is deterministic.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    n, num_classes = logits.shape
    if not 1 <= k <= num_classes:
        raise ContractError(f"k must be in [1, {num_classes}], got {k}")
    # stable sort on descending value; stability gives lower-index-first ties
    order = np.argsort(-logits, axis=1, kind="stable")
    hits = (order[:, :k] == labels[:, None]).any(axis=1)
    return float(hits.mean())
