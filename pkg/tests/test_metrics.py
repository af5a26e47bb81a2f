import numpy as np
import pytest

from elrlab.data import LabeledDataset
from elrlab.exceptions import ContractError
from elrlab.metrics import (
    CSV_HEADER,
    MemorizationRecord,
    MetricsRow,
    memorization_fractions,
    topk_accuracy,
)


def dataset_with_flips(true_labels, given_labels, k):
    true_labels = np.asarray(true_labels)
    given_labels = np.asarray(given_labels)
    n = len(true_labels)
    return LabeledDataset(
        images=np.zeros((n, 1, 1, 1)),
        given_labels=given_labels,
        true_labels=true_labels,
        flip_mask=true_labels != given_labels,
        num_classes=k,
        sample_ids=np.arange(n),
    )


class TestMemorizationFractions:
    def test_all_correct(self):
        ds = dataset_with_flips([0, 1, 2], [1, 2, 0], 3)
        rec = memorization_fractions([0, 1, 2], ds)
        assert (rec.frac_correct, rec.frac_memorized, rec.frac_other) == (1.0, 0.0, 0.0)

    def test_all_memorized(self):
        ds = dataset_with_flips([0, 1, 2], [1, 2, 0], 3)
        rec = memorization_fractions([1, 2, 0], ds)
        assert (rec.frac_correct, rec.frac_memorized, rec.frac_other) == (0.0, 1.0, 0.0)

    def test_hand_counted_mixture(self):
        # 4 flipped samples predicted: true, given, given, neither
        ds = dataset_with_flips([0, 0, 0, 0], [1, 1, 1, 1], 4)
        rec = memorization_fractions([0, 1, 1, 3], ds)
        assert (rec.frac_correct, rec.frac_memorized, rec.frac_other) == (0.25, 0.5, 0.25)

    def test_clean_dataset_gives_empty_record(self):
        ds = dataset_with_flips([0, 1], [0, 1], 2)
        rec = memorization_fractions([0, 1], ds)
        assert rec.empty

    def test_ignores_unflipped_samples(self):
        ds = dataset_with_flips([0, 1, 2], [0, 1, 0], 3)  # only sample 2 flipped
        rec = memorization_fractions([1, 0, 2], ds)
        assert rec.frac_correct == 1.0

    def test_length_mismatch(self):
        ds = dataset_with_flips([0, 1], [1, 0], 2)
        with pytest.raises(ContractError):
            memorization_fractions([0], ds)

    @pytest.mark.parametrize("seed", range(25))
    def test_fractions_sum_to_one(self, seed):
        rng = np.random.default_rng(seed)
        n, k = 50, 6
        true = rng.integers(0, k, n)
        given = true.copy()
        flips = rng.random(n) < 0.4
        given[flips] = (true[flips] + rng.integers(1, k, int(flips.sum()))) % k
        ds = dataset_with_flips(true, given, k)
        rec = memorization_fractions(rng.integers(0, k, n), ds)
        if not rec.empty:
            assert abs(rec.frac_correct + rec.frac_memorized + rec.frac_other - 1.0) < 1e-12

    def test_permutation_invariance(self):
        rng = np.random.default_rng(99)
        n, k = 40, 5
        true = rng.integers(0, k, n)
        given = (true + 1) % k
        ds = dataset_with_flips(true, given, k)
        preds = rng.integers(0, k, n)
        rec = memorization_fractions(preds, ds)
        perm = rng.permutation(n)
        rec_p = memorization_fractions(preds[perm], ds.subset(perm))
        assert rec.frac_correct == rec_p.frac_correct
        assert rec.frac_memorized == rec_p.frac_memorized


class TestTopkAccuracy:
    def test_k_equals_num_classes(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(size=(10, 4))
        assert topk_accuracy(logits, rng.integers(0, 4, 10), 4) == 1.0

    def test_k1_is_argmax_accuracy(self):
        rng = np.random.default_rng(1)
        logits = rng.normal(size=(20, 5))
        labels = rng.integers(0, 5, 20)
        want = float((logits.argmax(axis=1) == labels).mean())
        assert topk_accuracy(logits, labels, 1) == want

    def test_hand_ranking(self):
        assert topk_accuracy(np.array([[3.0, 1.0, 2.0]]), [2], 2) == 1.0

    def test_tie_breaks_lower_index_first(self):
        logits = np.array([[1.0, 1.0, 1.0]])
        assert topk_accuracy(logits, [0], 1) == 1.0
        assert topk_accuracy(logits, [2], 2) == 0.0
        assert topk_accuracy(logits, [1], 2) == 1.0

    @pytest.mark.parametrize("seed", range(10))
    def test_non_decreasing_in_k(self, seed):
        rng = np.random.default_rng(seed)
        logits = rng.normal(size=(15, 6))
        labels = rng.integers(0, 6, 15)
        values = [topk_accuracy(logits, labels, k) for k in range(1, 7)]
        assert all(b >= a for a, b in zip(values, values[1:]))

    def test_rejects_bad_k(self):
        with pytest.raises(ContractError):
            topk_accuracy(np.zeros((1, 3)), [0], 4)


class TestMetricsRow:
    def test_csv_header_fixed(self):
        assert CSV_HEADER == [
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

    def test_round_trip_through_dict(self):
        row = MetricsRow(
            epoch=3,
            lr=0.0123456789012345,
            train_ce=1.1,
            train_elr=-0.2,
            train_total=0.5,
            test_ce=1.3,
            test_total=1.3,
            top1=0.75,
            top5=0.99,
            memorization=MemorizationRecord(3, 0.25, 0.5, 0.25),
            seconds=0.0,
        )
        clone = MetricsRow.from_dict(row.to_dict())
        assert clone.to_dict() == row.to_dict()
        assert len(row.to_csv_fields()) == len(CSV_HEADER)
