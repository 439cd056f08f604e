"""Metrics oracles: brute-force recounts of confusion, P/R/F1, report I/O."""

from __future__ import annotations

import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from signflow.exceptions import EmptyMatrix, IndexOutOfRange, LengthMismatch
from signflow.metrics import (
    ConfusionMatrix,
    classification_report,
    confusion,
    evaluate_model,
    merge,
    save_report,
)


def brute_force_report(preds, labels, c):
    """Nested-loop recount, independent of the library implementation."""
    counts = [[0] * c for _ in range(c)]
    for p, t in zip(preds, labels):
        counts[t][p] += 1
    per_class = []
    for j in range(c):
        tp = counts[j][j]
        col = sum(counts[i][j] for i in range(c))
        row = sum(counts[j])
        precision = tp / col if col else 0.0
        recall = tp / row if row else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class.append((precision, recall, f1))
    accuracy = sum(counts[j][j] for j in range(c)) / len(preds)
    macro = tuple(sum(x[k] for x in per_class) / c for k in range(3))
    return counts, per_class, accuracy, macro


class TestConfusion:
    def test_small_recount(self, rng):
        preds = rng.integers(0, 5, size=200)
        labels = rng.integers(0, 5, size=200)
        m = confusion(preds, labels, 5)
        expected, _, _, _ = brute_force_report(preds, labels, 5)
        assert m.counts.tolist() == expected

    def test_orientation(self):
        m = confusion(preds=[1], labels=[0], class_names=["a", "b"])
        assert m.counts[0, 1] == 1
        assert m.counts[1, 0] == 0

    def test_class_names_from_int(self):
        m = confusion([0], [0], 3)
        assert m.class_names == ["0", "1", "2"]

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            confusion([0, 1], [0], 2)

    def test_out_of_range(self):
        with pytest.raises(IndexOutOfRange):
            confusion([2], [0], 2)
        with pytest.raises(IndexOutOfRange):
            confusion([0], [-1], 2)

    def test_merge_is_elementwise_sum(self, rng):
        parts = []
        whole_preds, whole_labels = [], []
        for _ in range(3):
            p = rng.integers(0, 4, size=50)
            t = rng.integers(0, 4, size=50)
            parts.append(confusion(p, t, 4))
            whole_preds.extend(p)
            whole_labels.extend(t)
        merged = merge(parts)
        direct = confusion(whole_preds, whole_labels, 4)
        assert np.array_equal(merged.counts, direct.counts)

    def test_merge_rejects_mismatched_names(self):
        a = confusion([0], [0], ["x", "y"])
        b = confusion([0], [0], ["x", "z"])
        with pytest.raises(LengthMismatch):
            merge([a, b])

    def test_merge_empty_list(self):
        with pytest.raises(EmptyMatrix):
            merge([])


class TestClassificationReport:
    def test_corpus_scale_against_brute_force(self):
        rng = np.random.default_rng(42)
        c = 85
        labels = rng.integers(0, c, size=1000)
        preds = np.where(rng.random(1000) < 0.6, labels, rng.integers(0, c, size=1000))
        report = classification_report(confusion(preds, labels, c))
        _, per_class, accuracy, macro = brute_force_report(preds.tolist(), labels.tolist(), c)
        assert report.accuracy == pytest.approx(accuracy, abs=1e-9)
        assert report.macro_precision == pytest.approx(macro[0], abs=1e-9)
        assert report.macro_recall == pytest.approx(macro[1], abs=1e-9)
        assert report.macro_f1 == pytest.approx(macro[2], abs=1e-9)
        for row, (precision, recall, f1) in zip(report.per_class, per_class):
            assert row["precision"] == pytest.approx(precision, abs=1e-9)
            assert row["recall"] == pytest.approx(recall, abs=1e-9)
            assert row["f1"] == pytest.approx(f1, abs=1e-9)

    def test_f1_spot_value(self):
        """Class with precision 1.0 and recall 10/11 must score F1 = 20/21."""
        labels = [0] * 11 + [1]
        preds = [0] * 10 + [1, 1]
        report = classification_report(confusion(preds, labels, 2))
        row = report.per_class[0]
        assert row["precision"] == pytest.approx(1.0)
        assert row["recall"] == pytest.approx(0.9091, abs=5e-5)
        assert row["f1"] == pytest.approx(0.9524, abs=5e-5)
        assert row["f1"] == pytest.approx(20 / 21, abs=1e-12)

    def test_per_class_accuracy_equals_recall(self, rng):
        preds = rng.integers(0, 6, size=300)
        labels = rng.integers(0, 6, size=300)
        report = classification_report(confusion(preds, labels, 6))
        for row in report.per_class:
            assert row["accuracy"] == row["recall"]

    def test_degenerate_flags(self):
        # class 2 never appears as label or prediction: all three metrics 0/0
        report = classification_report(confusion([0, 1], [0, 1], 3))
        flags = {row["name"]: row["degenerate"] for row in report.per_class}
        assert flags == {"0": False, "1": False, "2": True}
        assert report.per_class[2]["precision"] == 0.0
        assert report.per_class[2]["recall"] == 0.0
        assert report.per_class[2]["f1"] == 0.0

    def test_degenerate_f1_when_both_zero(self):
        # class 0 is always mispredicted: precision 0, recall 0, F1 flagged
        report = classification_report(confusion([1, 0], [0, 1], 2))
        assert report.per_class[0]["f1"] == 0.0
        assert report.per_class[0]["degenerate"]

    def test_perfect_predictions(self, rng):
        labels = rng.integers(0, 4, size=80)
        report = classification_report(confusion(labels, labels, 4))
        assert report.accuracy == 1.0
        assert report.macro_f1 == 1.0

    def test_empty_matrix_rejected(self):
        empty = ConfusionMatrix(np.zeros((3, 3), dtype=np.int64), ["a", "b", "c"])
        with pytest.raises(EmptyMatrix):
            classification_report(empty)

    def test_support_counts(self):
        report = classification_report(confusion([0, 0, 1], [0, 1, 1], 2))
        assert [row["support"] for row in report.per_class] == [1, 2]

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=60))
    def test_accuracy_is_normalized_trace(self, pairs):
        preds = [p for p, _ in pairs]
        labels = [t for _, t in pairs]
        m = confusion(preds, labels, 4)
        report = classification_report(m)
        assert report.accuracy == pytest.approx(np.trace(m.counts) / len(pairs), abs=1e-12)
        assert 0.0 <= report.macro_f1 <= 1.0


class TestReportIO:
    def make_report(self, rng):
        preds = rng.integers(0, 3, size=60)
        labels = rng.integers(0, 3, size=60)
        names = ["wave", "point", "rest"]
        return classification_report(confusion(preds, labels, names), split="val")

    def test_save_report_files(self, rng, tmp_path):
        report = self.make_report(rng)
        paths = save_report(report, tmp_path, stem="val")
        assert set(paths) == {"json", "text", "csv", "heatmap"}
        data = json.loads((tmp_path / "val_report.json").read_text())
        assert data["accuracy"] == pytest.approx(report.accuracy)
        assert data["split"] == "val"
        assert data["class_names"] == ["wave", "point", "rest"]
        assert np.array_equal(np.array(data["confusion"]), report.matrix.counts)
        assert (tmp_path / "val_confusion.png").stat().st_size > 0

    def test_csv_round_trip(self, rng, tmp_path):
        report = self.make_report(rng)
        save_report(report, tmp_path, stem="e")
        with (tmp_path / "e_confusion.csv").open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["true\\pred", "wave", "point", "rest"]
        body = np.array([[int(x) for x in row[1:]] for row in rows[1:]])
        assert np.array_equal(body, report.matrix.counts)

    def test_text_report_mentions_every_class(self, rng):
        from signflow.metrics import format_report

        report = self.make_report(rng)
        text = format_report(report)
        for name in ("wave", "point", "rest", "accuracy", "macro f1"):
            assert name in text

    def test_to_dict_keys(self, rng):
        report = self.make_report(rng)
        d = report.to_dict()
        for key in ("accuracy", "macro_precision", "macro_recall", "macro_f1",
                    "per_class", "confusion", "class_names", "split"):
            assert key in d


class TestEvaluateModel:
    def test_model_evaluation_matches_manual(self, rng):
        from signflow.data import TensorBatcher
        from signflow.metrics import predict_batches
        from signflow.seqmodel import build_model

        from .conftest import tiny_backbone_cfg, tiny_seq_cfg

        model = build_model(tiny_backbone_cfg(), tiny_seq_cfg(num_classes=3), seed=0)
        clips = rng.random((9, 4, 3, 16, 16)).astype(np.float32)
        labels = np.arange(9) % 3
        batcher = TensorBatcher(clips, labels, 4, train=False)
        report = evaluate_model(model, batcher, 3, split="test")
        preds, got_labels = predict_batches(model, batcher)
        assert np.array_equal(got_labels, labels)
        assert report.accuracy == pytest.approx(float(np.mean(preds == labels)))
        assert report.split == "test"
        assert report.matrix.total == 9
