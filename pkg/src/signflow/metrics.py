"""Evaluation: confusion matrix, per-class and macro metrics, report I/O.

Conventions: rows of the confusion matrix are true classes, columns are
predictions. Per-class accuracy is recall. Macro values are unweighted means
over all classes; macro F1 averages the per-class F1 scores (it is not the
F1 of macro precision and macro recall). Zero-denominator metrics score 0
and flag the class as degenerate.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .exceptions import EmptyMatrix, IndexOutOfRange, LengthMismatch


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # C x C int64
    class_names: list[str]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def col_sums(self) -> np.ndarray:
        return self.counts.sum(axis=0)


@dataclass
class EvalReport:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class: list[dict]
    matrix: ConfusionMatrix
    split: str | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "per_class": self.per_class,
            "confusion": self.counts_list(),
            "class_names": self.matrix.class_names,
            "split": self.split,
            **self.extra,
        }

    def counts_list(self) -> list[list[int]]:
        return self.matrix.counts.astype(int).tolist()


def confusion(preds, labels, class_names) -> ConfusionMatrix:
    """counts[i][j] = number of samples with true class i predicted as j."""
    if isinstance(class_names, int):
        class_names = [str(i) for i in range(class_names)]
    c = len(class_names)
    preds = np.asarray(preds, dtype=np.int64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if preds.shape != labels.shape:
        raise LengthMismatch(f"{preds.size} predictions vs {labels.size} labels")
    for name, arr in (("prediction", preds), ("label", labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= c):
            raise IndexOutOfRange(f"{name} index outside [0, {c})")
    counts = np.zeros((c, c), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    return ConfusionMatrix(counts=counts, class_names=list(class_names))


def merge(matrices: list[ConfusionMatrix]) -> ConfusionMatrix:
    """Elementwise sum of partial confusion matrices."""
    if not matrices:
        raise EmptyMatrix("nothing to merge")
    names = matrices[0].class_names
    for m in matrices[1:]:
        if m.class_names != names:
            raise LengthMismatch("cannot merge matrices over different class lists")
    total = np.zeros_like(matrices[0].counts)
    for m in matrices:
        total = total + m.counts
    return ConfusionMatrix(counts=total, class_names=list(names))


def _safe_div(num: float, den: float) -> tuple[float, bool]:
    if den == 0:
        return 0.0, True
    return num / den, False


def classification_report(matrix: ConfusionMatrix, split: str | None = None) -> EvalReport:
    counts = matrix.counts
    total = counts.sum()
    if total == 0:
        raise EmptyMatrix("confusion matrix holds no samples")
    row = counts.sum(axis=1)
    col = counts.sum(axis=0)
    diag = np.diag(counts)

    per_class = []
    for j, name in enumerate(matrix.class_names):
        precision, p_deg = _safe_div(float(diag[j]), float(col[j]))
        recall, r_deg = _safe_div(float(diag[j]), float(row[j]))
        f1, f_deg = _safe_div(2.0 * precision * recall, precision + recall)
        per_class.append(
            {
                "name": name,
                "support": int(row[j]),
                "accuracy": recall,
                "precision": precision,
                "recall": recall,
                "f1": f1,
                "degenerate": p_deg or r_deg or f_deg,
            }
        )

    return EvalReport(
        accuracy=float(diag.sum()) / float(total),
        macro_precision=float(np.mean([c["precision"] for c in per_class])),
        macro_recall=float(np.mean([c["recall"] for c in per_class])),
        macro_f1=float(np.mean([c["f1"] for c in per_class])),
        per_class=per_class,
        matrix=matrix,
        split=split,
    )


def predict_batches(model, batcher) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic predictions over a batcher: (preds, labels)."""
    model.eval()
    preds = []
    labels = []
    with torch.no_grad():
        for clips, batch_labels in batcher.epoch_batches(0):
            logits = model(clips)
            preds.append(logits.argmax(dim=-1).numpy())
            labels.append(batch_labels.numpy())
    return np.concatenate(preds), np.concatenate(labels)


def evaluate_model(model, batcher, class_names, split: str | None = None) -> EvalReport:
    preds, labels = predict_batches(model, batcher)
    return classification_report(confusion(preds, labels, class_names), split=split)


# --- report output ---


def report_json(report: EvalReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def format_report(report: EvalReport) -> str:
    lines = []
    if report.split:
        lines.append(f"split: {report.split}")
    lines.append(f"accuracy        {report.accuracy:.4f}")
    lines.append(f"macro precision {report.macro_precision:.4f}")
    lines.append(f"macro recall    {report.macro_recall:.4f}")
    lines.append(f"macro f1        {report.macro_f1:.4f}")
    lines.append("")
    name_w = max(len("class"), max(len(c["name"]) for c in report.per_class))
    lines.append(
        f"{'class':<{name_w}}  support  accuracy  precision  recall  f1      flags"
    )
    for c in report.per_class:
        flag = "degenerate" if c["degenerate"] else ""
        lines.append(
            f"{c['name']:<{name_w}}  {c['support']:>7d}  {c['accuracy']:.4f}    "
            f"{c['precision']:.4f}     {c['recall']:.4f}  {c['f1']:.4f}  {flag}"
        )
    return "\n".join(lines) + "\n"


def confusion_csv(matrix: ConfusionMatrix, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true\\pred"] + matrix.class_names)
        for name, row in zip(matrix.class_names, matrix.counts):
            writer.writerow([name] + row.astype(int).tolist())


def confusion_heatmap(matrix: ConfusionMatrix, path) -> None:
    """Render the confusion matrix as an image file."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(matrix.counts, cmap="Blues")
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    if len(matrix.class_names) <= 30:
        ax.set_xticks(range(len(matrix.class_names)))
        ax.set_yticks(range(len(matrix.class_names)))
        ax.set_xticklabels(matrix.class_names, rotation=90, fontsize=6)
        ax.set_yticklabels(matrix.class_names, fontsize=6)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_report(report: EvalReport, out_dir, stem: str = "eval") -> dict[str, str]:
    """Write JSON + text + confusion CSV (+ heatmap) for one evaluation."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": out_dir / f"{stem}_report.json",
        "text": out_dir / f"{stem}_report.txt",
        "csv": out_dir / f"{stem}_confusion.csv",
        "heatmap": out_dir / f"{stem}_confusion.png",
    }
    paths["json"].write_text(report_json(report))
    paths["text"].write_text(format_report(report))
    confusion_csv(report.matrix, paths["csv"])
    confusion_heatmap(report.matrix, paths["heatmap"])
    return {k: str(v) for k, v in paths.items()}
