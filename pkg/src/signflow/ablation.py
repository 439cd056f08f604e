"""Ablation harness: the nine standard experiment configurations, expressed
as config patches, plus a runner that trains and evaluates each row on
shared splits with a shared seed.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from .config import RunConfig, apply_overrides, get_at, _flatten
from .data import ClipBatcher
from .metrics import evaluate_model
from .training import prepare_model, train


@dataclass
class AblationAxis:
    name: str
    title: str
    patch: dict


@dataclass
class AblationReport:
    rows: list[dict] = field(default_factory=list)


def standard_matrix() -> list[AblationAxis]:
    """The nine standard experiments: baseline plus eight single-change rows.

    The resnet50 row declares the projection input width alongside the
    variant because the two must move together.
    """
    return [
        AblationAxis("baseline", "Baseline", {}),
        AblationAxis("frames_16", "Reduce frames from 32 to 16", {"preprocess.frames": 16}),
        AblationAxis("encoder_2_layers", "Encoder layers: 2", {"seqmodel.num_layers": 2}),
        AblationAxis("encoder_1_layer", "Encoder layers: 1", {"seqmodel.num_layers": 1}),
        AblationAxis("unidirectional_lstm", "Unidirectional LSTM", {"seqmodel.bidirectional": False}),
        AblationAxis("random_init_backbone", "Randomly initialized backbone", {"backbone.pretrained": False}),
        AblationAxis("attention_heads_16", "Attention heads: 16", {"seqmodel.num_heads": 16}),
        AblationAxis("no_augmentation", "Disable data augmentations", {"preprocess.augment": False}),
        AblationAxis(
            "resnet50_backbone",
            "ResNet-50 backbone",
            {"backbone.variant": "resnet50", "seqmodel.backbone_width": 2048},
        ),
    ]


def matrix_by_name(names: list[str]) -> list[AblationAxis]:
    table = {axis.name: axis for axis in standard_matrix()}
    missing = [n for n in names if n not in table]
    if missing:
        raise KeyError(f"unknown ablation rows: {missing}")
    return [table[n] for n in names]


def apply_patch(cfg: RunConfig, axis: AblationAxis) -> RunConfig:
    return apply_overrides(cfg, axis.patch)


def revert_patch(cfg: RunConfig, axis: AblationAxis, base: RunConfig) -> RunConfig:
    """Undo a patch by restoring the base config's values for its keys."""
    return apply_overrides(cfg, {key: get_at(base, key) for key in axis.patch})


def config_diff(a: RunConfig, b: RunConfig) -> dict[str, tuple]:
    """Dotted keys whose values differ, mapped to (a value, b value)."""
    fa, fb = _flatten(a.to_dict()), _flatten(b.to_dict())
    return {k: (fa[k], fb[k]) for k in fa if fa[k] != fb[k]}


def split_fingerprint(train_records, val_records) -> str:
    payload = ",".join(r.id for r in train_records) + "|" + ",".join(r.id for r in val_records)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def run_ablation(
    base_cfg: RunConfig,
    matrix: list[AblationAxis],
    train_records,
    val_records,
    class_names,
    out_dir=None,
    log=None,
) -> AblationReport:
    """Train and evaluate every row independently on identical splits.

    Row failures are recorded in the report and the run continues, so one
    broken configuration cannot take down the whole comparison.
    """
    out_dir = Path(out_dir) if out_dir is not None else None
    fingerprint = split_fingerprint(train_records, val_records)
    report = AblationReport()
    for axis in matrix:
        row = {
            "name": axis.name,
            "title": axis.title,
            "patch": dict(axis.patch),
            "split_hash": fingerprint,
            "accuracy": None,
            "macro_f1": None,
            "best_epoch": None,
            "runtime_s": None,
            "error": None,
        }
        started = time.perf_counter()
        try:
            cfg = apply_patch(base_cfg, axis).resolved()
            row["changed_keys"] = sorted(config_diff(base_cfg.resolved(), cfg))
            model = prepare_model(cfg)
            train_batcher = ClipBatcher(
                train_records, cfg.preprocess, cfg.training.batch_size, seed=cfg.seed, train=True
            )
            val_batcher = ClipBatcher(
                val_records, cfg.preprocess, cfg.training.batch_size, seed=cfg.seed, train=False
            )
            row_dir = out_dir / axis.name if out_dir is not None else None
            result = train(model, train_batcher, val_batcher, cfg.training, out_dir=row_dir)
            eval_report = evaluate_model(model, val_batcher, class_names, split="val")
            row["accuracy"] = eval_report.accuracy
            row["macro_f1"] = eval_report.macro_f1
            row["best_epoch"] = result.best_epoch
        except Exception as exc:  # noqa: BLE001 - per-row isolation is the contract
            row["error"] = f"{type(exc).__name__}: {exc}"
        row["runtime_s"] = time.perf_counter() - started
        report.rows.append(row)
        if log is not None:
            if row["error"]:
                log(f"{axis.name}: FAILED ({row['error']})")
            else:
                log(
                    f"{axis.name}: accuracy {row['accuracy']:.4f}  "
                    f"macro_f1 {row['macro_f1']:.4f}  {row['runtime_s']:.1f}s"
                )
    if out_dir is not None:
        save_report(report, out_dir)
    return report


def report_csv(report: AblationReport, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "title", "accuracy", "macro_f1", "best_epoch", "runtime_s", "error"])
        for row in report.rows:
            writer.writerow(
                [
                    row["name"],
                    row["title"],
                    "" if row["accuracy"] is None else f"{row['accuracy']:.6f}",
                    "" if row["macro_f1"] is None else f"{row['macro_f1']:.6f}",
                    "" if row["best_epoch"] is None else row["best_epoch"],
                    f"{row['runtime_s']:.2f}",
                    row["error"] or "",
                ]
            )


def format_table(report: AblationReport) -> str:
    """Render rows in the two-metric comparison layout."""
    title_w = max(len("Experiment"), max(len(r["title"]) for r in report.rows))
    lines = [f"{'Experiment':<{title_w}}  Accuracy (%)  F1-Score (%)"]
    for row in report.rows:
        if row["error"]:
            lines.append(f"{row['title']:<{title_w}}  failed: {row['error']}")
        else:
            lines.append(
                f"{row['title']:<{title_w}}  {100 * row['accuracy']:>11.2f}  {100 * row['macro_f1']:>11.2f}"
            )
    return "\n".join(lines) + "\n"


def save_report(report: AblationReport, out_dir) -> dict[str, str]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "ablation.csv"
    table_path = out_dir / "ablation.txt"
    json_path = out_dir / "ablation.json"
    report_csv(report, csv_path)
    table_path.write_text(format_table(report))
    json_path.write_text(json.dumps(report.rows, indent=2, sort_keys=True) + "\n")
    return {"csv": str(csv_path), "table": str(table_path), "json": str(json_path)}
