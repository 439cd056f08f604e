"""Command-line entry point.

Subcommands: generate, validate, split, train, eval, ablate, report. Every
command records a run.json with the fully resolved configuration under its
output directory. Exit codes: 0 success, 2 configuration error, 3 data
error, 4 runtime or numeric error. The output directory resolves as:
--out flag, then the SIGNFLOW_OUTPUT environment variable, then the config
file's output_dir, then a command-specific default.
"""

from __future__ import annotations

import dataclasses
import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import ablation as ablation_mod
from . import checkpoint as ckpt
from . import ingest, metrics, synthgen
from .config import RunConfig, apply_overrides, parse_override
from .data import ClipBatcher
from .exceptions import ConfigError, DataError, NumericError, SignflowError
from .training import prepare_model, train


def _out_dir(flag_value, cfg: RunConfig | None, default: str) -> Path:
    if flag_value:
        return Path(flag_value)
    env = os.environ.get("SIGNFLOW_OUTPUT")
    if env:
        return Path(env)
    if cfg is not None and cfg.output_dir:
        return Path(cfg.output_dir)
    return Path(default)


def _load_config(config_path, overrides) -> RunConfig:
    cfg = RunConfig.load(config_path) if config_path else RunConfig()
    if overrides:
        cfg = apply_overrides(cfg, dict(parse_override(o) for o in overrides))
    return cfg.resolved()


def _write_run_record(out_dir: Path, command: str, args: dict, cfg: RunConfig | None = None,
                      outputs: dict | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    record = {"command": command, "args": args, "outputs": outputs or {}}
    if cfg is not None:
        record["config"] = cfg.to_dict()
        record["seed"] = cfg.seed
        cfg.save(out_dir / "config.json")
    (out_dir / "run.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


def _split_records(manifest, splits_path):
    assignment = ingest.read_splits(splits_path)
    missing = [rec.id for rec in manifest.samples if rec.id not in assignment]
    if missing:
        raise DataError(f"splits file lacks {len(missing)} manifest ids (first: {missing[0]})")
    by_split = {"train": [], "val": [], "test": []}
    for rec in manifest.samples:
        by_split[assignment[rec.id]].append(rec)
    return by_split


config_option = click.option("--config", "config_path", type=click.Path(), default=None,
                             help="Run config JSON file.")
set_option = click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                          help="Override a config value by dotted key.")
out_option = click.option("--out", "-o", "out_flag", type=click.Path(), default=None,
                          help="Output directory.")
manifest_option = click.option("--manifest", "manifest_path", type=click.Path(), required=True,
                               help="Dataset manifest CSV.")
splits_option = click.option("--splits", "splits_path", type=click.Path(), required=True,
                             help="splits.csv produced by the split command.")


@click.group()
def cli():
    """Sign-language video classification toolkit."""


@cli.command()
@click.option("--classes", default=5, show_default=True)
@click.option("--signers", default=6, show_default=True)
@click.option("--repetitions", default=3, show_default=True)
@click.option("--resolution", default=64, show_default=True)
@click.option("--frames", nargs=2, type=int, default=(60, 180), show_default=True,
              help="Frame-count range (low high).")
@click.option("--transitions", nargs=2, type=int, default=(6, 18), show_default=True,
              help="Rest-pose transition length range (low high).")
@click.option("--style-jitter", default=0.30, show_default=True)
@click.option("--imbalance", is_flag=True, help="Mildly imbalance per-class counts.")
@click.option("--seed", default=0, show_default=True)
@click.option("--force", is_flag=True, help="Replace an existing dataset.")
@out_option
def generate(classes, signers, repetitions, resolution, frames, transitions, style_jitter,
             imbalance, seed, force, out_flag):
    """Render a synthetic gesture dataset."""
    out_dir = _out_dir(out_flag, None, "synth_data")
    spec = synthgen.SynthSpec(
        num_classes=classes,
        num_signers=signers,
        repetitions=repetitions,
        resolution=resolution,
        frames_range=tuple(frames),
        transition_range=tuple(transitions),
        signer_style_jitter=style_jitter,
        imbalance=imbalance,
        seed=seed,
    )
    manifest = synthgen.generate_dataset(spec, out_dir, force=force)
    _write_run_record(out_dir, "generate", {"spec": dataclasses.asdict(spec)},
                      outputs={"manifest": str(out_dir / synthgen.MANIFEST_NAME)})
    click.echo(f"generated {len(manifest.samples)} videos, {manifest.num_classes} classes -> {out_dir}")


@cli.command()
@manifest_option
@click.option("--min-resolution", type=int, default=None, help="Minimum frame side length.")
@click.option("--duration-bounds", nargs=2, type=float, default=None,
              help="Allowed duration range in seconds.")
@click.option("--duration-from-corpus", is_flag=True,
              help="Derive duration bounds from corpus 5th-95th percentiles.")
@click.option("--require-fps", is_flag=True)
@out_option
def validate(manifest_path, min_resolution, duration_bounds, duration_from_corpus,
             require_fps, out_flag):
    """Run machine-checkable quality rules over every sample."""
    out_dir = _out_dir(out_flag, None, "qc")
    manifest = ingest.load_manifest(manifest_path)
    bounds = tuple(duration_bounds) if duration_bounds else None
    if duration_from_corpus:
        bounds = ingest.duration_bounds_from_corpus(manifest)
    rules = ingest.QCRules(min_resolution=min_resolution, duration_bounds=bounds,
                           require_fps=require_fps)
    reports = [ingest.validate_sample(rec, rules) for rec in manifest.samples]
    failed = [r for r in reports if not r.passed]
    payload = {
        "total": len(reports),
        "passed": len(reports) - len(failed),
        "failed": len(failed),
        "manual_review_required": [r.sample_id for r in reports],
        "violations": {r.sample_id: r.violations for r in failed},
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "qc_report.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    _write_run_record(out_dir, "validate",
                      {"manifest": str(manifest_path), "rules": dataclasses.asdict(rules)},
                      outputs={"qc_report": str(out_dir / "qc_report.json")})
    click.echo(f"{payload['passed']}/{payload['total']} samples passed; "
               f"report -> {out_dir / 'qc_report.json'}")


@cli.command()
@manifest_option
@click.option("--mode", type=click.Choice(["signer_dependent", "signer_independent"]),
              default="signer_dependent", show_default=True)
@click.option("--fractions", default="0.7,0.15,0.15", show_default=True,
              help="train,val,test fractions.")
@click.option("--seed", default=0, show_default=True)
@out_option
def split(manifest_path, mode, fractions, seed, out_flag):
    """Assign samples to train/val/test and write splits.csv."""
    out_dir = _out_dir(out_flag, None, "splits")
    try:
        fracs = tuple(float(f) for f in fractions.split(","))
    except ValueError as exc:
        raise ConfigError(f"cannot parse fractions {fractions!r}: {exc}") from exc
    manifest = ingest.load_manifest(manifest_path)
    result = ingest.split_dataset(manifest, mode, fracs, seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    splits_path = out_dir / "splits.csv"
    ingest.write_splits(result.split_assignment, splits_path)
    sizes = {name: len(result.by_split(name)) for name in ("train", "val", "test")}
    _write_run_record(out_dir, "split",
                      {"manifest": str(manifest_path), "mode": mode,
                       "fractions": list(fracs), "seed": seed, "sizes": sizes},
                      outputs={"splits": str(splits_path)})
    click.echo(f"split sizes {sizes} -> {splits_path}")


@cli.command(name="train")
@config_option
@set_option
@manifest_option
@splits_option
@out_option
def train_cmd(config_path, overrides, manifest_path, splits_path, out_flag):
    """Train a model and keep the best-validation-loss checkpoint."""
    cfg = _load_config(config_path, overrides)
    out_dir = _out_dir(out_flag, cfg, "runs/train")
    manifest = ingest.load_manifest(manifest_path)
    if manifest.num_classes != cfg.seqmodel.num_classes:
        raise ConfigError(
            f"config expects {cfg.seqmodel.num_classes} classes, manifest has {manifest.num_classes}"
        )
    by_split = _split_records(manifest, splits_path)
    for name in ("train", "val"):
        if not by_split[name]:
            raise DataError(f"{name} split is empty")

    model = prepare_model(cfg)
    train_batcher = ClipBatcher(by_split["train"], cfg.preprocess, cfg.training.batch_size,
                                seed=cfg.seed, train=True)
    val_batcher = ClipBatcher(by_split["val"], cfg.preprocess, cfg.training.batch_size,
                              seed=cfg.seed, train=False)
    result = train(model, train_batcher, val_batcher, cfg.training, out_dir=out_dir,
                   extra_configs={"preprocess": dataclasses.asdict(cfg.preprocess)},
                   log=click.echo)
    report = metrics.evaluate_model(model, val_batcher, manifest.classes, split="val")
    outputs = metrics.save_report(report, out_dir, stem="val")
    outputs["checkpoint"] = result.checkpoint_path
    outputs["history"] = str(Path(out_dir) / "history.jsonl")
    _write_run_record(out_dir, "train",
                      {"manifest": str(manifest_path), "splits": str(splits_path)},
                      cfg=cfg, outputs=outputs)
    click.echo(f"best epoch {result.best_epoch} (val loss {result.best_val_loss:.4f}); "
               f"val accuracy {report.accuracy:.4f} -> {out_dir}")


@cli.command(name="eval")
@click.option("--checkpoint", "checkpoint_path", type=click.Path(), required=True)
@manifest_option
@splits_option
@click.option("--split", "split_name", type=click.Choice(["train", "val", "test"]),
              default="test", show_default=True)
@out_option
def eval_cmd(checkpoint_path, manifest_path, splits_path, split_name, out_flag):
    """Evaluate a checkpoint on one split."""
    out_dir = _out_dir(out_flag, None, "runs/eval")
    manifest = ingest.load_manifest(manifest_path)
    by_split = _split_records(manifest, splits_path)
    records = by_split[split_name]
    if not records:
        raise DataError(f"{split_name} split is empty")
    model, configs = ckpt.load_model(checkpoint_path)
    pre_cfg_data = configs.get("preprocess")
    if pre_cfg_data is None:
        raise ConfigError(f"checkpoint {checkpoint_path} lacks an embedded preprocess config")
    from .config import PreprocessConfig, dataclass_from_dict

    pre_cfg = dataclass_from_dict(PreprocessConfig, pre_cfg_data)
    batcher = ClipBatcher(records, pre_cfg, batch_size=8, train=False)
    report = metrics.evaluate_model(model, batcher, manifest.classes, split=split_name)
    outputs = metrics.save_report(report, out_dir, stem=split_name)
    _write_run_record(out_dir, "eval",
                      {"checkpoint": str(checkpoint_path), "manifest": str(manifest_path),
                       "splits": str(splits_path), "split": split_name},
                      outputs=outputs)
    click.echo(f"{split_name} accuracy {report.accuracy:.4f}, macro F1 {report.macro_f1:.4f} "
               f"-> {outputs['json']}")


@cli.command()
@config_option
@set_option
@manifest_option
@splits_option
@click.option("--rows", default=None,
              help="Comma-separated row names (default: the full standard matrix).")
@out_option
def ablate(config_path, overrides, manifest_path, splits_path, rows, out_flag):
    """Run the standard ablation matrix: train and evaluate each row."""
    cfg = _load_config(config_path, overrides)
    out_dir = _out_dir(out_flag, cfg, "runs/ablate")
    manifest = ingest.load_manifest(manifest_path)
    if manifest.num_classes != cfg.seqmodel.num_classes:
        raise ConfigError(
            f"config expects {cfg.seqmodel.num_classes} classes, manifest has {manifest.num_classes}"
        )
    by_split = _split_records(manifest, splits_path)
    for name in ("train", "val"):
        if not by_split[name]:
            raise DataError(f"{name} split is empty")
    try:
        matrix = (ablation_mod.matrix_by_name([r.strip() for r in rows.split(",")])
                  if rows else ablation_mod.standard_matrix())
    except KeyError as exc:
        raise ConfigError(str(exc)) from exc
    report = ablation_mod.run_ablation(cfg, matrix, by_split["train"], by_split["val"],
                                       manifest.classes, out_dir=out_dir, log=click.echo)
    _write_run_record(out_dir, "ablate",
                      {"manifest": str(manifest_path), "splits": str(splits_path),
                       "rows": [a.name for a in matrix]},
                      cfg=cfg, outputs={"csv": str(out_dir / "ablation.csv")})
    click.echo(ablation_mod.format_table(report))


@cli.command()
@click.option("--history", "history_path", type=click.Path(), default=None,
              help="history.jsonl from a training run.")
@click.option("--eval-json", "eval_json", type=click.Path(), default=None,
              help="Evaluation report JSON to render as a confusion heatmap.")
@out_option
def report(history_path, eval_json, out_flag):
    """Render training curves and confusion heatmaps from saved artifacts."""
    if history_path is None and eval_json is None:
        raise ConfigError("report needs --history and/or --eval-json")
    out_dir = _out_dir(out_flag, None, "runs/report")
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = {}
    if history_path is not None:
        history_path = Path(history_path)
        if not history_path.is_file():
            raise DataError(f"history file not found: {history_path}")
        records = [json.loads(line) for line in history_path.read_text().splitlines() if line.strip()]
        if not records:
            raise DataError(f"history file is empty: {history_path}")
        outputs["curves"] = str(_plot_history(records, out_dir / "loss_curves.png"))
    if eval_json is not None:
        eval_json = Path(eval_json)
        if not eval_json.is_file():
            raise DataError(f"evaluation report not found: {eval_json}")
        data = json.loads(eval_json.read_text())
        matrix = metrics.ConfusionMatrix(
            counts=np.asarray(data["confusion"], dtype=np.int64),
            class_names=data["class_names"],
        )
        heatmap_path = out_dir / "confusion.png"
        metrics.confusion_heatmap(matrix, heatmap_path)
        outputs["heatmap"] = str(heatmap_path)
    _write_run_record(out_dir, "report",
                      {"history": str(history_path) if history_path else None,
                       "eval_json": str(eval_json) if eval_json else None},
                      outputs=outputs)
    for name, path in outputs.items():
        click.echo(f"{name} -> {path}")


def _plot_history(records: list[dict], path: Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    epochs = [r["epoch"] for r in records]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.plot(epochs, [r["train_loss"] for r in records], label="train loss")
    ax1.plot(epochs, [r["val_loss"] for r in records], label="val loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend()
    ax2.plot(epochs, [r["val_acc"] for r in records], label="val accuracy")
    ax2.plot(epochs, [r["lr"] / max(rec["lr"] for rec in records) for r in records],
             label="lr (scaled)", linestyle="--")
    ax2.set_xlabel("epoch")
    ax2.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        exc.show(file=sys.stderr)
        return 2
    except click.ClickException as exc:
        exc.show(file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4
    except SignflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except KeyboardInterrupt:
        return 130
    except Exception as exc:  # noqa: BLE001 - the CLI boundary maps everything to exit codes
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
