"""Training loop: class-weighted cross-entropy, AdamW with decoupled weight
decay, single-cycle cosine annealing, early stopping on validation loss.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import checkpoint as ckpt
from .config import TrainConfig
from .exceptions import ConfigError, EmptyClass, NonFiniteLoss

HISTORY_FILE = "history.jsonl"
BEST_CHECKPOINT = "best.npz"


def class_weights(counts, mode: str = "inverse_frequency") -> np.ndarray:
    """Per-class loss weights from training-split class counts.

    inverse_frequency: w_j = N / (C * n_j), so Sum_j w_j * n_j = N and
    balanced counts give all-ones. uniform: w_j = 1.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if counts.ndim != 1 or counts.size == 0:
        raise ConfigError("counts must be a nonempty vector")
    zero = np.nonzero(counts <= 0)[0]
    if zero.size:
        raise EmptyClass(f"classes with no training samples: {zero.tolist()}")
    if mode == "uniform":
        return np.ones(counts.size, dtype=np.float64)
    if mode == "inverse_frequency":
        n_total = counts.sum()
        return n_total / (counts.size * counts.astype(np.float64))
    raise ConfigError(f"unknown class_weighting mode: {mode!r}")


def counts_from_labels(labels, num_classes: int) -> np.ndarray:
    return np.bincount(np.asarray(labels, dtype=np.int64), minlength=num_classes)


def weighted_ce(logits: torch.Tensor, labels: torch.Tensor, weights) -> torch.Tensor:
    """Batch loss: sum of -w_y * log p(y|x) divided by the sum of the
    selected weights, so uniform weights reduce exactly to mean CE."""
    if logits.ndim != 2:
        raise ConfigError(f"logits must be B x C, got {tuple(logits.shape)}")
    w = torch.as_tensor(weights, dtype=logits.dtype, device=logits.device)
    labels = torch.as_tensor(labels, dtype=torch.long, device=logits.device)
    logp = F.log_softmax(logits, dim=-1)
    picked = logp.gather(1, labels[:, None]).squeeze(1)
    wsel = w[labels]
    return -(wsel * picked).sum() / wsel.sum()


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Single-cycle cosine annealing from lr0 down to lr_min, per epoch."""
    if not 0 <= epoch < cfg.epochs:
        raise ConfigError(f"epoch {epoch} outside [0, {cfg.epochs})")
    if cfg.epochs == 1:
        return cfg.lr0
    cosine = math.cos(math.pi * epoch / (cfg.epochs - 1))
    return cfg.lr_min + 0.5 * (cfg.lr0 - cfg.lr_min) * (1.0 + cosine)


def prepare_model(cfg):
    """Build the network for a run config, loading pretrained backbone
    weights when the config asks for them."""
    from .seqmodel import build_model

    cfg = cfg.resolved()
    model = build_model(cfg.backbone, cfg.seqmodel, seed=cfg.seed)
    if cfg.backbone.pretrained:
        ckpt.load_pretrained(ckpt.resolve_weights(cfg.backbone), model.backbone)
    return model


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = math.inf
    checkpoint_path: str | None = None
    stopped_early: bool = False


def _epoch_pass(model, batcher, weights_t, epoch, optimizer=None):
    """One pass over a batcher. With an optimizer: train mode plus updates.
    Returns (weighted mean loss, accuracy)."""
    training = optimizer is not None
    model.train(training)
    loss_sum = 0.0
    weight_sum = 0.0
    correct = 0
    total = 0
    with torch.enable_grad() if training else torch.no_grad():
        for batch_index, (clips, labels) in enumerate(batcher.epoch_batches(epoch)):
            logits = model(clips)
            loss = weighted_ce(logits, labels, weights_t)
            if not torch.isfinite(loss):
                stage = "train" if training else "val"
                raise NonFiniteLoss(
                    f"non-finite {stage} loss {loss.item()!r} at epoch {epoch}, "
                    f"batch {batch_index} (labels {labels.tolist()})"
                )
            if training:
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
            wsel = float(weights_t[labels].sum())
            loss_sum += loss.detach().item() * wsel
            weight_sum += wsel
            correct += int((logits.argmax(dim=-1) == labels).sum())
            total += len(labels)
    return loss_sum / weight_sum, correct / total


def train(model, train_batcher, val_batcher, cfg: TrainConfig, out_dir=None,
          weights=None, extra_configs=None, log=None) -> TrainResult:
    """Full optimization loop.

    Saves the best-validation-loss checkpoint (when out_dir is given),
    appends one JSON line per epoch to history.jsonl, and restores the best
    weights into the model before returning.
    """
    cfg.validate()
    torch.manual_seed(cfg.seed)
    if weights is None:
        counts = counts_from_labels(train_batcher.label_array(), model.cfg.num_classes)
        weights = class_weights(counts, cfg.class_weighting)
    weights_t = torch.as_tensor(np.asarray(weights), dtype=torch.float32)

    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = None
    if params:
        optimizer = torch.optim.AdamW(
            params,
            lr=cfg.lr0,
            weight_decay=cfg.weight_decay,
            betas=(cfg.beta1, cfg.beta2),
            eps=cfg.eps,
        )

    out_dir = Path(out_dir) if out_dir is not None else None
    history_path = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        history_path = out_dir / HISTORY_FILE
        history_path.write_text("")

    result = TrainResult()
    best_state = None
    since_improvement = 0
    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg)
        if optimizer is not None:
            for group in optimizer.param_groups:
                group["lr"] = lr
        train_loss, _ = _epoch_pass(model, train_batcher, weights_t, epoch, optimizer)
        val_loss, val_acc = _epoch_pass(model, val_batcher, weights_t, epoch)

        record = {
            "epoch": epoch,
            "train_loss": train_loss,
            "val_loss": val_loss,
            "val_acc": val_acc,
            "lr": lr,
        }
        result.history.append(record)
        if history_path is not None:
            with history_path.open("a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        if log is not None:
            log(
                f"epoch {epoch:3d}  train_loss {train_loss:.4f}  "
                f"val_loss {val_loss:.4f}  val_acc {val_acc:.4f}  lr {lr:.2e}"
            )

        if val_loss < result.best_val_loss:
            result.best_val_loss = val_loss
            result.best_epoch = epoch
            since_improvement = 0
            best_state = copy.deepcopy(model.state_dict())
            if out_dir is not None:
                path = out_dir / BEST_CHECKPOINT
                ckpt.save_model(model, path, extra_configs)
                result.checkpoint_path = str(path)
        else:
            since_improvement += 1
            if since_improvement >= cfg.patience:
                result.stopped_early = True
                break

    if best_state is not None:
        model.load_state_dict(best_state)
    return result
