"""Estimator facade over the video classifier.

SignTransformerClassifier wraps generation of the network, preprocessing and
the training loop behind the usual fit/predict/predict_proba/transform
surface, so the model drops into pipelines, grid search and clone().

X is either one array of shape (n_samples, frames, 3, height, width) or a
sequence of per-clip arrays (frames_i, 3, height_i, width_i), raw RGB values
in [0, 1]. Temporal sampling and resizing make clips uniform, so mixed
lengths and resolutions are fine.
"""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .checkpoint import load_pretrained, resolve_weights
from .config import (
    BackboneConfig,
    PreprocessConfig,
    RunConfig,
    SeqModelConfig,
    TrainConfig,
)
from .data import ArrayClipBatcher
from .seqmodel import build_model
from .training import train


def validate_clips(X) -> list[np.ndarray]:
    """Coerce X to a list of float32 clip arrays, checking the contract."""
    if isinstance(X, np.ndarray):
        if X.ndim != 5:
            raise ValueError(
                f"clip array must have shape (n, frames, 3, h, w), got {X.shape}"
            )
        clips = [X[i] for i in range(X.shape[0])]
    else:
        clips = list(X)
    if not clips:
        raise ValueError("X is empty")
    out = []
    for i, clip in enumerate(clips):
        arr = np.asarray(clip, dtype=np.float32)
        if arr.ndim != 4 or arr.shape[1] != 3:
            raise ValueError(
                f"clip {i} must have shape (frames, 3, h, w), got {arr.shape}"
            )
        if arr.shape[0] < 1 or arr.shape[2] < 1 or arr.shape[3] < 1:
            raise ValueError(f"clip {i} has an empty dimension: {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError(f"clip {i} contains non-finite values")
        if arr.min() < -1e-3 or arr.max() > 1.0 + 1e-3:
            raise ValueError(
                f"clip {i} values outside [0, 1]: range "
                f"[{arr.min():.4f}, {arr.max():.4f}]"
            )
        out.append(arr)
    return out


def validate_labels(y, n_samples: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"y must be 1-dimensional, got shape {y.shape}")
    if len(y) != n_samples:
        raise ValueError(f"X has {n_samples} samples but y has {len(y)}")
    return y


class SignTransformerClassifier(BaseEstimator, ClassifierMixin):
    """Video gesture classifier: CNN frame features, transformer encoder,
    bidirectional LSTM, mean-pool softmax head.

    Defaults are sized for small in-memory datasets (mini backbone, no
    pretrained weights); the full-scale architecture is reachable through
    the constructor parameters.
    """

    def __init__(
        self,
        backbone: str = "mini",
        mini_width: int = 16,
        pretrained: bool = False,
        weights_path: str | None = None,
        d_model: int = 64,
        num_layers: int = 1,
        num_heads: int = 4,
        ffn_dim: int = 256,
        lstm_hidden: int = 32,
        bidirectional: bool = True,
        positional_encoding: bool = True,
        frames: int = 16,
        target_size: int = 64,
        augment: bool = False,
        epochs: int = 10,
        batch_size: int = 8,
        lr0: float = 1e-4,
        weight_decay: float = 1e-2,
        patience: int = 10,
        class_weighting: str = "inverse_frequency",
        val_fraction: float = 0.0,
        seed: int = 0,
        verbose: bool = False,
    ):
        self.backbone = backbone
        self.mini_width = mini_width
        self.pretrained = pretrained
        self.weights_path = weights_path
        self.d_model = d_model
        self.num_layers = num_layers
        self.num_heads = num_heads
        self.ffn_dim = ffn_dim
        self.lstm_hidden = lstm_hidden
        self.bidirectional = bidirectional
        self.positional_encoding = positional_encoding
        self.frames = frames
        self.target_size = target_size
        self.augment = augment
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr0 = lr0
        self.weight_decay = weight_decay
        self.patience = patience
        self.class_weighting = class_weighting
        self.val_fraction = val_fraction
        self.seed = seed
        self.verbose = verbose

    def _run_config(self, num_classes: int) -> RunConfig:
        backbone_cfg = BackboneConfig(
            variant=self.backbone,
            pretrained=self.pretrained,
            weights_path=self.weights_path,
            mini_width=self.mini_width,
        )
        cfg = RunConfig(
            preprocess=PreprocessConfig(
                frames=self.frames, target_size=self.target_size, augment=self.augment
            ),
            backbone=backbone_cfg,
            seqmodel=SeqModelConfig(
                d_model=self.d_model,
                num_layers=self.num_layers,
                num_heads=self.num_heads,
                ffn_dim=self.ffn_dim,
                lstm_hidden=self.lstm_hidden,
                bidirectional=self.bidirectional,
                positional_encoding=self.positional_encoding,
                num_classes=num_classes,
                backbone_width=backbone_cfg.feature_dim,
            ),
            training=TrainConfig(
                batch_size=self.batch_size,
                epochs=self.epochs,
                lr0=self.lr0,
                weight_decay=self.weight_decay,
                patience=min(self.patience, self.epochs),
                class_weighting=self.class_weighting,
            ),
            seed=self.seed,
        )
        return cfg.resolved()

    def fit(self, X, y):
        clips = validate_clips(X)
        y = validate_labels(y, len(clips))
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least 2 classes to fit")
        cfg = self._run_config(len(self.classes_))

        model = build_model(cfg.backbone, cfg.seqmodel, seed=cfg.seed)
        if cfg.backbone.pretrained:
            load_pretrained(resolve_weights(cfg.backbone), model.backbone)

        n = len(clips)
        n_val = int(round(self.val_fraction * n)) if self.val_fraction > 0 else 0
        if 0 < n_val < n:
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 99]))
            order = rng.permutation(n)
            val_idx, train_idx = order[:n_val], order[n_val:]
        else:
            val_idx = train_idx = np.arange(n)

        make = lambda idx, training: ArrayClipBatcher(
            [clips[i] for i in idx], y_idx[idx], cfg.preprocess,
            cfg.training.batch_size, seed=cfg.seed, train=training,
        )
        log = print if self.verbose else None
        result = train(model, make(train_idx, True), make(val_idx, False),
                       cfg.training, log=log)

        self.config_ = cfg
        self.model_ = model
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.n_features_in_ = None
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(
                "this SignTransformerClassifier instance is not fitted yet; call fit first"
            )

    def _batcher(self, X) -> ArrayClipBatcher:
        clips = validate_clips(X)
        return ArrayClipBatcher(
            clips,
            np.zeros(len(clips), dtype=np.int64),
            self.config_.preprocess,
            self.config_.training.batch_size,
            seed=self.config_.seed,
            train=False,
        )

    def predict_proba(self, X) -> np.ndarray:
        self._check_fitted()
        batcher = self._batcher(X)
        self.model_.eval()
        probs = []
        with torch.no_grad():
            for clips, _ in batcher.epoch_batches(0):
                probs.append(torch.softmax(self.model_(clips), dim=-1).numpy())
        return np.concatenate(probs)

    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        return self.classes_[self.predict_proba(X).argmax(axis=1)]

    def transform(self, X) -> np.ndarray:
        """Mean-pooled temporal embeddings (n_samples, 2 * lstm_hidden)."""
        self._check_fitted()
        batcher = self._batcher(X)
        self.model_.eval()
        out = []
        with torch.no_grad():
            for clips, _ in batcher.epoch_batches(0):
                inter = self.model_.forward_intermediates(clips)
                out.append(inter["lstm_out"].mean(dim=1).numpy())
        return np.concatenate(out)
