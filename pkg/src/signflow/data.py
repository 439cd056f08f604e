"""Batch iteration for training and evaluation.

ClipBatcher feeds manifest-backed samples through the preprocessing
pipeline; TensorBatcher serves in-memory arrays (tests, tiny runs). Both
shuffle with a generator derived from (seed, epoch) only, so iteration
order never depends on prior RNG use.
"""

from __future__ import annotations

import numpy as np
import torch

from .config import PreprocessConfig
from .exceptions import DataError
from .ingest import SampleRecord, load_frames
from .preprocess import ClipPreprocessor, clip_rng, sample_indices


class TensorBatcher:
    """Mini-batches over an in-memory clip tensor and label vector."""

    def __init__(self, clips, labels, batch_size: int, seed: int = 0, train: bool = False):
        self.clips = torch.as_tensor(clips)
        self.labels = torch.as_tensor(labels, dtype=torch.long)
        if len(self.clips) != len(self.labels):
            raise DataError(f"{len(self.clips)} clips vs {len(self.labels)} labels")
        if len(self.clips) == 0:
            raise DataError("empty batcher")
        self.batch_size = batch_size
        self.seed = seed
        self.train = train

    def __len__(self):
        return len(self.labels)

    def label_array(self) -> np.ndarray:
        return self.labels.numpy()

    def epoch_batches(self, epoch: int = 0):
        order = np.arange(len(self.labels))
        if self.train:
            rng = np.random.default_rng(np.random.SeedSequence([self.seed, epoch]))
            rng.shuffle(order)
        for start in range(0, len(order), self.batch_size):
            idx = order[start : start + self.batch_size]
            yield self.clips[idx], self.labels[idx]


class ArrayClipBatcher:
    """Mini-batches over in-memory raw clips, run through preprocessing.

    Clips may vary in frame count and resolution; temporal sampling and the
    resize make them uniform. Augmentation RNG is keyed by array index.
    """

    def __init__(self, clips, labels, pre_cfg: PreprocessConfig, batch_size: int,
                 seed: int = 0, train: bool = False):
        self.clips = [np.asarray(c, dtype=np.float32) for c in clips]
        self.labels = np.asarray(labels, dtype=np.int64)
        if len(self.clips) != len(self.labels):
            raise DataError(f"{len(self.clips)} clips vs {len(self.labels)} labels")
        if not self.clips:
            raise DataError("empty batcher")
        self.pre = ClipPreprocessor(pre_cfg)
        self.batch_size = batch_size
        self.seed = seed
        self.train = train
        self._processed: dict[int, np.ndarray] = {}

    def __len__(self):
        return len(self.labels)

    def label_array(self) -> np.ndarray:
        return self.labels

    def _clip_for(self, i: int, epoch: int) -> np.ndarray:
        augmenting = self.train and self.pre.cfg.augment
        if not augmenting and i in self._processed:
            return self._processed[i]
        rng = clip_rng(self.seed, str(i), epoch) if augmenting else None
        out = self.pre(self.clips[i], str(i), train=augmenting, rng=rng).data
        if not augmenting:
            self._processed[i] = out
        return out

    def epoch_batches(self, epoch: int = 0):
        order = np.arange(len(self.labels))
        if self.train:
            rng = np.random.default_rng(np.random.SeedSequence([self.seed, epoch]))
            rng.shuffle(order)
        for start in range(0, len(order), self.batch_size):
            idx = order[start : start + self.batch_size]
            clips = np.stack([self._clip_for(int(i), epoch) for i in idx])
            yield torch.from_numpy(clips), torch.from_numpy(self.labels[idx])


class ClipBatcher:
    """Mini-batches over manifest samples, preprocessing on the fly.

    Temporally sampled raw clips are cached after first load (the frame
    subset is deterministic for a fixed T). The deterministic val/test
    pipeline additionally caches the fully processed clip.
    """

    def __init__(
        self,
        records: list[SampleRecord],
        pre_cfg: PreprocessConfig,
        batch_size: int,
        seed: int = 0,
        train: bool = False,
        cache: bool = True,
    ):
        if not records:
            raise DataError("empty batcher")
        self.records = list(records)
        self.pre = ClipPreprocessor(pre_cfg)
        self.batch_size = batch_size
        self.seed = seed
        self.train = train
        self.cache = cache
        self._raw: dict[str, np.ndarray] = {}
        self._processed: dict[str, np.ndarray] = {}

    def __len__(self):
        return len(self.records)

    def label_array(self) -> np.ndarray:
        return np.array([r.class_index for r in self.records], dtype=np.int64)

    def _sampled_raw(self, record: SampleRecord) -> np.ndarray:
        clip = self._raw.get(record.id)
        if clip is None:
            raw = load_frames(record)
            clip = raw[sample_indices(raw.shape[0], self.pre.cfg.frames)]
            if self.cache:
                self._raw[record.id] = clip
        return clip

    def _clip_for(self, record: SampleRecord, epoch: int) -> np.ndarray:
        augmenting = self.train and self.pre.cfg.augment
        if not augmenting and record.id in self._processed:
            return self._processed[record.id]
        raw = self._sampled_raw(record)
        rng = clip_rng(self.seed, record.id, epoch) if augmenting else None
        out = self.pre(raw, record.id, train=augmenting, rng=rng).data
        if self.cache and not augmenting:
            self._processed[record.id] = out
        return out

    def epoch_batches(self, epoch: int = 0):
        order = np.arange(len(self.records))
        if self.train:
            rng = np.random.default_rng(np.random.SeedSequence([self.seed, epoch]))
            rng.shuffle(order)
        for start in range(0, len(order), self.batch_size):
            idx = order[start : start + self.batch_size]
            clips = np.stack([self._clip_for(self.records[i], epoch) for i in idx])
            labels = np.array([self.records[i].class_index for i in idx], dtype=np.int64)
            yield torch.from_numpy(clips), torch.from_numpy(labels)
