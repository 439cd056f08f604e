"""Clip preprocessing: temporal sampling, augmentation, resize, normalization.

The deterministic path (val/test) is sample -> resize -> normalize and is
bit-reproducible. The training path inserts augmentation before the resize:
flip -> color jitter -> rotation, with every random parameter drawn once per
clip so all frames of a clip transform identically.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .config import PreprocessConfig
from .exceptions import ConfigError, ZeroStd

_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float64)


@dataclass
class Clip:
    data: np.ndarray  # T x 3 x S x S, normalized
    sample_id: str


def sample_indices(n_frames: int, t: int) -> list[int]:
    """Evenly spaced frame indices over [0, n_frames - 1], rounded half-up."""
    if n_frames < 1 or t < 1:
        raise ConfigError(f"need n_frames >= 1 and t >= 1, got {n_frames}, {t}")
    grid = np.linspace(0.0, float(n_frames - 1), num=t)
    idx = np.floor(grid + 0.5).astype(np.int64)
    return np.clip(idx, 0, n_frames - 1).tolist()


def resize_clip(clip: np.ndarray, target: int) -> np.ndarray:
    """Bilinear resize of a T x C x H x W clip to T x C x target x target.

    Uses the half-pixel-centers convention (align_corners off), no antialias.
    """
    t, c, h, w = clip.shape
    if h == target and w == target:
        return clip.copy()
    tensor = torch.from_numpy(np.ascontiguousarray(clip))
    out = F.interpolate(tensor, size=(target, target), mode="bilinear", align_corners=False)
    return out.numpy()


def resize_frame(frame: np.ndarray, target: int) -> np.ndarray:
    return resize_clip(frame[None], target)[0]


def _check_stats(mean, std):
    mean = np.asarray(mean, dtype=np.float32).reshape(-1)
    std = np.asarray(std, dtype=np.float32).reshape(-1)
    if mean.shape != (3,) or std.shape != (3,):
        raise ConfigError("mean and std must be 3-vectors")
    if np.any(std == 0):
        raise ZeroStd(f"std has zero component: {std.tolist()}")
    return mean, std


def normalize_clip(clip: np.ndarray, mean, std) -> np.ndarray:
    """Per-channel (p - mean_c) / std_c over a T x 3 x H x W clip."""
    mean, std = _check_stats(mean, std)
    return (clip - mean[None, :, None, None]) / std[None, :, None, None]


def denormalize_clip(clip: np.ndarray, mean, std) -> np.ndarray:
    mean, std = _check_stats(mean, std)
    return clip * std[None, :, None, None] + mean[None, :, None, None]


def adjust_brightness(clip: np.ndarray, factor: float) -> np.ndarray:
    return np.clip(clip * factor, 0.0, 1.0)


def adjust_contrast(clip: np.ndarray, factor: float) -> np.ndarray:
    gray = np.tensordot(_LUMA, clip, axes=([0], [1]))  # T x H x W
    frame_mean = gray.mean(axis=(1, 2))[:, None, None, None]
    return np.clip(factor * clip + (1.0 - factor) * frame_mean, 0.0, 1.0).astype(clip.dtype)


def adjust_saturation(clip: np.ndarray, factor: float) -> np.ndarray:
    gray = np.tensordot(_LUMA, clip, axes=([0], [1]))[:, None]  # T x 1 x H x W
    return np.clip(factor * clip + (1.0 - factor) * gray, 0.0, 1.0).astype(clip.dtype)


def rotate_clip(clip: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate every frame about its center by the same angle.

    Bilinear resampling, zero fill outside the source frame.
    """
    if degrees == 0.0:
        return clip.copy()
    _, _, h, w = clip.shape
    theta = math.radians(degrees)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys, xs = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx, indexing="ij")
    src_x = cos_t * xs + sin_t * ys + cx
    src_y = -sin_t * xs + cos_t * ys + cy

    x0 = np.floor(src_x).astype(np.int64)
    y0 = np.floor(src_y).astype(np.int64)
    fx = (src_x - x0).astype(clip.dtype)
    fy = (src_y - y0).astype(clip.dtype)

    out = np.zeros_like(clip)
    for dy, dx, weight in (
        (0, 0, (1 - fy) * (1 - fx)),
        (0, 1, (1 - fy) * fx),
        (1, 0, fy * (1 - fx)),
        (1, 1, fy * fx),
    ):
        yi, xi = y0 + dy, x0 + dx
        valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        yc = np.clip(yi, 0, h - 1)
        xc = np.clip(xi, 0, w - 1)
        out += clip[:, :, yc, xc] * (weight * valid)
    return out


def augment_clip(clip: np.ndarray, rng: np.random.Generator, cfg: PreprocessConfig) -> np.ndarray:
    """Training-time augmentation on a raw [0,1] clip.

    All parameters are drawn exactly once per clip, in a fixed order, so the
    random stream layout never depends on config values.
    """
    flip_draw = rng.random()
    lo, hi = 1.0 - cfg.jitter_strength, 1.0 + cfg.jitter_strength
    brightness = rng.uniform(lo, hi)
    contrast = rng.uniform(lo, hi)
    saturation = rng.uniform(lo, hi)
    angle = rng.uniform(-cfg.rotation_degrees, cfg.rotation_degrees)

    out = clip
    if flip_draw < cfg.flip_prob:
        out = out[:, :, :, ::-1]
    if cfg.jitter_strength > 0:
        out = adjust_brightness(out, brightness)
        out = adjust_contrast(out, contrast)
        out = adjust_saturation(out, saturation)
    if cfg.rotation_degrees > 0:
        out = rotate_clip(np.ascontiguousarray(out), angle)
    return np.ascontiguousarray(out)


def clip_rng(seed: int, sample_id: str, epoch: int = 0) -> np.random.Generator:
    """Per-clip generator from (run seed, sample id, epoch).

    Hashing the sample id keeps results independent of iteration order, so
    clips can be prepared in parallel without changing the output.
    """
    digest = hashlib.sha256(sample_id.encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "big")
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, key]))


class ClipPreprocessor:
    """Full raw-clip -> model-input pipeline for one sample."""

    def __init__(self, cfg: PreprocessConfig):
        self.cfg = cfg.validate()

    def __call__(
        self,
        raw: np.ndarray,
        sample_id: str,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Clip:
        cfg = self.cfg
        idx = sample_indices(raw.shape[0], cfg.frames)
        clip = raw[idx].astype(np.float32)
        if train and cfg.augment:
            if rng is None:
                raise ConfigError("augmentation needs an rng; use clip_rng(seed, sample_id)")
            clip = augment_clip(clip, rng, cfg).astype(np.float32)
        clip = resize_clip(clip, cfg.target_size)
        clip = normalize_clip(clip, cfg.mean, cfg.std)
        return Clip(data=np.ascontiguousarray(clip, dtype=np.float32), sample_id=sample_id)
