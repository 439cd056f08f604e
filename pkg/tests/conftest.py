"""Shared fixtures: tiny model configs and a small rendered corpus."""

from __future__ import annotations

import numpy as np
import pytest

from signflow.config import BackboneConfig, PreprocessConfig, RunConfig, SeqModelConfig, TrainConfig
from signflow.synthgen import SynthSpec, generate_dataset


def tiny_backbone_cfg(**kw) -> BackboneConfig:
    base = dict(variant="mini", mini_width=8, pretrained=False)
    base.update(kw)
    return BackboneConfig(**base)


def tiny_seq_cfg(**kw) -> SeqModelConfig:
    base = dict(d_model=16, num_layers=1, num_heads=2, ffn_dim=32,
                lstm_hidden=8, num_classes=4, backbone_width=16)
    base.update(kw)
    return SeqModelConfig(**base)


def tiny_run_cfg(**kw) -> RunConfig:
    cfg = RunConfig(
        preprocess=PreprocessConfig(frames=6, target_size=16, augment=False),
        backbone=tiny_backbone_cfg(),
        seqmodel=tiny_seq_cfg(num_classes=3),
        training=TrainConfig(batch_size=4, epochs=2, patience=2, seed=0),
        seed=0,
    )
    if kw:
        from signflow.config import apply_overrides

        cfg = apply_overrides(cfg, kw)
    return cfg.resolved()


SMALL_SPEC = SynthSpec(
    num_classes=3,
    num_signers=4,
    repetitions=2,
    frames_range=(18, 28),
    transition_range=(2, 5),
    resolution=32,
    seed=11,
)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """3 classes x 4 signers x 2 repetitions at 32x32, rendered once per session."""
    root = tmp_path_factory.mktemp("corpus")
    manifest = generate_dataset(SMALL_SPEC, root)
    return manifest


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
