"""Checkpoint I/O: flat tensor archives with canonical names.

An archive is a .npz file keyed by canonical tensor names plus a JSON
manifest alongside (<path>.json) holding shapes, dtypes and any embedded
configs. Backbone tensors use the names stem.conv, stem.bn.{scale,shift,
mean,var}, stage{S}.block{K}.{convJ,bnJ,shortcut.conv,shortcut.bn}; the
sequence model's tensors live under the seq. namespace. Writes are atomic
(temp file then rename).
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import BackboneConfig, SeqModelConfig, dataclass_from_dict
from .exceptions import DataError, MissingFile, MissingTensor, ShapeMismatch

ARCHIVE_FORMAT = "signflow-checkpoint-v1"

_BN_TO_CANONICAL = {"weight": "scale", "bias": "shift", "running_mean": "mean", "running_var": "var"}
_BN_FROM_CANONICAL = {v: k for k, v in _BN_TO_CANONICAL.items()}


def canonical_name(state_key: str) -> str | None:
    """Map a backbone state-dict key to its canonical archive name.

    Returns None for keys that are not persisted (batch counters).
    """
    parts = state_key.split(".")
    leaf, parent = parts[-1], parts[-2]
    if leaf == "num_batches_tracked":
        return None
    if parent == "bn" or (parent.startswith("bn") and parent[2:].isdigit()):
        if leaf not in _BN_TO_CANONICAL:
            raise DataError(f"unexpected batch-norm leaf in key {state_key!r}")
        return ".".join(parts[:-1] + [_BN_TO_CANONICAL[leaf]])
    if leaf == "weight" and (parent == "conv" or (parent.startswith("conv") and parent[4:].isdigit())):
        return ".".join(parts[:-1])
    raise DataError(f"cannot derive canonical name for state key {state_key!r}")


def state_key_for(canonical: str) -> str:
    """Inverse of canonical_name."""
    parts = canonical.split(".")
    leaf = parts[-1]
    if leaf in _BN_FROM_CANONICAL:
        return ".".join(parts[:-1] + [_BN_FROM_CANONICAL[leaf]])
    return canonical + ".weight"


def backbone_to_canonical(backbone: torch.nn.Module) -> dict[str, np.ndarray]:
    out = {}
    for key, tensor in backbone.state_dict().items():
        name = canonical_name(key)
        if name is not None:
            out[name] = tensor.detach().cpu().numpy()
    return out


def _atomic_write_bytes(path: Path, writer) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            writer(fh)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def save_archive(path, tensors: dict[str, np.ndarray], configs: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {k: np.asarray(v) for k, v in tensors.items()}
    _atomic_write_bytes(path, lambda fh: np.savez(fh, **arrays))
    manifest = {
        "format": ARCHIVE_FORMAT,
        "tensors": {k: {"shape": list(v.shape), "dtype": str(v.dtype)} for k, v in arrays.items()},
        "configs": configs or {},
    }
    payload = (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8")
    _atomic_write_bytes(manifest_path(path), lambda fh: fh.write(payload))


def manifest_path(archive_path) -> Path:
    archive_path = Path(archive_path)
    return archive_path.with_name(archive_path.name + ".json")


def load_archive(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"checkpoint not found: {path}")
    with np.load(path) as data:
        tensors = {k: data[k] for k in data.files}
    configs = {}
    mpath = manifest_path(path)
    if mpath.is_file():
        configs = json.loads(mpath.read_text()).get("configs", {})
    return tensors, configs


@dataclass
class LoadReport:
    loaded: list[str] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)
    ignored: list[str] = field(default_factory=list)


def apply_canonical(module: torch.nn.Module, tensors: dict[str, np.ndarray],
                    prefix: str = "", strict: bool = True) -> LoadReport:
    """Copy canonical-named tensors into a backbone-shaped module.

    Archive entries outside the module's namespace (a source classifier
    head, the seq. tensors of a combined checkpoint) are ignored.
    """
    state = module.state_dict()
    wanted = {}
    for key in state:
        name = canonical_name(key)
        if name is not None:
            wanted[prefix + name] = key
    report = LoadReport()
    report.missing = sorted(n for n in wanted if n not in tensors)
    if report.missing and strict:
        raise MissingTensor(", ".join(report.missing))
    for name, key in sorted(wanted.items()):
        if name not in tensors:
            continue
        arr = tensors[name]
        if tuple(arr.shape) != tuple(state[key].shape):
            raise ShapeMismatch(
                f"{name}: checkpoint shape {tuple(arr.shape)} vs model shape {tuple(state[key].shape)}"
            )
        state[key] = torch.from_numpy(np.ascontiguousarray(arr)).to(state[key].dtype)
        report.loaded.append(name)
    report.ignored = sorted(n for n in tensors if n not in wanted)
    module.load_state_dict(state)
    return report


def save_backbone(backbone, path) -> None:
    configs = {"backbone": dataclasses.asdict(backbone.cfg)} if hasattr(backbone, "cfg") else {}
    save_archive(path, backbone_to_canonical(backbone), configs)


def load_pretrained(weights_path, backbone) -> LoadReport:
    """Load canonical backbone weights from an archive, checking that every
    backbone tensor is present with the right shape."""
    tensors, _ = load_archive(weights_path)
    return apply_canonical(backbone, tensors, strict=True)


def resolve_weights(cfg: BackboneConfig) -> Path:
    """Locate the pretrained archive for a backbone config.

    weights_path may point at a file, or at a directory holding one archive
    per variant (<variant>.npz) so ablations can swap backbones without
    editing the path.
    """
    from .exceptions import ConfigError

    if cfg.weights_path is None:
        raise ConfigError(
            f"backbone.pretrained is set but no weights_path given for variant {cfg.variant!r}"
        )
    path = Path(cfg.weights_path)
    if path.is_dir():
        return path / f"{cfg.variant}.npz"
    return path


def model_to_tensors(model) -> dict[str, np.ndarray]:
    tensors = backbone_to_canonical(model.backbone)
    for key, t in model.state_dict().items():
        if key.startswith("backbone."):
            continue
        tensors["seq." + key] = t.detach().cpu().numpy()
    return tensors


def save_model(model, path, extra_configs: dict | None = None) -> None:
    """Write a combined backbone + sequence-model checkpoint.

    The archive is self-describing: both configs ride along in the manifest.
    """
    configs = {
        "backbone": dataclasses.asdict(model.backbone.cfg),
        "seqmodel": dataclasses.asdict(model.cfg),
    }
    if extra_configs:
        configs.update(extra_configs)
    save_archive(path, model_to_tensors(model), configs)


def load_model(path):
    """Rebuild a SignTransformer from a combined checkpoint."""
    from .seqmodel import build_model

    tensors, configs = load_archive(path)
    if "backbone" not in configs or "seqmodel" not in configs:
        raise DataError(f"checkpoint manifest for {path} lacks embedded configs")
    backbone_cfg = dataclass_from_dict(BackboneConfig, configs["backbone"])
    seq_cfg = dataclass_from_dict(SeqModelConfig, configs["seqmodel"])
    model = build_model(backbone_cfg, seq_cfg, seed=0)

    apply_canonical(model.backbone, tensors, strict=True)
    state = model.state_dict()
    seq_keys = [k for k in state if not k.startswith("backbone.")]
    missing = sorted(k for k in seq_keys if "seq." + k not in tensors)
    if missing:
        raise MissingTensor(", ".join("seq." + k for k in missing))
    for key in seq_keys:
        arr = tensors["seq." + key]
        if tuple(arr.shape) != tuple(state[key].shape):
            raise ShapeMismatch(
                f"seq.{key}: checkpoint shape {tuple(arr.shape)} vs model shape {tuple(state[key].shape)}"
            )
        state[key] = torch.from_numpy(np.ascontiguousarray(arr)).to(state[key].dtype)
    model.load_state_dict(state)
    return model, configs
