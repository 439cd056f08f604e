"""Checkpoint archives: canonical naming, round-trips, strict loading."""

from __future__ import annotations

import importlib.util
import json
import sys
from pathlib import Path

import numpy as np
import pytest
import torch

from signflow import checkpoint as ckpt
from signflow.config import BackboneConfig
from signflow.backbone import build_backbone
from signflow.exceptions import ConfigError, MissingFile, MissingTensor, ShapeMismatch
from signflow.seqmodel import build_model

from .conftest import tiny_backbone_cfg, tiny_seq_cfg

SCRIPT = Path(__file__).resolve().parent.parent / "scripts" / "convert_torchvision_backbone.py"


def load_converter():
    spec = importlib.util.spec_from_file_location("convert_torchvision_backbone", SCRIPT)
    module = importlib.util.module_from_spec(spec)
    sys.modules[spec.name] = module
    spec.loader.exec_module(module)
    return module


class TestCanonicalNaming:
    @pytest.mark.parametrize("state_key,expected", [
        ("stem.conv.weight", "stem.conv"),
        ("stem.bn.weight", "stem.bn.scale"),
        ("stem.bn.bias", "stem.bn.shift"),
        ("stem.bn.running_mean", "stem.bn.mean"),
        ("stem.bn.running_var", "stem.bn.var"),
        ("stem.bn.num_batches_tracked", None),
        ("stage1.block1.conv1.weight", "stage1.block1.conv1"),
        ("stage4.block2.bn2.running_var", "stage4.block2.bn2.var"),
        ("stage2.block1.shortcut.conv.weight", "stage2.block1.shortcut.conv"),
        ("stage2.block1.shortcut.bn.bias", "stage2.block1.shortcut.bn.shift"),
    ])
    def test_canonical_name(self, state_key, expected):
        assert ckpt.canonical_name(state_key) == expected

    def test_state_key_inverse(self):
        backbone = build_backbone(tiny_backbone_cfg(), seed=0)
        for key in backbone.state_dict():
            canonical = ckpt.canonical_name(key)
            if canonical is None:
                continue
            assert ckpt.state_key_for(canonical) == key

    def test_backbone_export_covers_all_tensors(self):
        backbone = build_backbone(BackboneConfig(variant="resnet18", pretrained=False), seed=0)
        tensors = ckpt.backbone_to_canonical(backbone)
        expected = sum(1 for k in backbone.state_dict() if "num_batches_tracked" not in k)
        assert len(tensors) == expected
        assert "stage4.block1.shortcut.conv" in tensors


class TestArchiveRoundTrip:
    def test_bitwise_round_trip(self, tmp_path):
        backbone = build_backbone(tiny_backbone_cfg(), seed=1)
        path = tmp_path / "bb.npz"
        ckpt.save_backbone(backbone, path)
        tensors, configs = ckpt.load_archive(path)
        for name, arr in ckpt.backbone_to_canonical(backbone).items():
            assert np.array_equal(tensors[name], arr), name
        assert configs["backbone"]["variant"] == "mini"

    def test_manifest_sidecar(self, tmp_path):
        backbone = build_backbone(tiny_backbone_cfg(), seed=1)
        path = tmp_path / "bb.npz"
        ckpt.save_backbone(backbone, path)
        manifest = json.loads(ckpt.manifest_path(path).read_text())
        assert manifest["format"] == ckpt.ARCHIVE_FORMAT
        some = manifest["tensors"]["stem.conv"]
        assert some["shape"] == list(backbone.stem.conv.weight.shape)

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingFile):
            ckpt.load_archive(tmp_path / "nope.npz")

    def test_load_pretrained_round_trip(self, tmp_path):
        src = build_backbone(tiny_backbone_cfg(), seed=2)
        path = tmp_path / "bb.npz"
        ckpt.save_backbone(src, path)
        dst = build_backbone(tiny_backbone_cfg(), seed=99)
        report = ckpt.load_pretrained(path, dst)
        assert report.missing == []
        for (ka, va), (kb, vb) in zip(src.state_dict().items(), dst.state_dict().items()):
            if "num_batches_tracked" in ka:
                continue
            assert torch.equal(va, vb), ka

    def test_missing_tensor_named(self, tmp_path):
        backbone = build_backbone(tiny_backbone_cfg(), seed=0)
        tensors = ckpt.backbone_to_canonical(backbone)
        del tensors["stage2.block1.conv1"]
        with pytest.raises(MissingTensor) as exc_info:
            ckpt.apply_canonical(backbone, tensors, strict=True)
        assert "stage2.block1.conv1" in str(exc_info.value)

    def test_shape_mismatch_names_both_shapes(self, tmp_path):
        backbone = build_backbone(tiny_backbone_cfg(), seed=0)
        tensors = ckpt.backbone_to_canonical(backbone)
        tensors["stem.conv"] = np.zeros((1, 2, 3, 3), dtype=np.float32)
        with pytest.raises(ShapeMismatch) as exc_info:
            ckpt.apply_canonical(backbone, tensors, strict=True)
        message = str(exc_info.value)
        assert "stem.conv" in message
        assert "(1, 2, 3, 3)" in message

    def test_extra_tensors_reported_not_fatal(self, tmp_path):
        backbone = build_backbone(tiny_backbone_cfg(), seed=0)
        tensors = ckpt.backbone_to_canonical(backbone)
        tensors["unrelated.thing"] = np.zeros(3, dtype=np.float32)
        report = ckpt.apply_canonical(backbone, tensors, strict=True)
        assert "unrelated.thing" in report.ignored


class TestResolveWeights:
    def test_direct_file(self, tmp_path):
        target = tmp_path / "w.npz"
        cfg = BackboneConfig(variant="resnet18", pretrained=True, weights_path=str(target))
        assert ckpt.resolve_weights(cfg) == target

    def test_directory_convention(self, tmp_path):
        cfg = BackboneConfig(variant="resnet50", pretrained=True, weights_path=str(tmp_path))
        assert ckpt.resolve_weights(cfg) == tmp_path / "resnet50.npz"

    def test_missing_path_is_config_error(self):
        cfg = BackboneConfig(variant="resnet18", pretrained=True, weights_path=None)
        with pytest.raises(ConfigError):
            ckpt.resolve_weights(cfg)


class TestModelCheckpoint:
    def test_save_load_round_trip(self, tmp_path, rng):
        model = build_model(tiny_backbone_cfg(), tiny_seq_cfg(), seed=3).eval()
        path = tmp_path / "model.npz"
        ckpt.save_model(model, path, extra_configs={"note": {"k": 1}})
        loaded, configs = ckpt.load_model(path)
        loaded.eval()
        assert configs["note"] == {"k": 1}
        clips = torch.from_numpy(rng.random((2, 4, 3, 16, 16))).float()
        with torch.no_grad():
            assert torch.equal(model(clips), loaded(clips))

    def test_atomic_write_leaves_no_temp(self, tmp_path):
        model = build_model(tiny_backbone_cfg(), tiny_seq_cfg(), seed=0)
        path = tmp_path / "model.npz"
        ckpt.save_model(model, path)
        leftovers = [p for p in tmp_path.iterdir()
                     if p.name not in ("model.npz", "model.npz.json")]
        assert leftovers == []

    def test_missing_seq_tensor(self, tmp_path):
        import dataclasses

        model = build_model(tiny_backbone_cfg(), tiny_seq_cfg(), seed=0)
        tensors = ckpt.model_to_tensors(model)
        configs = {"backbone": dataclasses.asdict(model.backbone.cfg),
                   "seqmodel": dataclasses.asdict(model.cfg)}
        del tensors["seq.fc.weight"]
        path = tmp_path / "model.npz"
        ckpt.save_archive(path, tensors, configs)
        with pytest.raises(MissingTensor):
            ckpt.load_model(path)


class TestTorchvisionConversion:
    def test_resnet18_state_dict_maps_completely(self):
        import torchvision.models as tvm

        converter = load_converter()
        sd = tvm.resnet18(weights=None).state_dict()
        tensors = converter.convert_state_dict(sd, "resnet18")
        backbone = build_backbone(BackboneConfig(variant="resnet18", pretrained=False), seed=0)
        report = ckpt.apply_canonical(backbone, tensors, strict=True)
        assert report.missing == []
        assert report.ignored == []
        # spot-check a couple of real values made it through
        assert np.array_equal(tensors["stem.conv"], sd["conv1.weight"].numpy())
        assert np.array_equal(tensors["stage3.block1.shortcut.conv"],
                              sd["layer3.0.downsample.0.weight"].numpy())

    def test_resnet50_state_dict_maps_completely(self):
        import torchvision.models as tvm

        converter = load_converter()
        sd = tvm.resnet50(weights=None).state_dict()
        tensors = converter.convert_state_dict(sd, "resnet50")
        backbone = build_backbone(BackboneConfig(variant="resnet50", pretrained=False), seed=0)
        report = ckpt.apply_canonical(backbone, tensors, strict=True)
        assert report.missing == []
        assert report.ignored == []

    def test_classifier_dropped(self):
        import torchvision.models as tvm

        converter = load_converter()
        sd = tvm.resnet18(weights=None).state_dict()
        tensors = converter.convert_state_dict(sd, "resnet18")
        assert not any(k.startswith("fc") for k in tensors)

    def test_unknown_variant(self):
        converter = load_converter()
        with pytest.raises(ConfigError):
            converter.convert_state_dict({}, "vgg16")

    def test_cli_end_to_end_with_source_file(self, tmp_path):
        import torchvision.models as tvm

        converter = load_converter()
        sd = tvm.resnet18(weights=None).state_dict()
        src = tmp_path / "r18.pth"
        torch.save(sd, src)
        rc = converter.main(["--variant", "resnet18", "--source", str(src),
                             "--out", str(tmp_path / "weights")])
        assert rc == 0
        out = tmp_path / "weights" / "resnet18.npz"
        assert out.is_file()
        backbone = build_backbone(
            BackboneConfig(variant="resnet18", pretrained=True, weights_path=str(tmp_path / "weights")),
            seed=0,
        )
        report = ckpt.load_pretrained(ckpt.resolve_weights(backbone.cfg), backbone)
        assert report.missing == []
