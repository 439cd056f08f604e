#!/usr/bin/env python3
"""Convert a torchvision ResNet checkpoint into a signflow backbone archive.

signflow never downloads weights at runtime; BackboneConfig.weights_path
points at an archive produced once by this script. Typical usage:

    python3 scripts/convert_torchvision_backbone.py --variant resnet18 --out weights/
    python3 scripts/convert_torchvision_backbone.py --variant resnet50 \
        --source ~/.cache/torch/.../resnet50-xyz.pth --out weights/resnet50.npz

Without --source the script asks torchvision for its ImageNet weights
(network access may be required on first use). The converted archive is
validated by loading it into a freshly built backbone before it is written.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import torch

REPO_SRC = Path(__file__).resolve().parent.parent / "src"
if str(REPO_SRC) not in sys.path:
    sys.path.insert(0, str(REPO_SRC))

from signflow.backbone import build_backbone  # noqa: E402
from signflow.checkpoint import apply_canonical, save_archive  # noqa: E402
from signflow.config import BackboneConfig  # noqa: E402
from signflow.exceptions import ConfigError, DataError  # noqa: E402

# torchvision BN leaf names -> archive leaf names.
_BN_LEAF = {
    "weight": "scale",
    "bias": "shift",
    "running_mean": "mean",
    "running_var": "var",
}


def convert_state_dict(state_dict: dict, variant: str) -> dict[str, np.ndarray]:
    """Map torchvision ResNet parameter names onto canonical archive names.

    torchvision calls the stages ``layer1..layer4`` with zero-based blocks
    and folds the projection shortcut into ``downsample.0`` (conv) and
    ``downsample.1`` (batch norm); the classifier head and batch counters
    are dropped.
    """
    if variant not in ("resnet18", "resnet50"):
        raise ConfigError(f"no torchvision mapping for variant {variant!r}")
    out: dict[str, np.ndarray] = {}
    for key, value in state_dict.items():
        parts = key.split(".")
        if parts[-1] == "num_batches_tracked" or parts[0] == "fc":
            continue
        arr = value.detach().cpu().numpy() if isinstance(value, torch.Tensor) else np.asarray(value)
        if parts[0] == "conv1":
            out["stem.conv"] = arr
        elif parts[0] == "bn1":
            out[f"stem.bn.{_BN_LEAF[parts[1]]}"] = arr
        elif parts[0].startswith("layer"):
            stage = int(parts[0][len("layer"):])
            block = int(parts[1]) + 1
            prefix = f"stage{stage}.block{block}"
            inner = parts[2]
            if inner.startswith("conv"):
                out[f"{prefix}.{inner}"] = arr
            elif inner.startswith("bn"):
                out[f"{prefix}.{inner}.{_BN_LEAF[parts[3]]}"] = arr
            elif inner == "downsample" and parts[3] == "0":
                out[f"{prefix}.shortcut.conv"] = arr
            elif inner == "downsample" and parts[3] == "1":
                out[f"{prefix}.shortcut.bn.{_BN_LEAF[parts[4]]}"] = arr
            else:
                raise DataError(f"unrecognized torchvision key: {key}")
        else:
            raise DataError(f"unrecognized torchvision key: {key}")
    return out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--variant", choices=["resnet18", "resnet50"], required=True)
    parser.add_argument("--source", default=None,
                        help="Optional .pth state dict; defaults to torchvision's ImageNet weights.")
    parser.add_argument("--out", required=True,
                        help="Output .npz path, or a directory (uses <variant>.npz).")
    args = parser.parse_args(argv)

    if args.source:
        state_dict = torch.load(args.source, map_location="cpu", weights_only=True)
        if "state_dict" in state_dict:
            state_dict = state_dict["state_dict"]
    else:
        import torchvision.models as tvm

        builder = getattr(tvm, args.variant)
        state_dict = builder(weights="IMAGENET1K_V1").state_dict()

    tensors = convert_state_dict(state_dict, args.variant)
    cfg = BackboneConfig(variant=args.variant, pretrained=False)
    backbone = build_backbone(cfg, seed=0)
    report = apply_canonical(backbone, tensors, strict=True)

    out = Path(args.out)
    if out.suffix != ".npz":
        out = out / f"{args.variant}.npz"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_archive(out, tensors, configs={"backbone": {"variant": args.variant},
                                        "source": args.source or "torchvision"})
    print(f"wrote {len(report.loaded)} tensors -> {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
