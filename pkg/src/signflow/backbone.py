"""Per-frame convolutional backbones.

Three variants share one skeleton: resnet18 (basic blocks, 512-dim output),
resnet50 (bottleneck blocks, 2048-dim output) and "mini", a two-block stub
for desk-scale tests (output width 2 * mini_width). Submodules are named so
state-dict keys line up with the canonical checkpoint names used in
checkpoint.py (stem.conv, stage3.block2.bn1, ...).
"""

from __future__ import annotations

from collections import OrderedDict

import torch
from torch import nn

from .config import BackboneConfig
from .exceptions import ShapeMismatch

RESNET18_PARAM_COUNT = 11_176_512  # trainable tensors, classifier removed


def conv3x3(in_ch: int, out_ch: int, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=stride, padding=1, bias=False)


def conv1x1(in_ch: int, out_ch: int, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(in_ch, out_ch, kernel_size=1, stride=stride, bias=False)


class Shortcut(nn.Module):
    """Projection shortcut: 1x1 conv + batch norm."""

    def __init__(self, in_ch, out_ch, stride, bn_momentum, bn_eps):
        super().__init__()
        self.conv = conv1x1(in_ch, out_ch, stride)
        self.bn = nn.BatchNorm2d(out_ch, momentum=bn_momentum, eps=bn_eps)

    def forward(self, x):
        return self.bn(self.conv(x))


class ResidualBlock(nn.Module):
    """Basic block: y = ReLU(shortcut(x) + BN(conv(ReLU(BN(conv(x))))))."""

    expansion = 1

    def __init__(self, in_ch, out_ch, stride=1, bn_momentum=0.1, bn_eps=1e-5):
        super().__init__()
        self.conv1 = conv3x3(in_ch, out_ch, stride)
        self.bn1 = nn.BatchNorm2d(out_ch, momentum=bn_momentum, eps=bn_eps)
        self.conv2 = conv3x3(out_ch, out_ch)
        self.bn2 = nn.BatchNorm2d(out_ch, momentum=bn_momentum, eps=bn_eps)
        if stride != 1 or in_ch != out_ch:
            self.shortcut = Shortcut(in_ch, out_ch, stride, bn_momentum, bn_eps)
        else:
            self.shortcut = None

    def forward(self, x):
        out = torch.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        out = out + (self.shortcut(x) if self.shortcut is not None else x)
        return torch.relu(out)


class BottleneckBlock(nn.Module):
    """Bottleneck block: 1x1 reduce, 3x3, 1x1 expand (x4)."""

    expansion = 4

    def __init__(self, in_ch, width, stride=1, bn_momentum=0.1, bn_eps=1e-5):
        super().__init__()
        out_ch = width * self.expansion
        self.conv1 = conv1x1(in_ch, width)
        self.bn1 = nn.BatchNorm2d(width, momentum=bn_momentum, eps=bn_eps)
        self.conv2 = conv3x3(width, width, stride)
        self.bn2 = nn.BatchNorm2d(width, momentum=bn_momentum, eps=bn_eps)
        self.conv3 = conv1x1(width, out_ch)
        self.bn3 = nn.BatchNorm2d(out_ch, momentum=bn_momentum, eps=bn_eps)
        if stride != 1 or in_ch != out_ch:
            self.shortcut = Shortcut(in_ch, out_ch, stride, bn_momentum, bn_eps)
        else:
            self.shortcut = None

    def forward(self, x):
        out = torch.relu(self.bn1(self.conv1(x)))
        out = torch.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        out = out + (self.shortcut(x) if self.shortcut is not None else x)
        return torch.relu(out)


class Stem(nn.Module):
    def __init__(self, out_ch, kernel, stride, padding, pool, bn_momentum, bn_eps):
        super().__init__()
        self.conv = nn.Conv2d(3, out_ch, kernel_size=kernel, stride=stride, padding=padding, bias=False)
        self.bn = nn.BatchNorm2d(out_ch, momentum=bn_momentum, eps=bn_eps)
        self.pool = nn.MaxPool2d(kernel_size=3, stride=2, padding=1) if pool else None

    def forward(self, x):
        out = torch.relu(self.bn(self.conv(x)))
        if self.pool is not None:
            out = self.pool(out)
        return out


# variant -> (block class, blocks per stage, stage widths, stem spec)
_VARIANTS = {
    "resnet18": (ResidualBlock, (2, 2, 2, 2), (64, 128, 256, 512), (64, 7, 2, 3, True)),
    "resnet50": (BottleneckBlock, (3, 4, 6, 3), (64, 128, 256, 512), (64, 7, 2, 3, True)),
}


class ResNetBackbone(nn.Module):
    """Stem -> residual stages -> global average pool, one vector per frame."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        bn_kw = dict(bn_momentum=cfg.bn_momentum, bn_eps=cfg.bn_eps)

        if cfg.variant == "mini":
            w = cfg.mini_width
            self.stem = Stem(w, kernel=3, stride=1, padding=1, pool=False,
                             bn_momentum=cfg.bn_momentum, bn_eps=cfg.bn_eps)
            stage_specs = [(ResidualBlock, w, w, 1, 1), (ResidualBlock, w, 2 * w, 2, 1)]
            stages = []
            for block_cls, in_ch, out_ch, stride, n_blocks in stage_specs:
                blocks = OrderedDict()
                for k in range(n_blocks):
                    blocks[f"block{k + 1}"] = block_cls(in_ch if k == 0 else out_ch, out_ch,
                                                        stride if k == 0 else 1, **bn_kw)
                stages.append(nn.Sequential(blocks))
            self.feature_dim = 2 * w
        else:
            block_cls, depths, widths, (stem_ch, k, s, p, pool) = _VARIANTS[cfg.variant]
            self.stem = Stem(stem_ch, kernel=k, stride=s, padding=p, pool=pool,
                             bn_momentum=cfg.bn_momentum, bn_eps=cfg.bn_eps)
            stages = []
            in_ch = stem_ch
            for stage_i, (depth, width) in enumerate(zip(depths, widths)):
                blocks = OrderedDict()
                stride = 1 if stage_i == 0 else 2
                for b in range(depth):
                    blocks[f"block{b + 1}"] = block_cls(in_ch, width, stride if b == 0 else 1, **bn_kw)
                    in_ch = width * block_cls.expansion
                stages.append(nn.Sequential(blocks))
            self.feature_dim = in_ch

        # register stages as stage1..stageN so state-dict keys line up with
        # the canonical checkpoint names
        self.stage_names = [f"stage{i + 1}" for i in range(len(stages))]
        for name, stage in zip(self.stage_names, stages):
            self.add_module(name, stage)

        self.reset_parameters()
        self.frozen = cfg.freeze
        if self.frozen:
            for p in self.parameters():
                p.requires_grad_(False)
            super().train(False)

    @property
    def stages(self) -> list[nn.Sequential]:
        return [getattr(self, name) for name in self.stage_names]

    def reset_parameters(self):
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
            elif isinstance(m, nn.BatchNorm2d):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)

    def train(self, mode: bool = True):
        if self.frozen:
            return super().train(False)
        return super().train(mode)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeMismatch(f"backbone expects N x 3 x H x W, got {tuple(x.shape)}")
        out = self.stem(x)
        for stage in self.stages:
            out = stage(out)
        return out.mean(dim=(2, 3))

    def spatial_trace(self, x: torch.Tensor) -> list[tuple[int, int]]:
        """Spatial sizes after the stem and each stage, for shape audits."""
        trace = []
        out = self.stem(x)
        trace.append(tuple(out.shape[-2:]))
        for stage in self.stages:
            out = stage(out)
            trace.append(tuple(out.shape[-2:]))
        return trace


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def build_backbone(cfg: BackboneConfig, seed: int | None = None) -> ResNetBackbone:
    """Construct a backbone; seeding makes the random init reproducible.

    Pretrained weights are applied separately via checkpoint.load_pretrained
    so that construction never touches the filesystem.
    """
    if seed is not None:
        torch.manual_seed(seed)
    return ResNetBackbone(cfg)
