"""Finite-difference verification of analytic gradients.

Runs the full network end to end in float64 on a tiny configuration and
compares autograd gradients against central finite differences on a sampled
subset of coordinates per parameter tensor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .config import BackboneConfig, SeqModelConfig
from .seqmodel import SignTransformer, build_model
from .training import weighted_ce


@dataclass
class GradCheckReport:
    tolerance: float
    max_rel_error: float = 0.0
    per_group: dict[str, float] = field(default_factory=dict)
    passed: bool = True
    coords_checked: int = 0


def tiny_setup(seed: int = 0, batch: int = 2, frames: int = 4, image_size: int = 8,
               num_classes: int = 3, freeze_backbone: bool = False):
    """The desk-scale end-to-end configuration used for gradient checks."""
    backbone_cfg = BackboneConfig(variant="mini", mini_width=4, pretrained=False,
                                  freeze=freeze_backbone)
    seq_cfg = SeqModelConfig(
        d_model=8,
        num_layers=1,
        num_heads=2,
        ffn_dim=16,
        lstm_hidden=4,
        num_classes=num_classes,
        backbone_width=backbone_cfg.feature_dim,
    )
    model = build_model(backbone_cfg, seq_cfg, seed=seed)
    rng = np.random.default_rng(seed)
    clips = rng.random((batch, frames, 3, image_size, image_size))
    labels = rng.integers(0, num_classes, size=batch)
    weights = np.linspace(0.5, 2.0, num_classes)
    return model, clips, labels, weights


def grad_check(
    model: SignTransformer,
    clips,
    labels,
    weights,
    tolerance: float = 1e-3,
    coords_per_group: int = 10,
    step: float = 1e-5,
    seed: int = 0,
    corrupt_group: str | None = None,
) -> GradCheckReport:
    """Compare autograd gradients to central finite differences.

    The model is evaluated in float64 and in eval mode, so batch norm uses
    its (frozen) running statistics and the loss is a pure function of the
    parameters. corrupt_group deliberately offsets one tensor's analytic
    gradient, for verifying that the checker itself can fail.
    """
    model = model.double()
    model.eval()
    clips_t = torch.as_tensor(np.asarray(clips), dtype=torch.float64)
    labels_t = torch.as_tensor(np.asarray(labels), dtype=torch.long)
    weights_t = torch.as_tensor(np.asarray(weights), dtype=torch.float64)

    def loss_value() -> torch.Tensor:
        return weighted_ce(model(clips_t), labels_t, weights_t)

    params = [(name, p) for name, p in model.named_parameters() if p.requires_grad]
    report = GradCheckReport(tolerance=tolerance)
    if not params:
        return report

    model.zero_grad()
    loss_value().backward()
    analytic = {name: p.grad.detach().clone() for name, p in params}
    if corrupt_group is not None:
        analytic[corrupt_group] = analytic[corrupt_group] + 1.0

    rng = np.random.default_rng(seed)
    with torch.no_grad():
        for name, p in params:
            flat = p.view(-1)
            n = flat.numel()
            coords = rng.choice(n, size=min(coords_per_group, n), replace=False)
            worst = 0.0
            for c in coords:
                c = int(c)
                original = flat[c].item()
                flat[c] = original + step
                plus = loss_value().item()
                flat[c] = original - step
                minus = loss_value().item()
                flat[c] = original
                fd = (plus - minus) / (2.0 * step)
                an = analytic[name].view(-1)[c].item()
                rel = abs(an - fd) / (abs(an) + abs(fd) + 1e-10)
                worst = max(worst, rel)
                report.coords_checked += 1
            report.per_group[name] = worst
            report.max_rel_error = max(report.max_rel_error, worst)

    report.passed = report.max_rel_error < tolerance
    return report
