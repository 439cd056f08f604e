"""Temporal model: projection, positional encoding, transformer encoder
stack, bidirectional LSTM and mean-pool classification head, plus the
end-to-end network that chains them behind a frame backbone.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from .backbone import ResNetBackbone, build_backbone
from .config import BackboneConfig, SeqModelConfig
from .exceptions import OddDimension, ShapeMismatch


def positional_encoding(t: int, d_model: int) -> np.ndarray:
    """Sinusoidal position matrix, float64.

    PE[t, 2i] = sin(t / 10000^(2i/d)), PE[t, 2i+1] = cos(t / 10000^(2i/d)).
    """
    if d_model % 2 != 0:
        raise OddDimension(f"d_model must be even, got {d_model}")
    positions = np.arange(t, dtype=np.float64)[:, None]
    i2 = np.arange(0, d_model, 2, dtype=np.float64)[None, :]
    angles = positions / np.power(10000.0, i2 / d_model)
    pe = np.empty((t, d_model), dtype=np.float64)
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return pe


class MultiHeadSelfAttention(nn.Module):
    """softmax(Q K^T / sqrt(d_k)) V per head, heads concatenated and
    linearly projected. No masking: every clip is a fixed T frames."""

    def __init__(self, d_model: int, num_heads: int):
        super().__init__()
        if d_model % num_heads != 0:
            raise ShapeMismatch(f"d_model {d_model} not divisible by num_heads {num_heads}")
        self.d_model = d_model
        self.num_heads = num_heads
        self.d_k = d_model // num_heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)

    def _split_heads(self, x: torch.Tensor) -> torch.Tensor:
        b, t, _ = x.shape
        return x.view(b, t, self.num_heads, self.d_k).transpose(1, 2)  # B,H,T,d_k

    def attention_weights(self, z: torch.Tensor) -> torch.Tensor:
        """Row-stochastic attention matrix, B x H x T x T."""
        q = self._split_heads(self.q_proj(z))
        k = self._split_heads(self.k_proj(z))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_k)
        return torch.softmax(scores, dim=-1)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.ndim != 3 or z.shape[-1] != self.d_model:
            raise ShapeMismatch(f"expected B x T x {self.d_model}, got {tuple(z.shape)}")
        b, t, _ = z.shape
        attn = self.attention_weights(z)
        v = self._split_heads(self.v_proj(z))
        ctx = attn @ v  # B,H,T,d_k
        ctx = ctx.transpose(1, 2).reshape(b, t, self.d_model)
        return self.out_proj(ctx)


class EncoderLayer(nn.Module):
    """Post-norm transformer layer: LN(z + MHSA(z)), then LN(a + FFN(a))."""

    def __init__(self, d_model: int, num_heads: int, ffn_dim: int, dropout: float = 0.0):
        super().__init__()
        self.mhsa = MultiHeadSelfAttention(d_model, num_heads)
        self.ln1 = nn.LayerNorm(d_model)
        self.ffn1 = nn.Linear(d_model, ffn_dim)
        self.ffn2 = nn.Linear(ffn_dim, d_model)
        self.ln2 = nn.LayerNorm(d_model)
        self.dropout = nn.Dropout(dropout) if dropout > 0 else nn.Identity()

    def ffn(self, x: torch.Tensor) -> torch.Tensor:
        return self.ffn2(self.dropout(torch.relu(self.ffn1(x))))

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        a = self.ln1(z + self.dropout(self.mhsa(z)))
        return self.ln2(a + self.dropout(self.ffn(a)))


class LSTMDirection(nn.Module):
    """Single-direction LSTM with explicit gate equations.

    Gate layout along the 4H axis: input, forget, cell, output.
    """

    def __init__(self, input_dim: int, hidden_dim: int):
        super().__init__()
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.weight_ih = nn.Parameter(torch.empty(4 * hidden_dim, input_dim))
        self.weight_hh = nn.Parameter(torch.empty(4 * hidden_dim, hidden_dim))
        self.bias = nn.Parameter(torch.empty(4 * hidden_dim))
        self.reset_parameters()

    def reset_parameters(self):
        bound = 1.0 / math.sqrt(self.hidden_dim)
        for p in self.parameters():
            nn.init.uniform_(p, -bound, bound)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 3 or x.shape[-1] != self.input_dim:
            raise ShapeMismatch(f"expected B x T x {self.input_dim}, got {tuple(x.shape)}")
        b, t, _ = x.shape
        h = x.new_zeros(b, self.hidden_dim)
        c = x.new_zeros(b, self.hidden_dim)
        pre_x = x @ self.weight_ih.t() + self.bias  # B,T,4H
        outputs = []
        for step in range(t):
            gates = pre_x[:, step] + h @ self.weight_hh.t()
            i, f, g, o = gates.chunk(4, dim=-1)
            i = torch.sigmoid(i)
            f = torch.sigmoid(f)
            g = torch.tanh(g)
            o = torch.sigmoid(o)
            c = f * c + i * g
            h = o * torch.tanh(c)
            outputs.append(h)
        return torch.stack(outputs, dim=1)


class BiLSTM(nn.Module):
    """Forward and backward passes concatenated per timestep.

    Unidirectional mode keeps the output width at 2 * lstm_hidden by doubling
    the single direction's hidden size, so downstream shapes never change.
    """

    def __init__(self, input_dim: int, hidden_dim: int, bidirectional: bool = True):
        super().__init__()
        self.bidirectional = bidirectional
        self.output_dim = 2 * hidden_dim
        if bidirectional:
            self.fwd = LSTMDirection(input_dim, hidden_dim)
            self.bwd = LSTMDirection(input_dim, hidden_dim)
        else:
            self.fwd = LSTMDirection(input_dim, 2 * hidden_dim)
            self.bwd = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if not self.bidirectional:
            return self.fwd(x)
        out_f = self.fwd(x)
        out_b = self.bwd(torch.flip(x, dims=(1,)))
        return torch.cat([out_f, torch.flip(out_b, dims=(1,))], dim=-1)


class SignTransformer(nn.Module):
    """Backbone features -> projection -> (+PE) -> encoder stack -> LSTM ->
    mean pool -> class logits."""

    def __init__(self, backbone: ResNetBackbone, cfg: SeqModelConfig):
        super().__init__()
        cfg.validate()
        if cfg.backbone_width != backbone.feature_dim:
            raise ShapeMismatch(
                f"seq config expects backbone width {cfg.backbone_width}, "
                f"backbone produces {backbone.feature_dim}"
            )
        self.cfg = cfg
        self.backbone = backbone
        self.proj = nn.Linear(cfg.backbone_width, cfg.d_model)
        self.encoder = nn.ModuleList(
            EncoderLayer(cfg.d_model, cfg.num_heads, cfg.ffn_dim, cfg.dropout)
            for _ in range(cfg.num_layers)
        )
        self.lstm = BiLSTM(cfg.d_model, cfg.lstm_hidden, cfg.bidirectional)
        self.fc = nn.Linear(self.lstm.output_dim, cfg.num_classes)
        self._pe_cache: dict[int, torch.Tensor] = {}

    def _pe(self, t: int, like: torch.Tensor) -> torch.Tensor:
        cached = self._pe_cache.get(t)
        if cached is None or cached.dtype != like.dtype:
            cached = torch.from_numpy(positional_encoding(t, self.cfg.d_model)).to(like.dtype)
            self._pe_cache[t] = cached
        return cached.to(like.device)

    def project(self, features: torch.Tensor) -> torch.Tensor:
        if features.shape[-1] != self.cfg.backbone_width:
            raise ShapeMismatch(
                f"expected feature width {self.cfg.backbone_width}, got {features.shape[-1]}"
            )
        return self.proj(features)

    def encode(self, z: torch.Tensor) -> torch.Tensor:
        if self.cfg.positional_encoding:
            z = z + self._pe(z.shape[1], z)[None]
        for layer in self.encoder:
            z = layer(z)
        return z

    def classify(self, lstm_out: torch.Tensor) -> torch.Tensor:
        return self.fc(lstm_out.mean(dim=1))

    def forward_intermediates(self, clips: torch.Tensor) -> dict[str, torch.Tensor]:
        """Forward pass keeping each stage's output, keyed by stage name."""
        if clips.ndim != 5:
            raise ShapeMismatch(f"expected B x T x 3 x H x W, got {tuple(clips.shape)}")
        b, t = clips.shape[:2]
        frames = clips.reshape(b * t, *clips.shape[2:])
        features = self.backbone(frames).reshape(b, t, -1)
        projected = self.project(features)
        encoded = self.encode(projected)
        lstm_out = self.lstm(encoded)
        logits = self.classify(lstm_out)
        return {
            "features": features,
            "projected": projected,
            "encoded": encoded,
            "lstm_out": lstm_out,
            "logits": logits,
        }

    def forward(self, clips: torch.Tensor) -> torch.Tensor:
        return self.forward_intermediates(clips)["logits"]

    def predict_probs(self, clips: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.forward(clips), dim=-1)


def build_model(backbone_cfg: BackboneConfig, seq_cfg: SeqModelConfig, seed: int | None = None) -> SignTransformer:
    """Assemble the full network; the seed fixes the random initialization."""
    if seed is not None:
        torch.manual_seed(seed)
    backbone = build_backbone(backbone_cfg)
    return SignTransformer(backbone, seq_cfg)
