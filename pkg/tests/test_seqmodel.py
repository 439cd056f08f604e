"""Sequence-model oracles: positional encoding, attention, LSTM gates."""

from __future__ import annotations

import math

import numpy as np
import pytest
import torch

from signflow.config import BackboneConfig, SeqModelConfig
from signflow.exceptions import OddDimension, ShapeMismatch
from signflow.seqmodel import (
    BiLSTM,
    EncoderLayer,
    LSTMDirection,
    MultiHeadSelfAttention,
    build_model,
    positional_encoding,
)

from .conftest import tiny_backbone_cfg, tiny_seq_cfg


def tiny_model(seed=0, **seq_kw):
    bb_cfg = tiny_backbone_cfg()
    seq_cfg = tiny_seq_cfg(**seq_kw)
    return build_model(bb_cfg, seq_cfg, seed=seed)


class TestPositionalEncoding:
    def test_row_zero(self):
        pe = positional_encoding(4, 8)
        assert np.allclose(pe[0, 0::2], 0.0)
        assert np.allclose(pe[0, 1::2], 1.0)

    def test_entry_1_0_is_sin_1(self):
        for d in (8, 64, 256):
            assert positional_encoding(4, d)[1, 0] == pytest.approx(math.sin(1.0), abs=1e-12)

    def test_scalar_loop_oracle(self):
        t, d = 32, 256
        pe = positional_encoding(t, d)
        expected = np.zeros((t, d))
        for pos in range(t):
            for i in range(d // 2):
                denom = 10000.0 ** (2 * i / d)
                expected[pos, 2 * i] = math.sin(pos / denom)
                expected[pos, 2 * i + 1] = math.cos(pos / denom)
        assert np.abs(pe - expected).max() < 1e-9

    def test_odd_dimension_rejected(self):
        with pytest.raises(OddDimension):
            positional_encoding(4, 7)

    def test_values_bounded(self):
        pe = positional_encoding(64, 32)
        assert np.abs(pe).max() <= 1.0 + 1e-12


class TestProjection:
    def test_zero_weight_constant_bias(self):
        model = tiny_model()
        with torch.no_grad():
            model.proj.weight.zero_()
            model.proj.bias.fill_(0.25)
            out = model.project(torch.rand(2, 5, 16))
        assert torch.allclose(out, torch.full_like(out, 0.25))

    def test_shape_contract(self):
        model = tiny_model()
        assert model.project(torch.rand(2, 5, 16)).shape == (2, 5, 16)

    def test_per_row_dot_oracle(self, rng):
        model = tiny_model().eval()
        x = torch.from_numpy(rng.random((2, 3, 16))).float()
        with torch.no_grad():
            got = model.project(x).numpy()
        w = model.proj.weight.detach().numpy()
        b = model.proj.bias.detach().numpy()
        for bi in range(2):
            for t in range(3):
                expected = x[bi, t].numpy() @ w.T + b
                assert np.allclose(got[bi, t], expected, atol=1e-6)


class TestAttention:
    def test_rows_sum_to_one(self, rng):
        mhsa = MultiHeadSelfAttention(16, 4)
        z = torch.from_numpy(rng.random((2, 7, 16))).float()
        with torch.no_grad():
            weights = mhsa.attention_weights(z)
        assert weights.shape == (2, 4, 7, 7)
        assert torch.allclose(weights.sum(dim=-1), torch.ones(2, 4, 7), atol=1e-6)

    def test_single_timestep(self, rng):
        mhsa = MultiHeadSelfAttention(8, 2).eval()
        z = torch.from_numpy(rng.random((1, 1, 8))).float()
        with torch.no_grad():
            weights = mhsa.attention_weights(z)
            out = mhsa(z)
            v = mhsa.v_proj(z)
            expected = mhsa.out_proj(v)
        assert torch.allclose(weights, torch.ones_like(weights))
        assert torch.allclose(out, expected, atol=1e-6)

    def test_zero_query_uniform_attention(self, rng):
        mhsa = MultiHeadSelfAttention(8, 2).eval()
        with torch.no_grad():
            mhsa.q_proj.weight.zero_()
            mhsa.q_proj.bias.zero_()
        z = torch.from_numpy(rng.random((1, 5, 8))).float()
        with torch.no_grad():
            out = mhsa(z)
            v_mean = mhsa.v_proj(z).mean(dim=1, keepdim=True).expand(-1, 5, -1)
            expected = mhsa.out_proj(v_mean)
        assert torch.allclose(out, expected, atol=1e-6)

    def test_head_split_shape_guard(self):
        with pytest.raises(Exception):
            MultiHeadSelfAttention(10, 3)


class TestEncoderLayer:
    def test_output_shape(self, rng):
        layer = EncoderLayer(16, 2, 32).eval()
        z = torch.from_numpy(rng.random((2, 5, 16))).float()
        with torch.no_grad():
            assert layer(z).shape == (2, 5, 16)

    def test_layernorm_statistics(self, rng):
        layer = EncoderLayer(16, 2, 32).eval()
        z = torch.from_numpy(rng.random((2, 5, 16))).float()
        with torch.no_grad():
            out = layer(z)
        # fresh LN has unit scale and zero shift, so outputs carry raw stats
        assert out.mean(dim=-1).abs().max().item() < 1e-5
        assert (out.var(dim=-1, unbiased=False) - 1).abs().max().item() < 1e-4

    def test_post_norm_composition(self, rng):
        layer = EncoderLayer(16, 2, 32).eval()
        z = torch.from_numpy(rng.random((2, 5, 16))).float()
        with torch.no_grad():
            a = layer.ln1(z + layer.mhsa(z))
            expected = layer.ln2(a + layer.ffn(a))
            assert torch.allclose(layer(z), expected, atol=1e-6)

    def test_permutation_equivariance_without_pe(self, rng):
        model = tiny_model(positional_encoding=False, num_layers=2).eval()
        z = torch.from_numpy(rng.random((2, 6, 16))).float()
        perm = torch.randperm(6)
        with torch.no_grad():
            out = model.encode(z)
            out_perm = model.encode(z[:, perm])
        assert torch.allclose(out[:, perm], out_perm, atol=1e-5)

    def test_pe_breaks_equivariance(self, rng):
        model = tiny_model(positional_encoding=True, num_layers=2).eval()
        z = torch.from_numpy(rng.random((2, 6, 16))).float()
        perm = torch.tensor([3, 0, 5, 1, 4, 2])
        with torch.no_grad():
            out = model.encode(z)
            out_perm = model.encode(z[:, perm])
        assert (out[:, perm] - out_perm).abs().max().item() > 1e-3


class TestLSTM:
    def test_zero_weights_zero_output(self):
        lstm = LSTMDirection(4, 3)
        with torch.no_grad():
            for p in lstm.parameters():
                p.zero_()
            out = lstm(torch.zeros(2, 5, 4))
        assert torch.allclose(out, torch.zeros(2, 5, 6)[:, :, :3])

    def test_time_reversal_duality(self, rng):
        lstm = LSTMDirection(4, 3).eval()
        x = torch.from_numpy(rng.random((2, 6, 4))).float()
        with torch.no_grad():
            fwd_on_reversed = lstm(torch.flip(x, dims=(1,)))
            expected = torch.flip(fwd_on_reversed, dims=(1,))
        bilstm = BiLSTM(4, 3)
        bilstm.bwd = lstm
        bilstm.fwd = lstm
        with torch.no_grad():
            out = bilstm(x)
        assert torch.allclose(out[:, :, 3:], expected, atol=1e-6)

    def test_scalar_gate_oracle(self, rng):
        hidden = 2
        lstm = LSTMDirection(3, hidden).eval()
        x = rng.random((1, 2, 3))
        with torch.no_grad():
            got = lstm(torch.from_numpy(x).float()).numpy()[0]

        w_ih = lstm.weight_ih.detach().numpy().astype(np.float64)
        w_hh = lstm.weight_hh.detach().numpy().astype(np.float64)
        bias = lstm.bias.detach().numpy().astype(np.float64)

        def sigmoid(v):
            return 1.0 / (1.0 + np.exp(-v))

        h = np.zeros(hidden)
        c = np.zeros(hidden)
        expected = []
        for t in range(2):
            gates = w_ih @ x[0, t] + w_hh @ h + bias
            i = sigmoid(gates[0:hidden])
            f = sigmoid(gates[hidden:2 * hidden])
            g = np.tanh(gates[2 * hidden:3 * hidden])
            o = sigmoid(gates[3 * hidden:4 * hidden])
            c = f * c + i * g
            h = o * np.tanh(c)
            expected.append(h.copy())
        assert np.abs(got - np.array(expected)).max() < 1e-6

    def test_bidirectional_concat_layout(self, rng):
        bilstm = BiLSTM(4, 3).eval()
        x = torch.from_numpy(rng.random((2, 5, 4))).float()
        with torch.no_grad():
            out = bilstm(x)
            fwd_only = bilstm.fwd(x)
        assert out.shape == (2, 5, 6)
        assert torch.allclose(out[:, :, :3], fwd_only, atol=1e-7)

    def test_unidirectional_width_preserved(self, rng):
        uni = BiLSTM(4, 3, bidirectional=False).eval()
        x = torch.from_numpy(rng.random((2, 5, 4))).float()
        with torch.no_grad():
            out = uni(x)
        assert out.shape == (2, 5, 6)
        assert uni.output_dim == 6
        assert uni.bwd is None

    def test_rank_guard(self):
        with pytest.raises(ShapeMismatch):
            LSTMDirection(4, 3)(torch.zeros(2, 4))


class TestClassify:
    def test_probs_normalized(self, rng):
        model = tiny_model().eval()
        clips = torch.from_numpy(rng.random((2, 4, 3, 16, 16))).float()
        with torch.no_grad():
            probs = model.predict_probs(clips)
        assert probs.shape == (2, 4)
        assert torch.allclose(probs.sum(dim=-1), torch.ones(2), atol=1e-6)
        assert (probs > 0).all() and (probs < 1).all()

    def test_zero_head_uniform(self, rng):
        model = tiny_model().eval()
        with torch.no_grad():
            model.fc.weight.zero_()
            model.fc.bias.zero_()
            probs = model.predict_probs(torch.from_numpy(rng.random((2, 4, 3, 16, 16))).float())
        assert torch.allclose(probs, torch.full_like(probs, 1 / 4), atol=1e-7)

    def test_mean_pool_linearity(self, rng):
        model = tiny_model().eval()
        l1 = torch.from_numpy(rng.random((2, 5, 16))).float()
        l2 = torch.from_numpy(rng.random((2, 5, 16))).float()
        alpha, beta = 0.7, 1.9
        with torch.no_grad():
            lhs = model.classify(alpha * l1 + beta * l2)
            rhs = (alpha * model.classify(l1) + beta * model.classify(l2)
                   - (alpha + beta - 1) * model.fc.bias)
        assert torch.allclose(lhs, rhs, atol=1e-5)

    def test_argmax_invariant_to_logit_shift(self, rng):
        logits = torch.from_numpy(rng.random((4, 6))).float()
        shifted = logits + 123.456
        assert torch.equal(logits.argmax(dim=-1), shifted.argmax(dim=-1))


class TestModelForward:
    def test_logit_shape(self, rng):
        model = tiny_model().eval()
        clips = torch.from_numpy(rng.random((2, 16, 3, 16, 16))).float()
        with torch.no_grad():
            assert model(clips).shape == (2, 4)

    def test_num_layers_zero(self, rng):
        model = tiny_model(num_layers=0).eval()
        clips = torch.from_numpy(rng.random((2, 4, 3, 16, 16))).float()
        with torch.no_grad():
            out = model(clips)
        assert out.shape == (2, 4)
        assert torch.isfinite(out).all()

    def test_eval_bitwise_stable(self, rng):
        model = tiny_model().eval()
        clips = torch.from_numpy(rng.random((2, 4, 3, 16, 16))).float()
        with torch.no_grad():
            assert torch.equal(model(clips), model(clips))

    def test_intermediate_chain(self, rng):
        model = tiny_model().eval()
        clips = torch.from_numpy(rng.random((2, 6, 3, 16, 16))).float()
        with torch.no_grad():
            inter = model.forward_intermediates(clips)
        assert inter["features"].shape == (2, 6, 16)
        assert inter["projected"].shape == (2, 6, 16)
        assert inter["encoded"].shape == (2, 6, 16)
        assert inter["lstm_out"].shape == (2, 6, 16)
        assert inter["logits"].shape == (2, 4)

    def test_pe_disabled_passthrough(self, rng):
        model = tiny_model(positional_encoding=False, num_layers=0).eval()
        z = torch.from_numpy(rng.random((2, 5, 16))).float()
        with torch.no_grad():
            assert torch.equal(model.encode(z), z)

    def test_rank_guard(self):
        model = tiny_model()
        with pytest.raises(ShapeMismatch):
            model(torch.rand(4, 3, 16, 16))

    def test_build_determinism(self):
        a, b = tiny_model(seed=2), tiny_model(seed=2)
        for (ka, va), (kb, vb) in zip(a.state_dict().items(), b.state_dict().items()):
            assert ka == kb and torch.equal(va, vb), ka
