"""Attention contract: causality, QK-norm invariance, weight arithmetic."""

import numpy as np
import pytest

from tiva import nn
from tiva.nn import AttentionConfig, Tensor


CFG = AttentionConfig(model_dim=8, num_heads=2, head_dim=4)


def test_config_dim_mismatch_rejected():
    with pytest.raises(ValueError):
        AttentionConfig(model_dim=8, num_heads=3, head_dim=4)


def test_single_position_causal_returns_own_value():
    rng = np.random.default_rng(0)
    q = Tensor(rng.standard_normal((1, 8)).astype(np.float32))
    k = Tensor(rng.standard_normal((1, 8)).astype(np.float32))
    v = Tensor(rng.standard_normal((1, 8)).astype(np.float32))
    out = nn.attention(q, k, v, CFG)
    np.testing.assert_allclose(out.data, v.data, rtol=1e-6)


def test_qk_norm_scale_invariance():
    rng = np.random.default_rng(1)
    q = rng.standard_normal((4, 8)).astype(np.float32)
    k = rng.standard_normal((4, 8)).astype(np.float32)
    v = rng.standard_normal((4, 8)).astype(np.float32)
    base = nn.attention(Tensor(q), Tensor(k), Tensor(v), CFG)
    scaled = nn.attention(Tensor(q * 1000.0), Tensor(k * 7.0), Tensor(v), CFG)
    np.testing.assert_allclose(base.data, scaled.data, rtol=2e-4, atol=1e-5)


def test_uniform_keys_average_all_positions():
    # all queries/keys identical -> equal logits -> weights 1/4 each at position 4
    t = 4
    q = Tensor(np.ones((t, 8), np.float32))
    k = Tensor(np.ones((t, 8), np.float32))
    v = Tensor(np.eye(t, 8).astype(np.float32))
    out = nn.attention(q, k, v, CFG)
    np.testing.assert_allclose(out.data[-1, :t], np.full(t, 0.25), atol=1e-6)


def test_causal_output_invariant_to_future_inputs():
    rng = np.random.default_rng(2)
    attn = nn.MultiHeadAttention(np.random.default_rng(3), CFG)
    x = rng.standard_normal((6, 8)).astype(np.float32)
    pos = np.arange(6)
    with nn.no_grad():
        base = attn(Tensor(x), pos).data.copy()
        x2 = x.copy()
        x2[4:] += rng.standard_normal((2, 8))
        pert = attn(Tensor(x2), pos).data
    np.testing.assert_array_equal(base[:4], pert[:4])


def test_rope_preserves_qknorm_invariance_and_relativity():
    cos, sin = nn.rope_tables(np.arange(5), 4)
    x = Tensor(np.random.default_rng(4).standard_normal((5, 4)).astype(np.float32))
    rot = nn.apply_rope(x.reshape(1, 5, 4), cos, sin).data[0]
    np.testing.assert_allclose(np.linalg.norm(rot, axis=-1),
                               np.linalg.norm(x.data, axis=-1), rtol=1e-5)


def test_attention_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        nn.attention(Tensor(np.ones((3, 6))), Tensor(np.ones((3, 8))),
                     Tensor(np.ones((3, 8))), CFG)


def test_transformer_block_causality_bitwise():
    rng = np.random.default_rng(5)
    block = nn.TransformerBlock(np.random.default_rng(6), CFG)
    x = rng.standard_normal((1, 7, 8)).astype(np.float32)
    pos = np.arange(7)
    with nn.no_grad():
        a = block(Tensor(x), pos).data.copy()
        x2 = x.copy()
        x2[:, 5:] = 99.0
        b = block(Tensor(x2), pos).data
    np.testing.assert_array_equal(a[:, :5], b[:, :5])
