"""Optimizer behavior against a scalar reference simulation; checkpoint laws."""

import numpy as np
import pytest

from tiva import nn
from tiva.nn import AdamW, Tensor


def reference_adamw(x0, grad_fn, lr, steps, betas=(0.9, 0.999), eps=1e-8, wd=0.0):
    """Independent scalar AdamW simulation used as the oracle."""
    x = np.array(x0, dtype=np.float64)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = betas[0] * m + (1 - betas[0]) * g
        v = betas[1] * v + (1 - betas[1]) * g * g
        mh = m / (1 - betas[0] ** t)
        vh = v / (1 - betas[1] ** t)
        x = x - lr * wd * x - lr * mh / (np.sqrt(vh) + eps)
    return x


def test_zero_grad_leaves_params_unchanged():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = AdamW({"p": p}, lr=0.1)
    before = p.data.copy()
    assert opt.step({"p": np.zeros(2, np.float32)})
    np.testing.assert_array_equal(p.data, before)
    assert opt.state.step_count == 1


def test_single_step_descends_quadratic():
    p = Tensor(np.array([1.0]), requires_grad=True)
    opt = AdamW({"p": p}, lr=0.1)
    loss = (p * p).sum()
    loss.backward()
    opt.step()
    assert float(p.data[0]) < 1.0


def test_quadratic_convergence_matches_reference():
    # f(x) = x0^2 + 4 x1^2; engine trajectory must match the scalar oracle
    p = Tensor(np.array([1.0, -1.5]), requires_grad=True)
    opt = AdamW({"p": p}, lr=0.05)
    scale = np.array([1.0, 4.0], dtype=np.float32)
    for _ in range(200):
        opt.zero_grad()
        loss = (p * p * Tensor(scale)).sum()
        loss.backward()
        opt.step()
    ref = reference_adamw(
        np.array([1.0, -1.5]), lambda x: 2 * np.array([1.0, 4.0]) * x, lr=0.05, steps=200)
    np.testing.assert_allclose(p.data, ref, atol=1e-4)
    final_loss = float((p.data ** 2 * scale).sum())
    assert final_loss < 1e-3


def test_nan_gradient_skips_step():
    p = Tensor(np.array([1.0]), requires_grad=True)
    opt = AdamW({"p": p}, lr=0.1)
    ok = opt.step({"p": np.array([np.nan], np.float32)})
    assert not ok
    assert opt.skipped_steps == 1
    assert opt.state.step_count == 0
    np.testing.assert_array_equal(p.data, [1.0])


def test_checkpoint_roundtrip_bit_identical():
    rng = np.random.default_rng(0)
    params = {"a.weight": rng.standard_normal((3, 4)).astype(np.float32),
              "b.bias": rng.standard_normal(7).astype(np.float32),
              "scalar": np.float32(3.5) * np.ones((), np.float32)}
    meta = {"config_hash": "abc123", "stage": "lsm"}
    blob = nn.save_checkpoint(params, meta)
    loaded, meta2 = nn.load_checkpoint(blob)
    assert meta2 == meta
    assert set(loaded) == set(params)
    for k in params:
        assert loaded[k].shape == np.asarray(params[k]).shape
        np.testing.assert_array_equal(loaded[k], params[k])


def test_checkpoint_truncation_rejected():
    blob = nn.save_checkpoint({"w": np.ones((2, 2), np.float32)}, {"config_hash": "x"})
    with pytest.raises(nn.CheckpointError, match="truncated"):
        nn.load_checkpoint(blob[:-3])


def test_checkpoint_bad_magic_rejected():
    with pytest.raises(nn.CheckpointError, match="magic"):
        nn.load_checkpoint(b"NOPE" + b"\x00" * 32)


def test_checkpoint_config_hash_guard():
    meta = {"config_hash": "aaaa"}
    nn.check_config_hash(meta, "aaaa")
    with pytest.raises(nn.CheckpointError, match="config hash"):
        nn.check_config_hash(meta, "bbbb")
