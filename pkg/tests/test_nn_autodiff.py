"""Gradient soundness of the tensor engine against finite differences."""

import numpy as np
import pytest

from tiva import nn
from tiva.nn import Tensor

from gradcheck import check_gradients


def test_sum_of_squares_grad():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    loss = (x * x).sum()
    loss.backward()
    np.testing.assert_allclose(x.grad, [2.0, 4.0], rtol=1e-6)


def test_bilinear_grad():
    x = Tensor(np.array(3.0), requires_grad=True)
    y = Tensor(np.array(5.0), requires_grad=True)
    (x * y).backward()
    assert float(x.grad) == 5.0
    assert float(y.grad) == 3.0


def test_non_scalar_loss_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        (x * 2).backward()


def test_matmul_shape_mismatch_rejected():
    a = Tensor(np.ones((2, 3)))
    b = Tensor(np.ones((4, 2)))
    with pytest.raises(ValueError):
        _ = a @ b


def test_three_layer_network_gradcheck():
    rng = np.random.default_rng(0)
    w1 = rng.standard_normal((6, 8)) * 0.5
    w2 = rng.standard_normal((8, 8)) * 0.5
    w3 = rng.standard_normal((8, 3)) * 0.5
    x = rng.standard_normal((4, 6))

    def build(leaves):
        lw1, lw2, lw3 = leaves
        h = (Tensor(x) @ lw1).tanh()
        h = (h @ lw2).silu()
        return ((h @ lw3) ** 2.0).sum()

    check_gradients(build, [w1, w2, w3], rtol=1e-4)


@pytest.mark.parametrize("seed", range(4))
def test_randomized_graph_gradcheck(seed):
    """Random op chains, depth <= 4, dims <= 16."""
    rng = np.random.default_rng(seed)
    dims = (int(rng.integers(2, 16)), int(rng.integers(2, 16)))
    a = rng.standard_normal(dims)
    b = rng.standard_normal(dims)
    w = rng.standard_normal((dims[1], int(rng.integers(2, 16))))
    ops = rng.integers(0, 4, size=4)

    def build(leaves):
        la, lb, lw = leaves
        h = la * lb + la
        for op in ops:
            if op == 0:
                h = h.tanh()
            elif op == 1:
                h = h.sigmoid() * h
            elif op == 2:
                h = (h + lb).silu()
            else:
                h = h * 0.5 + lb * 0.1
        out = h @ lw
        return (out * out).mean()

    check_gradients(build, [a, b, w], rtol=1e-4)


def test_softmax_and_cross_entropy_gradcheck():
    rng = np.random.default_rng(1)
    logits = rng.standard_normal((5, 7))
    targets = rng.integers(0, 7, size=5)
    weights = np.array([1, 0, 1, 1, 0], dtype=np.float64)

    def build(leaves):
        return nn.cross_entropy(leaves[0], targets, weights)

    check_gradients(build, [logits], rtol=1e-4)


def test_rms_norm_gradcheck():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((3, 5))
    w = rng.standard_normal(5)

    def build(leaves):
        return (nn.rms_norm(leaves[0], leaves[1]) ** 2.0).sum()

    check_gradients(build, [x, w], rtol=1e-4)


def test_embedding_gradcheck():
    rng = np.random.default_rng(3)
    table = rng.standard_normal((6, 4))
    idx = np.array([0, 3, 3, 5])

    def build(leaves):
        return (nn.embedding(leaves[0], idx) ** 2.0).sum()

    check_gradients(build, [table], rtol=1e-4)


def test_fused_attention_gradcheck():
    rng = np.random.default_rng(4)
    t, dh = 5, 4
    q = rng.standard_normal((2, t, dh))
    k = rng.standard_normal((2, t, dh))
    v = rng.standard_normal((2, t, dh))
    mask = nn.causal_mask(t, dtype=np.float64)

    def build(leaves):
        out = nn.causal_attention(leaves[0], leaves[1], leaves[2], 0.7, mask)
        return (out * out).sum()

    check_gradients(build, [q, k, v], rtol=1e-4)


def test_conv1d_gradcheck():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 3, 11))
    w = rng.standard_normal((4, 3, 3))
    b = rng.standard_normal(4)

    def build(leaves):
        out = nn.conv1d(leaves[0], leaves[1], leaves[2], stride=2, padding=1)
        return (out * out).sum()

    check_gradients(build, [x, w, b], rtol=1e-4)


def test_upsample_zero_and_pad_gradcheck():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((1, 2, 6))

    def build(leaves):
        out = nn.pad_time(nn.upsample_zero(leaves[0], 3), 1, 2)
        return (out * out).sum()

    check_gradients(build, [x], rtol=1e-4)


def test_getitem_concat_stack_gradcheck():
    rng = np.random.default_rng(7)
    a = rng.standard_normal((4, 3))
    b = rng.standard_normal((2, 3))

    def build(leaves):
        la, lb = leaves
        c = nn.concat([la[0:2], lb], axis=0)
        s = nn.stack([c, c * 2.0], axis=0)
        return (s ** 2.0).sum()

    check_gradients(build, [a, b], rtol=1e-4)


def test_forward_backward_collects_named_grads():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    unused = Tensor(np.array([5.0]), requires_grad=True)
    loss = (x * x).sum()
    grads = nn.forward_backward(loss, {"x": x, "unused": unused})
    np.testing.assert_allclose(grads["x"], [2.0, 4.0], rtol=1e-6)
    np.testing.assert_allclose(grads["unused"], [0.0])
