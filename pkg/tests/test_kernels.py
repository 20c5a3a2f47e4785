"""Numpy core vs compiled core: numerical parity and identical semantics."""

import numpy as np
import pytest

from tiva.backbone import DuplexBackbone
from tiva.config import BackboneConfig
from tiva.fast import available_backends, get_decoder_class

HAVE_COMPILED = "compiled" in available_backends()


def make_weights(seed=0, layers=3, d=64, heads=4):
    cfg = BackboneConfig(layers=layers, model_dim=d, num_heads=heads)
    model = DuplexBackbone(cfg, seed=seed)
    w = model.export_core_weights()
    # give the zero-free attention something nontrivial
    rng = np.random.default_rng(seed + 1)
    for lw in w["layers"]:
        lw["temp"] = rng.uniform(2.0, 6.0, heads).astype(np.float32)
    return w


def drive(decoder, rng, chunks=((5, 0), (1, 5), (1, 6), (3, 7), (16, 10))):
    outs = []
    for n, p0 in chunks:
        x = rng.standard_normal((n, 64)).astype(np.float32)
        pos = np.arange(p0, p0 + n)
        outs.append(decoder.decode(x, pos))
    return np.concatenate(outs)


@pytest.mark.skipif(not HAVE_COMPILED, reason="compiled core not built")
def test_core_parity_basic():
    w = make_weights()
    a = get_decoder_class("numpy")(w, capacity=64)
    b = get_decoder_class("compiled")(w, capacity=64)
    ra = drive(a, np.random.default_rng(3))
    rb = drive(b, np.random.default_rng(3))
    np.testing.assert_allclose(ra, rb, rtol=2e-4, atol=2e-5)


@pytest.mark.skipif(not HAVE_COMPILED, reason="compiled core not built")
def test_core_parity_with_window_and_wraparound():
    w = make_weights(seed=4)
    cap = 48
    a = get_decoder_class("numpy")(w, capacity=cap)
    b = get_decoder_class("compiled")(w, capacity=cap)
    rng1, rng2 = np.random.default_rng(9), np.random.default_rng(9)
    pos = 0
    for step in range(12):
        n = 7
        if pos > 30:
            a.set_window(pos - 30)
            b.set_window(pos - 30)
        x = rng1.standard_normal((n, 64)).astype(np.float32)
        x2 = rng2.standard_normal((n, 64)).astype(np.float32)
        ra = a.decode(x, np.arange(pos, pos + n))
        rb = b.decode(x2, np.arange(pos, pos + n))
        np.testing.assert_allclose(ra, rb, rtol=5e-4, atol=5e-5)
        pos += n


@pytest.mark.skipif(not HAVE_COMPILED, reason="compiled core not built")
def test_compiled_reset_reproduces():
    w = make_weights(seed=1)
    dec = get_decoder_class("compiled")(w, capacity=64)
    r1 = drive(dec, np.random.default_rng(5))
    dec.reset()
    r2 = drive(dec, np.random.default_rng(5))
    np.testing.assert_array_equal(r1, r2)


def test_numpy_core_window_hides_old_positions():
    w = make_weights(seed=2)
    dec = get_decoder_class("numpy")(w, capacity=64)
    rng = np.random.default_rng(0)
    x0 = rng.standard_normal((4, 64)).astype(np.float32)
    dec.decode(x0, np.arange(4))
    x1 = rng.standard_normal((1, 64)).astype(np.float32)
    out_with_history = dec.decode(x1.copy(), np.array([4]))

    dec2 = get_decoder_class("numpy")(w, capacity=64)
    dec2.decode(x0, np.arange(4))
    dec2.set_window(4)  # hide everything before position 4
    out_hidden = dec2.decode(x1.copy(), np.array([4]))
    assert not np.allclose(out_with_history, out_hidden)

    dec3 = get_decoder_class("numpy")(w, capacity=64)
    dec3.set_window(4)
    out_fresh = dec3.decode(x1.copy(), np.array([4]))
    np.testing.assert_allclose(out_hidden, out_fresh, rtol=1e-5)
