"""Delay pattern laws: exact round trip, K=1 identity, mapping positions."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tiva.backbone.delay import (apply_delay, completed_steps, delayed_view,
                                 invert_delay)

PAD = 256


def test_k1_identity():
    grid = np.arange(12).reshape(12, 1)
    out = apply_delay(grid, PAD)
    np.testing.assert_array_equal(out, grid)
    np.testing.assert_array_equal(invert_delay(out), grid)


def test_enumerated_mapping_k3():
    # 1-indexed (frame 2, codebook 3) must appear at staggered step 4
    l, k = 4, 3
    grid = np.arange(l * k).reshape(l, k)
    out = apply_delay(grid, PAD)
    assert out.shape == (l + k - 1, k)
    assert out[3, 2] == grid[1, 2]  # 0-indexed equivalent of the law
    for t in range(out.shape[0]):
        for kb in range(k):
            src = t - kb
            if 0 <= src < l:
                assert out[t, kb] == grid[src, kb]
            else:
                assert out[t, kb] == PAD


@given(st.integers(1, 8), st.integers(1, 40), st.integers(0, 2**31 - 1))
@settings(max_examples=60, deadline=None)
def test_roundtrip_property(k, l, seed):
    rng = np.random.default_rng(seed)
    grid = rng.integers(0, 256, (l, k))
    np.testing.assert_array_equal(invert_delay(apply_delay(grid, PAD)), grid)


def test_delayed_view_prefix_of_apply():
    rng = np.random.default_rng(0)
    grid = rng.integers(0, 256, (10, 4))
    full = apply_delay(grid, PAD)
    view = delayed_view(grid, 7, PAD)
    np.testing.assert_array_equal(view, full[:7])


def test_completed_steps():
    assert completed_steps(0, 4) == 0
    assert completed_steps(3, 4) == 0
    assert completed_steps(4, 4) == 1
    assert completed_steps(12, 4) == 9
    assert completed_steps(5, 1) == 5
