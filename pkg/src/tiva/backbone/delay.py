"""Delay pattern: stagger codebook k by k-1 steps so one autoregressive step
emits all K codebooks in parallel while inter-codebook dependencies survive.

`apply_delay` grows the grid by K-1 ramp-out steps so `invert_delay` is an
exact inverse.  `delayed_view` is the fixed-length variant used inside frame
blocks, where the stream is semi-infinite and the ramp-out never materializes
(emission simply lags one video frame).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class DelayPattern:
    num_codebooks: int

    def __post_init__(self):
        if self.num_codebooks < 1:
            raise ValueError("need at least one codebook")

    def delay_of(self, codebook: int) -> int:
        return codebook  # 0-indexed codebook k is delayed k steps


def apply_delay(tokens: np.ndarray, pad: int) -> np.ndarray:
    """[L, K] -> [L+K-1, K]; out[t, k] = tokens[t-k, k], `pad` elsewhere."""
    tokens = np.asarray(tokens)
    l, k = tokens.shape
    out = np.full((l + k - 1, k), pad, dtype=tokens.dtype)
    for kb in range(k):
        out[kb:kb + l, kb] = tokens[:, kb]
    return out


def invert_delay(staggered: np.ndarray, num_steps: int | None = None) -> np.ndarray:
    """Inverse of apply_delay: [S, K] -> [S-K+1, K]."""
    staggered = np.asarray(staggered)
    s, k = staggered.shape
    l = s - k + 1 if num_steps is None else num_steps
    if l < 0:
        raise ValueError("staggered grid shorter than the delay ramp")
    out = np.empty((l, k), dtype=staggered.dtype)
    for kb in range(k):
        out[:, kb] = staggered[kb:kb + l, kb]
    return out


def delayed_view(tokens: np.ndarray, length: int, pad: int) -> np.ndarray:
    """Fixed-length delayed targets: out[t, k] = tokens[t-k, k] for t < length.

    Rows with t-k < 0 (ramp-in) or t-k >= len(tokens) carry `pad`.
    """
    tokens = np.asarray(tokens)
    l, k = tokens.shape
    out = np.full((length, k), pad, dtype=tokens.dtype)
    for kb in range(k):
        hi = min(length, l + kb)
        if hi > kb:
            out[kb:hi, kb] = tokens[:hi - kb, kb]
    return out


def completed_steps(delayed_len: int, num_codebooks: int) -> int:
    """How many raw codec steps are fully emitted after `delayed_len` slots."""
    return max(0, delayed_len - num_codebooks + 1)
