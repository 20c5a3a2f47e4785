"""Pure-numpy decode core: KV-cached transformer stack for generation.

Same math as the training blocks (RMSNorm -> multi-query attention with
per-head L2 QK norm, learned temperatures, rotary positions -> SiLU MLP),
restructured around a ring-buffer KV cache with a sliding position window.
K/V carry a single shared head, so all query heads' scores against the cache
run as one matrix product and the cache stays small enough to stream within
a frame budget.  The compiled core in `_core.pyx` implements this interface
identically; parity is covered by tests and the core benchmark.
"""

from __future__ import annotations

import numpy as np

BACKEND = "numpy"


def rope_rotate(x: np.ndarray, positions: np.ndarray, base: float = 10000.0) -> np.ndarray:
    """x [n, heads, dh] -> rotated copy; pairs (2j, 2j+1) per head."""
    n, h, dh = x.shape
    half = dh // 2
    freqs = base ** (-np.arange(half, dtype=np.float64) / half)
    ang = positions.astype(np.float64)[:, None] * freqs[None, :]
    cos = np.cos(ang).astype(np.float32)[:, None, :]
    sin = np.sin(ang).astype(np.float32)[:, None, :]
    x1 = x[:, :, 0::2]
    x2 = x[:, :, 1::2]
    out = np.empty_like(x)
    out[:, :, 0::2] = x1 * cos - x2 * sin
    out[:, :, 1::2] = x1 * sin + x2 * cos
    return out


class KVDecoder:
    """Stack of causal blocks over a ring-buffer cache (one K/V head).

    `decode(x, positions)` appends the new tokens and returns hidden states;
    `set_window(start)` hides cached positions below `start` from attention.
    Positions must arrive strictly increasing by 1.
    """

    def __init__(self, weights: dict, capacity: int):
        self.layers = weights["layers"]
        dims = weights["dims"]
        self.d = dims["model_dim"]
        self.h = dims["heads"]
        self.dh = dims["head_dim"]
        self.final_norm = weights.get("final_norm")
        self.capacity = capacity
        nl = len(self.layers)
        self.k_cache = np.zeros((nl, capacity, self.dh), np.float32)
        self.v_cache = np.zeros((nl, capacity, self.dh), np.float32)
        self.pos_buf = np.full(capacity, -1, np.int64)
        self.window_start = 0
        self.next_pos = 0

    def reset(self) -> None:
        self.pos_buf[:] = -1
        self.window_start = 0
        self.next_pos = 0

    def set_window(self, start: int) -> None:
        self.window_start = start

    @staticmethod
    def _rmsnorm(x: np.ndarray, w: np.ndarray, eps: float = 1e-5) -> np.ndarray:
        ms = (x * x).mean(axis=-1, keepdims=True)
        return x * w / np.sqrt(ms + eps)

    def decode(self, x: np.ndarray, positions: np.ndarray) -> np.ndarray:
        x = np.asarray(x, np.float32).copy()
        positions = np.asarray(positions, np.int64)
        n = x.shape[0]
        h, dh = self.h, self.dh
        rows = positions % self.capacity
        self.pos_buf[rows] = positions
        # additive mask [n, cap]: 0 where visible, -inf elsewhere
        visible = (self.pos_buf[None, :] >= self.window_start) \
            & (self.pos_buf[None, :] <= positions[:, None])
        bias = np.where(visible, np.float32(0), np.float32(-np.inf))
        bias_h = np.repeat(bias, h, axis=0)  # rows grouped per token
        for li, lw in enumerate(self.layers):
            xn = self._rmsnorm(x, lw["attn_norm"])
            q = (xn @ lw["wq"] + lw["bq"]).reshape(n, h, dh)
            k = (xn @ lw["wk"] + lw["bk"]).reshape(n, 1, dh)
            v = xn @ lw["wv"] + lw["bv"]
            q = q / np.sqrt((q * q).sum(-1, keepdims=True) + 1e-6)
            k = k / np.sqrt((k * k).sum(-1, keepdims=True) + 1e-6)
            q = q * lw["temp"][None, :, None]
            q = rope_rotate(q, positions)
            k = rope_rotate(k, positions)
            self.k_cache[li][rows] = k[:, 0, :]
            self.v_cache[li][rows] = v
            scores = q.reshape(n * h, dh) @ self.k_cache[li].T + bias_h
            scores -= scores.max(axis=1, keepdims=True)
            with np.errstate(over="ignore"):
                e = np.exp(scores)
            p = e / e.sum(axis=1, keepdims=True)
            att = (p @ self.v_cache[li]).reshape(n, h * dh)
            x = x + att @ lw["wo"] + lw["bo"]
            xn = self._rmsnorm(x, lw["ff_norm"])
            hdn = xn @ lw["w_up"] + lw["b_up"]
            with np.errstate(over="ignore"):
                hdn = hdn * (1.0 / (1.0 + np.exp(-hdn)))
            x = x + hdn @ lw["w_down"] + lw["b_down"]
        self.next_pos = int(positions[-1]) + 1
        return x


def static_forward(weights: dict, x: np.ndarray, positions: np.ndarray | None = None,
                   causal: bool = False) -> np.ndarray:
    """Cache-free stack forward for encoder-style blocks (any kv layout)."""
    x = np.asarray(x, np.float32).copy()
    n = x.shape[0]
    dims = weights["dims"]
    h, dh, d = dims["heads"], dims["head_dim"], dims["model_dim"]
    for lw in weights["layers"]:
        kvh = lw["wk"].shape[1] // dh
        xn = KVDecoder._rmsnorm(x, lw["attn_norm"])
        q = (xn @ lw["wq"] + lw["bq"]).reshape(n, h, dh)
        k = (xn @ lw["wk"] + lw["bk"]).reshape(n, kvh, dh)
        v = (xn @ lw["wv"] + lw["bv"]).reshape(n, kvh, dh)
        q = q / np.sqrt((q * q).sum(-1, keepdims=True) + 1e-6)
        k = k / np.sqrt((k * k).sum(-1, keepdims=True) + 1e-6)
        q = q * lw["temp"][None, :, None]
        if positions is not None:
            q = rope_rotate(q, positions)
            k = rope_rotate(k, positions)
        out = np.empty((n, h, dh), np.float32)
        for hh in range(h):
            kk = k[:, hh % kvh, :]
            scores = q[:, hh, :] @ kk.T
            if causal:
                scores = np.where(np.tril(np.ones((n, n), bool)), scores,
                                  np.float32(-np.inf))
            scores -= scores.max(axis=1, keepdims=True)
            with np.errstate(over="ignore"):
                e = np.exp(scores)
            p = e / e.sum(axis=1, keepdims=True)
            out[:, hh, :] = p @ v[:, hh % kvh, :]
        x = x + out.reshape(n, d) @ lw["wo"] + lw["bo"]
        xn = KVDecoder._rmsnorm(x, lw["ff_norm"])
        hdn = xn @ lw["w_up"] + lw["b_up"]
        with np.errstate(over="ignore"):
            hdn = hdn * (1.0 / (1.0 + np.exp(-hdn)))
        x = x + hdn @ lw["w_down"] + lw["b_down"]
    return x
