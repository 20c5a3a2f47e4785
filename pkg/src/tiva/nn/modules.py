"""Transformer building blocks on top of the autodiff Tensor.

Initialization is truncated normal (std 0.02, clipped at 2 sigma) with zero
biases; every constructor takes an explicit numpy Generator so there is no
global RNG anywhere in the stack.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, causal_attention, embedding, rms_norm


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02,
                 dtype=np.float32) -> np.ndarray:
    x = rng.standard_normal(shape) * std
    return np.clip(x, -2 * std, 2 * std).astype(dtype)


class Module:
    """Minimal module tree; parameters are discovered by attribute walk."""

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        self._collect("", out)
        return out

    def _collect(self, prefix: str, out: dict[str, Tensor]) -> None:
        for name, val in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(val, Tensor) and val.requires_grad:
                out[key] = val
            elif isinstance(val, Module):
                val._collect(key + ".", out)
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        item._collect(f"{key}.{i}.", out)
                    elif isinstance(item, Tensor) and item.requires_grad:
                        out[f"{key}.{i}"] = item

    def load_state(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        params = self.parameters()
        missing = [k for k in params if k not in state]
        extra = [k for k in state if k not in params]
        if strict and (missing or extra):
            raise KeyError(f"state mismatch: missing={missing[:4]} extra={extra[:4]}")
        for k, p in params.items():
            if k in state:
                if state[k].shape != p.data.shape:
                    raise ValueError(f"param {k}: shape {state[k].shape} != {p.data.shape}")
                p.data = state[k].astype(p.data.dtype).copy()

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.parameters().items()}


class Linear(Module):
    def __init__(self, rng: np.random.Generator, din: int, dout: int,
                 bias: bool = True, zero_init: bool = False):
        w = np.zeros((din, dout), np.float32) if zero_init else trunc_normal(rng, (din, dout))
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(dout, np.float32), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = x @ self.weight
        return out + self.bias if self.bias is not None else out


class Embedding(Module):
    def __init__(self, rng: np.random.Generator, num: int, dim: int):
        self.weight = Tensor(trunc_normal(rng, (num, dim)), requires_grad=True)

    def __call__(self, idx: np.ndarray) -> Tensor:
        return embedding(self.weight, idx)


class RMSNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.weight = Tensor(np.ones(dim, np.float32), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return rms_norm(x, self.weight, self.eps)


@dataclass
class AttentionConfig:
    model_dim: int
    num_heads: int
    head_dim: int
    qk_norm_enabled: bool = True
    causal: bool = True
    kv_heads: int = 0   # 0 -> same as num_heads; 1 -> multi-query (shared K/V)

    def __post_init__(self):
        if self.model_dim != self.num_heads * self.head_dim:
            raise ValueError(
                f"model_dim {self.model_dim} != num_heads*head_dim "
                f"{self.num_heads}*{self.head_dim}")
        if not self.kv_heads:
            self.kv_heads = self.num_heads
        if self.kv_heads not in (1, self.num_heads):
            raise ValueError("kv_heads must be 1 (multi-query) or num_heads")


def rope_tables(positions: np.ndarray, head_dim: int, base: float = 10000.0,
                dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    """cos/sin tables [T, head_dim/2] for the given absolute positions."""
    half = head_dim // 2
    freqs = base ** (-np.arange(half, dtype=np.float64) / half)
    ang = np.asarray(positions, dtype=np.float64)[:, None] * freqs[None, :]
    return np.cos(ang).astype(dtype), np.sin(ang).astype(dtype)


def apply_rope(x: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotate pairs (even, odd) of the last axis. x: [..., T, dh]."""
    d = x.data.shape[-1]
    x1 = x[..., 0:d:2]
    x2 = x[..., 1:d:2]
    from .tensor import stack
    r1 = x1 * Tensor(cos) - x2 * Tensor(sin)
    r2 = x1 * Tensor(sin) + x2 * Tensor(cos)
    out = stack([r1, r2], axis=-1)  # [..., T, dh/2, 2]
    return out.reshape(*x.data.shape)


def l2_normalize(x: Tensor, eps: float = 1e-6) -> Tensor:
    sq = (x * x).sum(axis=-1, keepdims=True)
    return x * ((sq + eps) ** -0.5)


class MultiHeadAttention(Module):
    """Causal self-attention with per-head L2 QK normalization.

    With qk_norm on, queries and keys are unit-normalized per head and the
    logit scale comes from a learned per-head temperature (init sqrt(head_dim));
    rotary position embedding is applied after the normalization, so attention
    weights are invariant to any positive rescaling of raw queries or keys.
    """

    def __init__(self, rng: np.random.Generator, cfg: AttentionConfig):
        self.cfg = cfg
        d = cfg.model_dim
        kv_dim = cfg.kv_heads * cfg.head_dim
        self.wq = Linear(rng, d, d)
        self.wk = Linear(rng, d, kv_dim)
        self.wv = Linear(rng, d, kv_dim)
        self.wo = Linear(rng, d, d)
        self.temp = Tensor(np.full(cfg.num_heads, np.sqrt(cfg.head_dim), np.float32),
                           requires_grad=True)

    def _split(self, x: Tensor, b_t: tuple[int, int], heads: int) -> Tensor:
        b, t = b_t
        return x.reshape(b, t, heads, self.cfg.head_dim).transpose(0, 2, 1, 3)

    def __call__(self, x: Tensor, positions: np.ndarray | None = None,
                 mask: np.ndarray | None = None) -> Tensor:
        cfg = self.cfg
        squeeze = x.data.ndim == 2
        if squeeze:
            x = x.reshape(1, *x.data.shape)
        b, t, d = x.data.shape
        q = self._split(self.wq(x), (b, t), cfg.num_heads)
        k = self._split(self.wk(x), (b, t), cfg.kv_heads)
        v = self._split(self.wv(x), (b, t), cfg.kv_heads)
        if cfg.qk_norm_enabled:
            q = l2_normalize(q)
            k = l2_normalize(k)
            scale = self.temp.reshape(1, cfg.num_heads, 1, 1)
        else:
            scale = 1.0 / np.sqrt(cfg.head_dim)
        if positions is not None:
            cos, sin = rope_tables(positions, cfg.head_dim, dtype=x.data.dtype)
            q = apply_rope(q, cos, sin)
            k = apply_rope(k, cos, sin)
        if mask is None and cfg.causal:
            mask = causal_mask(t, dtype=x.data.dtype)
        if isinstance(scale, Tensor):
            q = q * scale
            out = causal_attention(q, k, v, 1.0, mask)
        else:
            out = causal_attention(q, k, v, scale, mask)
        out = out.transpose(0, 2, 1, 3).reshape(b, t, d)
        out = self.wo(out)
        return out.reshape(t, d) if squeeze else out


def causal_mask(t: int, dtype=np.float32) -> np.ndarray:
    m = np.triu(np.full((t, t), -np.inf, dtype=dtype), k=1)
    return m


def attention(q: Tensor, k: Tensor, v: Tensor, cfg: AttentionConfig,
              mask: np.ndarray | None = None,
              temperature: np.ndarray | None = None) -> Tensor:
    """Functional attention over pre-projected [T, model_dim] streams."""
    for name, tt in (("q", q), ("k", k), ("v", v)):
        if tt.data.ndim != 2 or tt.data.shape[-1] != cfg.model_dim:
            raise ValueError(f"{name} must be [seq, model_dim={cfg.model_dim}], got {tt.data.shape}")
    t = q.data.shape[0]
    tk = k.data.shape[0]

    def split(x, n):
        return x.reshape(n, cfg.num_heads, cfg.head_dim).transpose(1, 0, 2)

    qh, kh, vh = split(q, t), split(k, tk), split(v, tk)
    if cfg.qk_norm_enabled:
        qh = l2_normalize(qh)
        kh = l2_normalize(kh)
        temp = temperature if temperature is not None else np.full(
            cfg.num_heads, np.sqrt(cfg.head_dim), np.float32)
        scale = np.asarray(temp, dtype=q.data.dtype).reshape(cfg.num_heads, 1, 1)
    else:
        scale = 1.0 / np.sqrt(cfg.head_dim)
    if mask is None and cfg.causal:
        mask = causal_mask(t, dtype=q.data.dtype)
    out = causal_attention(qh, kh, vh, scale, mask)
    return out.transpose(1, 0, 2).reshape(t, cfg.model_dim)


def export_transformer_blocks(blocks: list["TransformerBlock"],
                              final_norm: "RMSNorm | None" = None) -> dict:
    """Flat per-layer weight arrays for the KV-cached decode cores."""
    cfg = blocks[0].attn.cfg
    out = {"layers": [], "final_norm": None if final_norm is None
           else final_norm.weight.data.copy()}
    for blk in blocks:
        out["layers"].append({
            "attn_norm": blk.attn_norm.weight.data.copy(),
            "wq": blk.attn.wq.weight.data.copy(), "bq": blk.attn.wq.bias.data.copy(),
            "wk": blk.attn.wk.weight.data.copy(), "bk": blk.attn.wk.bias.data.copy(),
            "wv": blk.attn.wv.weight.data.copy(), "bv": blk.attn.wv.bias.data.copy(),
            "wo": blk.attn.wo.weight.data.copy(), "bo": blk.attn.wo.bias.data.copy(),
            "temp": blk.attn.temp.data.copy(),
            "ff_norm": blk.ff_norm.weight.data.copy(),
            "w_up": blk.ff.up.weight.data.copy(), "b_up": blk.ff.up.bias.data.copy(),
            "w_down": blk.ff.down.weight.data.copy(), "b_down": blk.ff.down.bias.data.copy(),
        })
    out["dims"] = {"model_dim": cfg.model_dim, "heads": cfg.num_heads,
                   "head_dim": cfg.head_dim}
    return out


class FeedForward(Module):
    def __init__(self, rng: np.random.Generator, dim: int, hidden: int):
        self.up = Linear(rng, dim, hidden)
        self.down = Linear(rng, hidden, dim)

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(self.up(x).silu())


class TransformerBlock(Module):
    def __init__(self, rng: np.random.Generator, cfg: AttentionConfig, ff_mult: int = 4):
        self.attn_norm = RMSNorm(cfg.model_dim)
        self.attn = MultiHeadAttention(rng, cfg)
        self.ff_norm = RMSNorm(cfg.model_dim)
        self.ff = FeedForward(rng, cfg.model_dim, ff_mult * cfg.model_dim)

    def __call__(self, x: Tensor, positions: np.ndarray | None = None,
                 mask: np.ndarray | None = None) -> Tensor:
        x = x + self.attn(self.attn_norm(x), positions, mask)
        x = x + self.ff(self.ff_norm(x))
        return x
