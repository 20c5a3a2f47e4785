"""Reverse-mode autodiff over numpy arrays.

A Tensor wraps an ndarray and records the op graph as it is built; calling
`backward()` on a scalar walks the tape in reverse topological order.  All
shapes are validated when an op is constructed, not when gradients flow.
Default dtype is float32; gradient checks build float64 graphs, ops never
change the dtype they are given.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / rollouts)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype == np.float64 and not isinstance(data, np.ndarray):
            arr = arr.astype(np.float32)  # python floats/lists default to f32
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _result(data: np.ndarray, parents: Sequence["Tensor"],
                backward: Callable[["Tensor", np.ndarray], None] | None) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.name = ""
        needs = _grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = needs
        if needs:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = grad.astype(self.data.dtype, copy=True)
        else:
            self.grad += grad

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    # -- backward -------------------------------------------------------------

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar loss, got shape {self.data.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            # interior grads are no longer needed once propagated
            if node._parents and node is not self:
                node.grad = None

    # -- arithmetic -----------------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        other = self._coerce(other)
        a, b = self, other
        data = a.data + b.data

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.data.shape))

        return Tensor._result(data, (a, b), backward)

    __radd__ = __add__

    def __neg__(self):
        a = self

        def backward(g):
            a._accumulate(-g)

        return Tensor._result(-a.data, (a,), backward)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __mul__(self, other):
        other = self._coerce(other)
        a, b = self, other
        data = a.data * b.data

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.data.shape))

        return Tensor._result(data, (a, b), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        a, b = self, other
        data = a.data / b.data

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g / b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g * data / b.data, b.data.shape))

        return Tensor._result(data, (a, b), backward)

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __pow__(self, p: float):
        a = self
        data = a.data ** p

        def backward(g):
            a._accumulate(g * p * a.data ** (p - 1))

        return Tensor._result(data, (a,), backward)

    def __matmul__(self, other):
        other = self._coerce(other)
        a, b = self, other
        if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
            raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
        data = a.data @ b.data

        def backward(g):
            if a.requires_grad:
                ga = g @ np.swapaxes(b.data, -1, -2) if b.data.ndim > 1 else np.outer(g, b.data).reshape(a.data.shape)
                a._accumulate(_unbroadcast(ga, a.data.shape))
            if b.requires_grad:
                if a.data.ndim > 1:
                    gb = np.swapaxes(a.data, -1, -2) @ g
                else:
                    gb = np.outer(a.data, g)
                b._accumulate(_unbroadcast(gb, b.data.shape))

        return Tensor._result(data, (a, b), backward)

    # -- reductions / shaping ---------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        a = self
        data = a.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.data.shape))

        return Tensor._result(data, (a,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod([self.data.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        data = a.data.reshape(shape)

        def backward(g):
            a._accumulate(g.reshape(a.data.shape))

        return Tensor._result(data, (a,), backward)

    def transpose(self, *axes):
        if not axes:
            axes = tuple(reversed(range(self.data.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        a = self
        inv = np.argsort(axes)
        data = a.data.transpose(axes)

        def backward(g):
            a._accumulate(g.transpose(inv))

        return Tensor._result(data, (a,), backward)

    def __getitem__(self, idx):
        a = self
        data = a.data[idx]

        def backward(g):
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a._accumulate(full)

        return Tensor._result(data, (a,), backward)

    # -- elementwise nonlinearities -------------------------------------------

    def exp(self):
        a = self
        data = np.exp(a.data)

        def backward(g):
            a._accumulate(g * data)

        return Tensor._result(data, (a,), backward)

    def log(self):
        a = self
        data = np.log(a.data)

        def backward(g):
            a._accumulate(g / a.data)

        return Tensor._result(data, (a,), backward)

    def tanh(self):
        a = self
        data = np.tanh(a.data)

        def backward(g):
            a._accumulate(g * (1.0 - data * data))

        return Tensor._result(data, (a,), backward)

    def sigmoid(self):
        a = self
        with np.errstate(over="ignore"):
            data = 1.0 / (1.0 + np.exp(-a.data))

        def backward(g):
            a._accumulate(g * data * (1.0 - data))

        return Tensor._result(data, (a,), backward)

    def silu(self):
        a = self
        with np.errstate(over="ignore"):
            sig = 1.0 / (1.0 + np.exp(-a.data))
        data = a.data * sig

        def backward(g):
            a._accumulate(g * (sig * (1.0 + a.data * (1.0 - sig))))

        return Tensor._result(data, (a,), backward)

    def sqrt(self):
        return self ** 0.5

    def abs(self):
        a = self
        data = np.abs(a.data)

        def backward(g):
            a._accumulate(g * np.sign(a.data))

        return Tensor._result(data, (a,), backward)


# -- free functions ------------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = list(tensors)
    data = np.concatenate([t.data for t in parts], axis=axis)
    sizes = [t.data.shape[axis] for t in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return Tensor._result(data, parts, backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = list(tensors)
    data = np.stack([t.data for t in parts], axis=axis)

    def backward(g):
        for i, t in enumerate(parts):
            if t.requires_grad:
                t._accumulate(np.take(g, i, axis=axis))

    return Tensor._result(data, parts, backward)


def embedding(table: Tensor, idx: np.ndarray) -> Tensor:
    """Row gather: out[...] = table[idx[...]]."""
    idx = np.asarray(idx)
    if idx.min(initial=0) < 0 or (idx.size and idx.max() >= table.data.shape[0]):
        raise ValueError("embedding index out of range")
    data = table.data[idx]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx.reshape(-1), g.reshape(-1, table.data.shape[1]))
        table._accumulate(full)

    return Tensor._result(data, (table,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        x._accumulate(data * (g - dot))

    return Tensor._result(data, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - lse

    def backward(g):
        soft = np.exp(data)
        x._accumulate(g - soft * g.sum(axis=axis, keepdims=True))

    return Tensor._result(data, (x,), backward)


def cross_entropy(logits: Tensor, targets: np.ndarray, weights: np.ndarray | None = None) -> Tensor:
    """Mean NLL over the leading axes; `weights` masks/reweights per position.

    logits: [..., V]; targets: integer [...]; weights broadcastable to targets.
    Normalized by the total weight, so the result is nats per (weighted) token.
    """
    targets = np.asarray(targets)
    if targets.shape != logits.data.shape[:-1]:
        raise ValueError(f"targets shape {targets.shape} != logits leading {logits.data.shape[:-1]}")
    logp = log_softmax(logits, axis=-1)
    flat = logp.reshape(-1, logits.data.shape[-1])
    tflat = targets.reshape(-1)
    if weights is None:
        w = np.ones(tflat.shape[0], dtype=logits.data.dtype)
    else:
        w = np.broadcast_to(np.asarray(weights, dtype=logits.data.dtype), targets.shape).reshape(-1)
    total = w.sum()
    if total <= 0:
        raise ValueError("cross_entropy: no active targets")
    picked = flat[np.arange(tflat.shape[0]), tflat]
    return -(picked * Tensor(w)).sum() * (1.0 / float(total))


def rms_norm(x: Tensor, weight: Tensor, eps: float = 1e-5) -> Tensor:
    """x * weight / rms(x) with rms over the last axis."""
    ms = (x.data * x.data).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(ms + eps)
    xn = x.data * inv
    data = xn * weight.data

    def backward(g):
        if weight.requires_grad:
            weight._accumulate((g * xn).sum(axis=tuple(range(g.ndim - 1))))
        if x.requires_grad:
            gw = g * weight.data
            d = x.data.shape[-1]
            dot = (gw * x.data).sum(axis=-1, keepdims=True)
            x._accumulate(inv * gw - (inv ** 3) * x.data * dot / d)

    return Tensor._result(data, (x, weight), backward)


def causal_attention(q: Tensor, k: Tensor, v: Tensor, scale: float | np.ndarray = 1.0,
                     mask: np.ndarray | None = None) -> Tensor:
    """Fused attention core: softmax(scale * q@k^T + mask) @ v.

    q,k,v: [..., T, dh] with matching leading axes; `scale` broadcasts over the
    leading axes (per-head temperatures pass [..., 1, 1]).  `mask` is additive
    (-inf for blocked), broadcastable to [..., Tq, Tk].  Probabilities are
    recomputed in backward instead of stored, so peak memory stays O(T*dh) per
    head times a single [Tq, Tk] scratch.
    """
    if q.data.shape[-1] != k.data.shape[-1] or k.data.shape[:-1] != v.data.shape[:-1]:
        raise ValueError(f"attention shape mismatch: q{q.data.shape} k{k.data.shape} v{v.data.shape}")
    scl = np.asarray(scale, dtype=q.data.dtype)

    def probs() -> np.ndarray:
        logits = scl * (q.data @ np.swapaxes(k.data, -1, -2))
        if mask is not None:
            logits = logits + mask
        logits -= logits.max(axis=-1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=-1, keepdims=True)

    p = probs()
    data = p @ v.data

    def backward(g):
        p2 = probs()
        if v.requires_grad:
            v._accumulate(_unbroadcast(np.swapaxes(p2, -1, -2) @ g, v.data.shape))
        gp = g @ np.swapaxes(v.data, -1, -2)
        glogits = p2 * (gp - (gp * p2).sum(axis=-1, keepdims=True))
        if q.requires_grad:
            q._accumulate(_unbroadcast(scl * (glogits @ k.data), q.data.shape))
        if k.requires_grad:
            k._accumulate(_unbroadcast(scl * (np.swapaxes(glogits, -1, -2) @ q.data), k.data.shape))

    return Tensor._result(data, (q, k, v), backward)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """1-D convolution. x: [B, Cin, T], weight: [Cout, Cin, Ksize]."""
    b, cin, t = x.data.shape
    cout, cin2, ks = weight.data.shape
    if cin != cin2:
        raise ValueError(f"conv1d channel mismatch: {cin} vs {cin2}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    tp = xp.shape[-1]
    tout = (tp - ks) // stride + 1
    if tout < 1:
        raise ValueError("conv1d: input shorter than kernel")
    win = np.lib.stride_tricks.sliding_window_view(xp, ks, axis=-1)[:, :, ::stride]  # [B,Cin,Tout,K]
    cols = win.transpose(0, 2, 1, 3).reshape(b * tout, cin * ks)
    wmat = weight.data.reshape(cout, cin * ks)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    data = out.reshape(b, tout, cout).transpose(0, 2, 1)

    def backward(g):
        gmat = g.transpose(0, 2, 1).reshape(b * tout, cout)
        if weight.requires_grad:
            weight._accumulate((gmat.T @ cols).reshape(cout, cin, ks))
        if bias is not None and bias.requires_grad:
            bias._accumulate(gmat.sum(axis=0))
        if x.requires_grad:
            gcols = (gmat @ wmat).reshape(b, tout, cin, ks)
            gx = np.zeros((b, cin, tp), dtype=x.data.dtype)
            for j in range(ks):
                np.add.at(gx, (slice(None), slice(None), slice(j, j + stride * tout, stride)),
                          gcols[:, :, :, j].transpose(0, 2, 1))
            if padding:
                gx = gx[:, :, padding:tp - padding]
            x._accumulate(gx)

    return Tensor._result(data, (x, weight) + ((bias,) if bias is not None else ()), backward)


def upsample_zero(x: Tensor, factor: int) -> Tensor:
    """Zero-stuff along time: out[..., ::factor] = x (transposed-conv helper)."""
    b, c, t = x.data.shape
    data = np.zeros((b, c, t * factor), dtype=x.data.dtype)
    data[:, :, ::factor] = x.data

    def backward(g):
        x._accumulate(g[:, :, ::factor])

    return Tensor._result(data, (x,), backward)


def pad_time(x: Tensor, left: int, right: int) -> Tensor:
    data = np.pad(x.data, ((0, 0), (0, 0), (left, right)))

    def backward(g):
        t = x.data.shape[-1]
        x._accumulate(g[:, :, left:left + t])

    return Tensor._result(data, (x,), backward)


def forward_backward(loss: Tensor, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Run backward from a scalar loss and collect gradients for `params`.

    Leaves without a path to the loss get zero gradients of the right shape.
    """
    for p in params.values():
        p.grad = None
    loss.backward()
    return {name: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for name, p in params.items()}
