"""Residual-VQ audio codec: waveform -> [L1 x K] token grid -> waveform.

The encoder is a strided 1-D conv stack whose strides multiply to the hop
(samples per codec frame); K codebooks then quantize the latent residually,
codebook k seeing what codebooks 1..k-1 left behind.  Codebooks learn by EMA
with a commitment term and dead-entry re-initialization; the straight-through
estimator carries gradients across the quantizer.  The decoder mirrors the
encoder and is trained with codebook dropout (random prefix of codebooks per
batch) so reconstruction quality degrades gracefully as codebooks are removed.

Token index `codebook_size` is reserved: a frame whose every codebook carries
it means "modality absent" and decodes to silence.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from ..config import AudioCodecConfig
from ..nn import Module, Tensor, conv1d, no_grad, pad_time, upsample_zero
from ..nn.modules import trunc_normal


@dataclass
class AudioTokenGrid:
    tokens: np.ndarray  # [L1, K] integer indices
    config: AudioCodecConfig

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens)
        if self.tokens.ndim != 2:
            raise ValueError(f"token grid must be 2-D, got {self.tokens.shape}")
        if self.tokens.size and (self.tokens.min() < 0
                                 or self.tokens.max() > self.config.empty_token):
            raise ValueError("token index out of range")

    @property
    def num_frames(self) -> int:
        return self.tokens.shape[0]

    @property
    def num_codebooks(self) -> int:
        return self.tokens.shape[1]

    def is_empty_frame(self) -> np.ndarray:
        return np.all(self.tokens == self.config.empty_token, axis=1)

    @staticmethod
    def empty(cfg: AudioCodecConfig, num_frames: int) -> "AudioTokenGrid":
        tok = np.full((num_frames, cfg.num_codebooks), cfg.empty_token, np.int64)
        return AudioTokenGrid(tok, cfg)

    def serialize(self) -> bytes:
        head = struct.pack("<IB", self.num_frames, self.num_codebooks)
        return head + np.ascontiguousarray(self.tokens, dtype="<u2").tobytes()

    @staticmethod
    def deserialize(blob: bytes, cfg: AudioCodecConfig) -> "AudioTokenGrid":
        if len(blob) < 5:
            raise ValueError("token grid blob too short")
        l1, k = struct.unpack("<IB", blob[:5])
        need = 5 + l1 * k * 2
        if len(blob) != need:
            raise ValueError(f"token grid blob length {len(blob)} != expected {need}")
        tok = np.frombuffer(blob[5:], dtype="<u2").reshape(l1, k).astype(np.int64)
        return AudioTokenGrid(tok, cfg)


class _ConvStack(Module):
    def __init__(self, rng, chans: list[int], strides: list[int]):
        self.strides = strides
        self.weights = []
        self.biases = []
        for cin, cout, s in zip(chans[:-1], chans[1:], strides):
            k = 2 * s
            self.weights.append(Tensor(trunc_normal(rng, (cout, cin, k), std=0.05),
                                       requires_grad=True))
            self.biases.append(Tensor(np.zeros(cout, np.float32), requires_grad=True))

    def __call__(self, x: Tensor) -> Tensor:
        # kernel 2s with padding ceil(s/2) maps length n*s to exactly n
        for i, (w, b, s) in enumerate(zip(self.weights, self.biases, self.strides)):
            x = conv1d(x, w, b, stride=s, padding=(s + 1) // 2)
            if i < len(self.weights) - 1:
                x = x.silu()
        return x


class _UpConvStack(Module):
    def __init__(self, rng, chans: list[int], strides: list[int]):
        self.strides = strides
        self.weights = []
        self.biases = []
        for cin, cout, s in zip(chans[:-1], chans[1:], strides):
            k = 2 * s + 1
            self.weights.append(Tensor(trunc_normal(rng, (cout, cin, k), std=0.05),
                                       requires_grad=True))
            self.biases.append(Tensor(np.zeros(cout, np.float32), requires_grad=True))

    def __call__(self, x: Tensor) -> Tensor:
        for i, (w, b, s) in enumerate(zip(self.weights, self.biases, self.strides)):
            x = upsample_zero(x, s)
            x = conv1d(x, w, b, stride=1, padding=s)
            if i < len(self.weights) - 1:
                x = x.silu()
        return x


class ResidualQuantizer:
    """K-stage residual codebook cascade with EMA updates."""

    def __init__(self, rng: np.random.Generator, cfg: AudioCodecConfig,
                 ema_decay: float = 0.97, dead_threshold: float = 1e-3,
                 reinit_cooldown: int = 25):
        self.cfg = cfg
        self.codebooks = rng.standard_normal(
            (cfg.num_codebooks, cfg.codebook_size, cfg.code_dim)).astype(np.float32) * 0.1
        self.ema_counts = np.ones((cfg.num_codebooks, cfg.codebook_size), np.float32)
        self.ema_sums = self.codebooks.copy()
        self.decay = ema_decay
        self.dead_threshold = dead_threshold
        self.reinit_cooldown = reinit_cooldown
        self._cooldown = np.zeros((cfg.num_codebooks, cfg.codebook_size), np.int64)

    def quantize(self, latents: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """latents [N, code_dim] -> (indices [N, K], quantized prefix sums [K, N, code_dim])."""
        n = latents.shape[0]
        k = self.cfg.num_codebooks
        idx = np.zeros((n, k), np.int64)
        sums = np.zeros((k, n, self.cfg.code_dim), np.float32)
        residual = latents.astype(np.float32).copy()
        acc = np.zeros_like(residual)
        for ki in range(k):
            cb = self.codebooks[ki]
            d = (residual * residual).sum(1, keepdims=True) - 2 * residual @ cb.T \
                + (cb * cb).sum(1)[None, :]
            choice = d.argmin(axis=1)
            idx[:, ki] = choice
            acc = acc + cb[choice]
            sums[ki] = acc
            residual = latents - acc
        return idx, sums

    def canonicalize(self, idx: np.ndarray, max_iters: int = 16) -> np.ndarray:
        """Drive indices to a fixed point of quantize(dequantize(.)).

        Encoding returns canonical grids so that re-quantizing a quantizer
        output reproduces it exactly.  Frames iterate independently; a frame
        caught in a 2-cycle resolves through the per-stage hybrids of the two
        orbit members (in practice one of them is a true fixed point).
        """
        idx = idx.copy()
        prev = np.full_like(idx, -1)
        active = np.arange(idx.shape[0])
        for _ in range(max_iters):
            if active.size == 0:
                break
            vec = self.dequantize(idx[active])
            nxt, _ = self.quantize(vec)
            changed = np.any(nxt != idx[active], axis=1)
            cycled = changed & np.all(nxt == prev[active], axis=1)
            for j in np.flatnonzero(cycled):
                idx[active[j]] = self._resolve_cycle(idx[active[j]], nxt[j])
            moving = np.flatnonzero(changed & ~cycled)
            prev[active[moving]] = idx[active[moving]]
            idx[active[moving]] = nxt[moving]
            active = active[moving]
        return idx

    def _resolve_cycle(self, qa: np.ndarray, qb: np.ndarray) -> np.ndarray:
        import itertools
        for combo in itertools.product(*[(int(qa[k]), int(qb[k]))
                                         for k in range(qa.shape[0])]):
            cand = np.asarray(combo, dtype=np.int64)[None]
            rq, _ = self.quantize(self.dequantize(cand))
            if np.array_equal(rq[0], cand[0]):
                return cand[0]
        return qa

    def dequantize(self, idx: np.ndarray, num_codebooks: int | None = None) -> np.ndarray:
        """Sum code vectors for the first `num_codebooks` stages; empty index -> zero."""
        k = idx.shape[1] if num_codebooks is None else num_codebooks
        out = np.zeros((idx.shape[0], self.cfg.code_dim), np.float32)
        for ki in range(k):
            sel = idx[:, ki]
            real = sel < self.cfg.codebook_size
            out[real] += self.codebooks[ki][sel[real]]
        return out

    def ema_update(self, latents: np.ndarray, idx: np.ndarray,
                   rng: np.random.Generator) -> list[tuple[int, int]]:
        """One EMA step on all stages; returns (codebook, entry) re-init events.

        Dead entries (usage below threshold) move to the worst-quantized
        residual in the batch, one per update with a per-entry cooldown, so
        revived entries spread toward coverage gaps instead of piling onto
        already-covered clusters.
        """
        events: list[tuple[int, int]] = []
        residual = latents.astype(np.float32).copy()
        for ki in range(self.cfg.num_codebooks):
            onehot_counts = np.bincount(idx[:, ki], minlength=self.cfg.codebook_size).astype(np.float32)
            sums = np.zeros((self.cfg.codebook_size, self.cfg.code_dim), np.float32)
            np.add.at(sums, idx[:, ki], residual)
            self.ema_counts[ki] = self.decay * self.ema_counts[ki] + (1 - self.decay) * onehot_counts
            self.ema_sums[ki] = self.decay * self.ema_sums[ki] + (1 - self.decay) * sums
            norm = np.maximum(self.ema_counts[ki], 1e-5)[:, None]
            self.codebooks[ki] = self.ema_sums[ki] / norm
            usage = self.ema_counts[ki] / max(self.ema_counts[ki].sum(), 1e-9)
            self._cooldown[ki] = np.maximum(self._cooldown[ki] - 1, 0)
            dead = np.flatnonzero((usage < self.dead_threshold) & (self._cooldown[ki] == 0))
            next_residual = residual - self.codebooks[ki][idx[:, ki]]
            if dead.size:
                entry = int(rng.choice(dead))
                err = (next_residual * next_residual).sum(axis=1)
                src = residual[int(err.argmax())]
                self.codebooks[ki, entry] = src
                self.ema_sums[ki, entry] = src
                self.ema_counts[ki, entry] = 1.0
                self._cooldown[ki, entry] = self.reinit_cooldown
                events.append((ki, entry))
            residual = next_residual
        return events


class AudioCodec(Module):
    def __init__(self, cfg: AudioCodecConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        strides = self._factor_hop(cfg.hop)
        chans = [1, 32, 48, 64, cfg.code_dim][:len(strides)] + [cfg.code_dim]
        chans = chans[:len(strides) + 1]
        self.encoder = _ConvStack(rng, chans, strides)
        self.decoder = _UpConvStack(rng, list(reversed(chans)), list(reversed(strides)))
        self.quantizer = ResidualQuantizer(rng, cfg)

    @staticmethod
    def _factor_hop(hop: int) -> list[int]:
        strides = []
        rest = hop
        for f in (2, 2, 5, 5, 2, 5):
            if rest % f == 0 and rest > 1:
                strides.append(f)
                rest //= f
        if rest != 1:
            strides.append(rest)
        return strides

    # -- public API -------------------------------------------------------------

    def encode(self, waveform: np.ndarray, sample_rate: int | None = None) -> AudioTokenGrid:
        latents = self._latents(self._check_wave(waveform, sample_rate))
        idx, _ = self.quantizer.quantize(latents)
        return AudioTokenGrid(self.quantizer.canonicalize(idx), self.cfg)

    def decode(self, grid: AudioTokenGrid, num_codebooks: int | None = None) -> np.ndarray:
        if grid.tokens.max(initial=0) > self.cfg.empty_token:
            raise ValueError("token index out of range")
        latent = self.quantizer.dequantize(grid.tokens, num_codebooks)
        with no_grad():
            x = Tensor(latent.T[None, :, :])
            wave = self.decoder(x).data[0, 0]
        empty = grid.is_empty_frame()
        if empty.any():
            mask = np.repeat(empty, self.cfg.hop)
            wave = wave.copy()
            wave[mask] = 0.0
        return wave.astype(np.float32)

    # -- internals ---------------------------------------------------------------

    def _check_wave(self, waveform: np.ndarray, sample_rate: int | None) -> np.ndarray:
        waveform = np.asarray(waveform, dtype=np.float32)
        if waveform.ndim != 1 or waveform.size == 0:
            raise ValueError("waveform must be non-empty mono PCM")
        if waveform.size < self.cfg.hop:
            raise ValueError(f"waveform shorter than one hop ({self.cfg.hop} samples)")
        if sample_rate is not None and sample_rate != self.cfg.sample_rate:
            raise ValueError(f"sample rate {sample_rate} != codec rate {self.cfg.sample_rate}")
        peak = np.abs(waveform).max()
        if peak > 1.0 + 1e-4:
            raise ValueError(f"amplitude out of [-1, 1] (peak {peak:.3f})")
        return waveform

    def _latents(self, waveform: np.ndarray) -> np.ndarray:
        hop = self.cfg.hop
        pad = (-waveform.size) % hop
        if pad:
            waveform = np.pad(waveform, (0, pad))
        with no_grad():
            z = self.encoder(Tensor(waveform[None, None, :]))
        return z.data[0].T.copy()  # [L1, code_dim]

    def latents_tensor(self, batch: np.ndarray) -> Tensor:
        """Training path: batch [B, samples] -> latent Tensor [B, code_dim, L]."""
        return self.encoder(Tensor(batch[:, None, :]))

    def state(self) -> dict[str, np.ndarray]:
        s = super().state()
        s["quantizer.codebooks"] = self.quantizer.codebooks.copy()
        s["quantizer.ema_counts"] = self.quantizer.ema_counts.copy()
        s["quantizer.ema_sums"] = self.quantizer.ema_sums.copy()
        return s

    def load_state(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        q = {k: state[k] for k in list(state) if k.startswith("quantizer.")}
        rest = {k: v for k, v in state.items() if not k.startswith("quantizer.")}
        super().load_state(rest, strict=strict)
        self.quantizer.codebooks = q["quantizer.codebooks"].astype(np.float32).copy()
        self.quantizer.ema_counts = q["quantizer.ema_counts"].astype(np.float32).copy()
        self.quantizer.ema_sums = q["quantizer.ema_sums"].astype(np.float32).copy()


def pcm16_to_float(blob: bytes) -> np.ndarray:
    return np.frombuffer(blob, dtype="<i2").astype(np.float32) / 32768.0


def float_to_pcm16(wave: np.ndarray) -> bytes:
    clipped = np.clip(wave, -1.0, 1.0)
    return (clipped * 32767.0).astype("<i2").tobytes()
