"""Codec training: reconstruction + commitment with codebook dropout."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..nn import AdamW, Tensor, no_grad
from .codec import AudioCodec


@dataclass
class CodecReport:
    steps: int = 0
    losses: list[float] = field(default_factory=list)
    per_k_mse: list[float] = field(default_factory=list)  # held-out MSE using 1..k codebooks
    reinit_events: list[tuple[int, int, int]] = field(default_factory=list)  # (step, codebook, entry)
    diverged: bool = False


class CodecDivergence(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"codec training diverged at step {step} (loss={loss})")
        self.step = step
        self.loss = loss


def _crop_batch(rng, dataset: list[np.ndarray], batch: int, samples: int) -> np.ndarray:
    out = np.zeros((batch, samples), np.float32)
    for i in range(batch):
        w = dataset[rng.integers(0, len(dataset))]
        if w.size <= samples:
            out[i, :w.size] = w
        else:
            start = rng.integers(0, w.size - samples + 1)
            out[i] = w[start:start + samples]
    return out


def reconstruction_mse(codec: AudioCodec, waves: list[np.ndarray],
                       num_codebooks: int) -> float:
    err, n = 0.0, 0
    for w in waves:
        grid = codec.encode(w)
        rec = codec.decode(grid, num_codebooks=num_codebooks)
        m = min(rec.size, w.size)
        err += float(((rec[:m] - w[:m]) ** 2).sum())
        n += m
    return err / max(n, 1)


def train_codec(codec: AudioCodec, dataset: list[np.ndarray], steps: int,
                seed: int = 0, batch: int = 8, clip_seconds: float = 0.25,
                lr: float = 1e-3, commit_weight: float = 0.25,
                holdout: list[np.ndarray] | None = None) -> CodecReport:
    """Train encoder/decoder by MSE and codebooks by EMA.

    Each step decodes from a random prefix of codebooks so partial decodes
    stay calibrated.  Raises CodecDivergence on non-finite loss.
    """
    if not dataset:
        raise ValueError("empty codec training dataset")
    rng = np.random.default_rng(seed)
    params = {**{f"enc.{k}": v for k, v in codec.encoder.parameters().items()},
              **{f"dec.{k}": v for k, v in codec.decoder.parameters().items()}}
    opt = AdamW(params, lr=lr)
    report = CodecReport()
    samples = int(clip_seconds * codec.cfg.sample_rate)
    samples -= samples % codec.cfg.hop
    kmax = codec.cfg.num_codebooks
    for step in range(steps):
        wavs = _crop_batch(rng, dataset, batch, samples)
        z = codec.latents_tensor(wavs)                      # [B, D, L]
        b, d, l = z.data.shape
        flat = z.data.transpose(0, 2, 1).reshape(b * l, d)
        idx, _ = codec.quantizer.quantize(flat)
        k_use = int(rng.integers(1, kmax + 1))
        qsum = codec.quantizer.dequantize(idx, k_use)
        qfull = codec.quantizer.dequantize(idx, kmax)
        q_tensor = qsum.reshape(b, l, d).transpose(0, 2, 1)
        # straight-through: decoder sees quantized latents, encoder gets identity grads
        z_q = z + Tensor(q_tensor - z.data)
        rec = codec.decoder(z_q)
        target = Tensor(wavs[:, None, :])
        recon = ((rec - target) ** 2.0).mean()
        commit = ((z - Tensor(qfull.reshape(b, l, d).transpose(0, 2, 1))) ** 2.0).mean()
        loss = recon + commit * commit_weight
        lval = float(loss.data)
        if not np.isfinite(lval):
            report.diverged = True
            raise CodecDivergence(step, lval)
        report.losses.append(lval)
        opt.zero_grad()
        loss.backward()
        opt.step()
        for cb, entry in codec.quantizer.ema_update(flat, idx, rng):
            report.reinit_events.append((step, cb, entry))
        report.steps = step + 1
    eval_set = holdout if holdout else dataset[: min(8, len(dataset))]
    with no_grad():
        report.per_k_mse = [reconstruction_mse(codec, eval_set, k)
                            for k in range(1, kmax + 1)]
    return report
