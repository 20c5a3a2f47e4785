"""Video codec training: pixel MSE through encode -> temporal -> decode."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..nn import AdamW, Tensor, no_grad, warmup_cosine
from .codec import VideoCodec, psnr


@dataclass
class VideoReport:
    steps: int = 0
    losses: list[float] = field(default_factory=list)
    train_psnr: float = 0.0


def train_video_codec(codec: VideoCodec, images: np.ndarray, steps: int,
                      seed: int = 0, batch: int = 16, lr: float = 3e-3) -> VideoReport:
    """Overfit-style trainer on an image set [N, H, W, C].

    Batches run through the full encode -> temporal -> decode path as one
    clip of unrelated frames, so the temporal layer trains alongside the
    per-frame path without learning a fixed past.
    """
    if images.ndim != 4 or images.shape[0] == 0:
        raise ValueError("images must be [N, H, W, C] and non-empty")
    rng = np.random.default_rng(seed)
    params = codec.parameters()
    opt = AdamW(params, lr=lr)
    report = VideoReport()
    n = images.shape[0]
    for step in range(steps):
        opt.lr = warmup_cosine(step, steps, lr, warmup=min(100, steps // 4))
        picks = rng.integers(0, n, size=batch)
        clips = Tensor(images[picks][:, None])  # batch of single-frame clips
        rec = codec.reconstruct(clips)
        loss = ((rec - clips) ** 2.0).mean()
        lval = float(loss.data)
        if not np.isfinite(lval):
            raise RuntimeError(f"video codec diverged at step {step}")
        report.losses.append(lval)
        opt.zero_grad()
        loss.backward()
        opt.step()
        report.steps = step + 1
    with no_grad():
        vals = []
        for i in range(n):
            frames = codec.encode_clip(images[i:i + 1])
            rec = codec.decode_frame(frames[0])
            vals.append(psnr(rec, images[i]))
        report.train_psnr = float(np.mean(vals))
    return report


def train_video_codec_clips(codec: VideoCodec, clips: list[np.ndarray], steps: int,
                            seed: int = 0, batch: int = 8, crop_len: int = 4,
                            lr: float = 3e-3) -> VideoReport:
    """Pipeline trainer on real clips [T, H, W, C]: random temporal crops keep
    the causal layer trained on realistic histories."""
    if not clips:
        raise ValueError("no clips")
    rng = np.random.default_rng(seed)
    opt = AdamW(codec.parameters(), lr=lr)
    report = VideoReport()
    for step in range(steps):
        opt.lr = warmup_cosine(step, steps, lr, warmup=min(100, steps // 4))
        length = int(rng.integers(1, crop_len + 1))
        stackd = []
        for _ in range(batch):
            c = clips[rng.integers(0, len(clips))]
            start = rng.integers(0, max(1, c.shape[0] - length + 1))
            piece = c[start:start + length]
            if piece.shape[0] < length:
                piece = np.concatenate([piece] + [piece[-1:]] * (length - piece.shape[0]))
            stackd.append(piece)
        x = Tensor(np.stack(stackd))
        rec = codec.reconstruct(x)
        loss = ((rec - x) ** 2.0).mean()
        lval = float(loss.data)
        if not np.isfinite(lval):
            raise RuntimeError(f"video codec diverged at step {step}")
        report.losses.append(lval)
        opt.zero_grad()
        loss.backward()
        opt.step()
        report.steps = step + 1
    return report
