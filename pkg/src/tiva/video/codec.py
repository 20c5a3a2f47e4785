"""Per-frame query-token video codec with a causal temporal transformer.

Each frame is encoded independently: patches cross-attend with a fixed set of
learned query tokens inside a small bidirectional transformer, and the query
outputs become the frame's continuous tokens.  A causal transformer then
contextualizes token l of frame i against token l of frames <= i, one token
stream per query index, so no temporal compression ever happens: frames out
== frames in, and future frames cannot touch past outputs even at the bit
level.  The decoder mirrors the encoder with learned patch queries.

An all-sentinel token frame ("modality absent") decodes to neutral gray.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..config import VideoCodecConfig
from ..nn import (AttentionConfig, Embedding, Linear, Module, RMSNorm, Tensor,
                  TransformerBlock, no_grad)
from ..nn.modules import trunc_normal

GRAY_LEVEL = 0.5


@dataclass
class VideoTokenFrame:
    tokens: np.ndarray  # [L2, token_dim]
    frame_index: int = 0
    empty: bool = False

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.float32)
        if self.tokens.ndim != 2:
            raise ValueError(f"token frame must be [L2, token_dim], got {self.tokens.shape}")
        if not np.all(np.isfinite(self.tokens)):
            raise ValueError("token frame contains non-finite values")

    @staticmethod
    def sentinel(cfg: VideoCodecConfig, frame_index: int = 0) -> "VideoTokenFrame":
        return VideoTokenFrame(np.zeros((cfg.tokens_per_frame, cfg.token_dim), np.float32),
                               frame_index, empty=True)

    def serialize(self) -> bytes:
        import struct
        l2, dim = self.tokens.shape
        head = struct.pack("<IHH", self.frame_index, l2, dim)
        return head + np.ascontiguousarray(self.tokens, dtype="<f4").tobytes()

    @staticmethod
    def deserialize(blob: bytes) -> "VideoTokenFrame":
        import struct
        if len(blob) < 8:
            raise ValueError("token frame blob too short")
        idx, l2, dim = struct.unpack("<IHH", blob[:8])
        need = 8 + l2 * dim * 4
        if len(blob) != need:
            raise ValueError(f"token frame blob length {len(blob)} != expected {need}")
        tok = np.frombuffer(blob[8:], dtype="<f4").reshape(l2, dim).copy()
        return VideoTokenFrame(tok, idx)


def _blocks(rng, n: int, dim: int, heads: int, causal: bool) -> list[TransformerBlock]:
    cfg = AttentionConfig(model_dim=dim, num_heads=heads, head_dim=dim // heads,
                          qk_norm_enabled=True, causal=causal)
    return [TransformerBlock(rng, cfg) for _ in range(n)]


class FrameEncoder(Module):
    def __init__(self, rng, cfg: VideoCodecConfig):
        self.cfg = cfg
        patch_dim = cfg.patch_size * cfg.patch_size * cfg.channels
        self.patch_proj = Linear(rng, patch_dim, cfg.embed_dim)
        self.patch_pos = Tensor(trunc_normal(rng, (cfg.num_patches, cfg.embed_dim)),
                                requires_grad=True)
        self.queries = Tensor(trunc_normal(rng, (cfg.tokens_per_frame, cfg.embed_dim)),
                              requires_grad=True)
        self.blocks = _blocks(rng, cfg.encoder_layers, cfg.embed_dim, 4, causal=False)
        self.out_norm = RMSNorm(cfg.embed_dim)
        self.out_proj = Linear(rng, cfg.embed_dim, cfg.token_dim)

    def __call__(self, frames: Tensor) -> Tensor:
        """frames [B, H, W, C] in [0,1] -> pre-temporal tokens [B, L2, token_dim]."""
        from ..nn import concat
        b = frames.data.shape[0]
        patches = patchify(frames, self.cfg)
        x = self.patch_proj(patches) + self.patch_pos
        q = self.queries.reshape(1, self.cfg.tokens_per_frame, self.cfg.embed_dim)
        q = q + Tensor(np.zeros((b, 1, 1), np.float32))  # broadcast to batch
        x = concat([x, q], axis=1)
        for blk in self.blocks:
            x = blk(x)
        tokens = x[:, self.cfg.num_patches:, :]
        return self.out_proj(self.out_norm(tokens))


class FrameDecoder(Module):
    def __init__(self, rng, cfg: VideoCodecConfig):
        self.cfg = cfg
        patch_dim = cfg.patch_size * cfg.patch_size * cfg.channels
        self.token_proj = Linear(rng, cfg.token_dim, cfg.embed_dim)
        self.patch_queries = Tensor(trunc_normal(rng, (cfg.num_patches, cfg.embed_dim)),
                                    requires_grad=True)
        self.blocks = _blocks(rng, cfg.decoder_layers, cfg.embed_dim, 4, causal=False)
        self.out_norm = RMSNorm(cfg.embed_dim)
        self.out_proj = Linear(rng, cfg.embed_dim, patch_dim)

    def __call__(self, tokens: Tensor) -> Tensor:
        """tokens [B, L2, token_dim] -> frames [B, H, W, C]."""
        from ..nn import concat
        b = tokens.data.shape[0]
        t = self.token_proj(tokens)
        pq = self.patch_queries.reshape(1, self.cfg.num_patches, self.cfg.embed_dim)
        pq = pq + Tensor(np.zeros((b, 1, 1), np.float32))
        x = concat([pq, t], axis=1)
        for blk in self.blocks:
            x = blk(x)
        patches = self.out_proj(self.out_norm(x[:, :self.cfg.num_patches, :]))
        return unpatchify(patches, self.cfg)


class TemporalTransformer(Module):
    """Causal attention over time, independently per token index."""

    def __init__(self, rng, cfg: VideoCodecConfig, in_dim: int | None = None):
        self.cfg = cfg
        d = in_dim if in_dim is not None else cfg.token_dim
        self.in_proj = Linear(rng, d, cfg.embed_dim)
        self.blocks = _blocks(rng, cfg.temporal_layers, cfg.embed_dim, 4, causal=True)
        self.out_norm = RMSNorm(cfg.embed_dim)
        self.out_proj = Linear(rng, cfg.embed_dim, cfg.token_dim)

    def __call__(self, tokens: Tensor, start_frame: int = 0) -> Tensor:
        """tokens [B, T, L2, in_dim] or [T, L2, in_dim] -> same leading shape,
        token_dim channels; frame i sees frames <= i, token streams stay
        independent of each other."""
        squeeze = tokens.data.ndim == 3
        if squeeze:
            tokens = tokens.reshape(1, *tokens.data.shape)
        b, t, l2, din = tokens.data.shape
        x = self.in_proj(tokens)                       # [B, T, L2, embed]
        x = x.transpose(0, 2, 1, 3).reshape(b * l2, t, self.cfg.embed_dim)
        pos = np.arange(start_frame, start_frame + t)
        for blk in self.blocks:
            x = blk(x, positions=pos)
        out = self.out_proj(self.out_norm(x))
        out = out.reshape(b, l2, t, self.cfg.token_dim).transpose(0, 2, 1, 3)
        return out.reshape(t, l2, self.cfg.token_dim) if squeeze else out


class VideoCodec(Module):
    def __init__(self, cfg: VideoCodecConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.frame_encoder = FrameEncoder(rng, cfg)
        self.temporal = TemporalTransformer(rng, cfg)
        self.frame_decoder = FrameDecoder(rng, cfg)

    # -- numpy-facing API ---------------------------------------------------

    def encode_frame(self, image: np.ndarray) -> VideoTokenFrame:
        """Single image -> pre-temporal token frame."""
        img = self._check_image(image)
        with no_grad():
            tok = self.frame_encoder(Tensor(img[None]))
        return VideoTokenFrame(tok.data[0])

    def temporal_contextualize(self, frames: list[VideoTokenFrame],
                               start_frame: int = 0) -> list[VideoTokenFrame]:
        if not frames:
            return []
        arr = np.stack([f.tokens for f in frames])
        window = self.cfg.temporal_window
        with no_grad():
            if arr.shape[0] <= window:
                out = self.temporal(Tensor(arr), start_frame).data
            else:
                chunks = [self.temporal(Tensor(arr[:window]), start_frame).data]
                for i in range(window, arr.shape[0]):
                    ctx = arr[i - window + 1:i + 1]
                    res = self.temporal(Tensor(ctx), start_frame + i - window + 1).data
                    chunks.append(res[-1:])
                out = np.concatenate(chunks)
        return [VideoTokenFrame(out[i], frames[i].frame_index) for i in range(len(frames))]

    def encode_clip(self, images: np.ndarray, start_frame: int = 0) -> list[VideoTokenFrame]:
        """images [T, H, W, C] -> contextualized token frames (count preserved)."""
        with no_grad():
            pre = self.frame_encoder(Tensor(self._check_clip(images)))
        frames = [VideoTokenFrame(pre.data[i], start_frame + i)
                  for i in range(images.shape[0])]
        return self.temporal_contextualize(frames, start_frame)

    def decode_frame(self, frame: VideoTokenFrame) -> np.ndarray:
        if frame.empty:
            return np.full((self.cfg.height, self.cfg.width, self.cfg.channels),
                           GRAY_LEVEL, np.float32)
        if frame.tokens.shape != (self.cfg.tokens_per_frame, self.cfg.token_dim):
            raise ValueError(f"token frame shape {frame.tokens.shape} does not match config")
        with no_grad():
            img = self.frame_decoder(Tensor(frame.tokens[None]))
        return np.clip(img.data[0], 0.0, 1.0)

    # -- training path (Tensor in/out) ----------------------------------------

    def reconstruct(self, clips: Tensor) -> Tensor:
        """clips [B, T, H, W, C] -> reconstruction through encode+temporal+decode."""
        b, t = clips.data.shape[:2]
        flat = clips.reshape(b * t, *clips.data.shape[2:])
        pre = self.frame_encoder(flat)
        pre = pre.reshape(b, t, self.cfg.tokens_per_frame, self.cfg.token_dim)
        ctx = self.temporal(pre)
        rec = self.frame_decoder(ctx.reshape(b * t, self.cfg.tokens_per_frame,
                                             self.cfg.token_dim))
        return rec.reshape(*clips.data.shape)

    def _check_image(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float32)
        c = self.cfg
        if image.shape != (c.height, c.width, c.channels):
            raise ValueError(f"image shape {image.shape} != {(c.height, c.width, c.channels)}")
        if image.min() < -1e-6 or image.max() > 1 + 1e-6:
            raise ValueError("image values must lie in [0, 1]")
        return image

    def _check_clip(self, images: np.ndarray) -> np.ndarray:
        images = np.asarray(images, dtype=np.float32)
        if images.ndim != 4:
            raise ValueError("clip must be [T, H, W, C]")
        for i in range(images.shape[0]):
            self._check_image(images[i])
        return images


def patchify(frames: Tensor, cfg: VideoCodecConfig) -> Tensor:
    b, h, w, c = frames.data.shape
    p = cfg.patch_size
    x = frames.reshape(b, h // p, p, w // p, p, c)
    x = x.transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b, cfg.num_patches, p * p * c)


def unpatchify(patches: Tensor, cfg: VideoCodecConfig) -> Tensor:
    b = patches.data.shape[0]
    p = cfg.patch_size
    hp, wp = cfg.height // p, cfg.width // p
    x = patches.reshape(b, hp, wp, p, p, cfg.channels)
    x = x.transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b, cfg.height, cfg.width, cfg.channels)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    mse = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    if mse == 0:
        return float("inf")
    return -10.0 * np.log10(mse)
