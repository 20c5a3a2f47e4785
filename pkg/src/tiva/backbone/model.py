"""The frame-interleaved transformer decoder over duplex A/V token streams.

One backbone step covers one video frame: condition slots, then agent audio
slots (categorical heads over delayed codebooks, all K emitted in parallel
per slot), then agent video slots (hidden states feed the diffusion head).
The same assembly code drives teacher-forced training and the KV-cached
generation path, which is what makes the two provably agree.
"""

from __future__ import annotations

import numpy as np

from ..config import BackboneConfig
from ..control import TrajectoryEncoder
from ..nn import (AttentionConfig, Embedding, Linear, Module, RMSNorm, Tensor,
                  TransformerBlock, cross_entropy, log_softmax)
from ..nn.modules import trunc_normal
from .diffusion import DiffusionHead, DiffusionSchedule
from .layout import AssembledBatch, FrameLayout


class DuplexBackbone(Module):
    def __init__(self, cfg: BackboneConfig, seed: int = 0):
        self.cfg = cfg
        self.layout = FrameLayout.from_config(cfg)
        rng = np.random.default_rng(seed)
        d = cfg.model_dim
        k = cfg.audio.num_codebooks
        vocab = cfg.audio.codebook_size + 1  # + empty/pad sentinel index

        self.prompt_lift = Linear(rng, cfg.control.prompt_dim, d)
        self.traj_encoder = TrajectoryEncoder(rng, cfg.control)
        self.traj_lift = Linear(rng, cfg.control.cond_dim, d)
        self.speaker_emb = Embedding(rng, cfg.control.num_speakers, d)
        self.audio_emb = [Embedding(rng, vocab, d) for _ in range(k)]
        self.ih_video_proj = Linear(rng, cfg.video.token_dim, d)
        self.ag_video_proj = Linear(rng, cfg.video.token_dim, d)

        self.prompt_sentinel = Tensor(trunc_normal(rng, (d,)), requires_grad=True)
        self.traj_sentinel = Tensor(trunc_normal(rng, (d,)), requires_grad=True)
        self.speaker_sentinel = Tensor(trunc_normal(rng, (d,)), requires_grad=True)
        self.ih_video_sentinel = Tensor(trunc_normal(rng, (d,)), requires_grad=True)
        self.ag_video_start = Tensor(trunc_normal(rng, (d,)), requires_grad=True)

        self.slot_emb = Tensor(trunc_normal(rng, (self.layout.slots_per_frame, d)),
                               requires_grad=True)
        # multi-query attention: 8 query heads, one shared K/V head; the KV
        # cache is what the 42 ms real-time budget pays for, so it stays small
        att = AttentionConfig(model_dim=d, num_heads=cfg.num_heads,
                              head_dim=cfg.head_dim, qk_norm_enabled=True,
                              causal=True, kv_heads=1)
        self.blocks = [TransformerBlock(rng, att, cfg.ff_mult) for _ in range(cfg.layers)]
        self.final_norm = RMSNorm(d)
        # zero-init heads: an untrained model emits exactly uniform distributions
        self.audio_heads = [Linear(rng, d, vocab, zero_init=True) for _ in range(k)]
        self.diffusion = DiffusionHead(
            rng, cfg.video.token_dim, d, width=cfg.diffusion_width,
            layers=cfg.diffusion_layers,
            schedule=DiffusionSchedule(train_steps=cfg.diffusion_train_steps))

    # -- embedding assembly (shared by training and generation) ---------------

    def embed_condition_slots(self, prompt, prompt_valid, traj, traj_valid,
                              speaker, speaker_valid, ih_audio, ih_video,
                              ih_video_valid) -> tuple[Tensor, Tensor, Tensor, Tensor, Tensor]:
        """Returns per-group embeddings with sentinel substitution.

        Shapes: prompt [..., prompt_dim], traj [..., traj_dim], speaker [...]
        ints, ih_audio [..., na, K] ints, ih_video [..., L2, token_dim];
        the *_valid arrays broadcast over the leading axes.
        """
        from ..nn import embedding

        def select(valid, yes: Tensor, no: Tensor) -> Tensor:
            v = np.asarray(valid, np.float32)[..., None]
            return yes * Tensor(v) + no * Tensor(1.0 - v)

        p = select(prompt_valid, self.prompt_lift(Tensor(prompt)), self.prompt_sentinel)
        tr_cond = self.traj_encoder.proj(Tensor(traj))
        tr = select(traj_valid, self.traj_lift(tr_cond), self.traj_sentinel)
        spk = select(speaker_valid, self.speaker_emb(np.asarray(speaker)),
                     self.speaker_sentinel)
        iha = self.embed_audio_tokens(ih_audio)
        ihv = select(ih_video_valid[..., None] * np.ones(ih_video.shape[:-1], np.float32),
                     self.ih_video_proj(Tensor(ih_video)), self.ih_video_sentinel)
        return p, tr, spk, iha, ihv

    def embed_audio_tokens(self, tokens: np.ndarray) -> Tensor:
        """Delayed token indices [..., K] -> summed embeddings [..., d]."""
        from ..nn import embedding
        out = None
        for kk, emb in enumerate(self.audio_emb):
            e = emb(tokens[..., kk])
            out = e if out is None else out + e
        return out

    def embed_agent_video(self, tokens: np.ndarray, valid) -> Tensor:
        v = np.asarray(valid, np.float32)
        v = (v[..., None] * np.ones(tokens.shape[:-1], np.float32))[..., None]
        return self.ag_video_proj(Tensor(tokens)) * Tensor(v) \
            + self.ag_video_start * Tensor(1.0 - v)

    # -- training forward -------------------------------------------------------

    def hidden_states(self, batch: AssembledBatch) -> Tensor:
        """Teacher-forced pass -> final-normed hidden states [B,T,slots,d]."""
        from ..nn import concat
        b, t = batch.batch_frames
        lay = self.layout
        d = self.cfg.model_dim

        p, tr, spk, iha, ihv = self.embed_condition_slots(
            batch.prompt, batch.prompt_valid, batch.traj, batch.traj_valid,
            batch.speaker, batch.speaker_valid, batch.ih_audio, batch.ih_video,
            batch.ih_video_valid)
        aga = self.embed_audio_tokens(batch.ag_audio_in)
        agv = self.embed_agent_video(batch.ag_video_in, batch.ag_video_in_valid)

        x = concat([
            p.reshape(b, t, 1, d),
            tr.reshape(b, t, 1, d),
            spk.reshape(b, t, 1, d),
            iha, ihv, aga, agv,
        ], axis=2)                              # [B, T, slots, d]
        x = x + self.slot_emb
        seq = t * lay.slots_per_frame
        x = x.reshape(b, seq, d)
        positions = np.arange(seq)
        for blk in self.blocks:
            x = blk(x, positions=positions)
        x = self.final_norm(x)
        return x.reshape(b, t, lay.slots_per_frame, d)

    def forward_train(self, batch: AssembledBatch) -> tuple[Tensor, Tensor]:
        """Teacher-forced pass -> (audio logits [B,T,na,K,V], video cond [B,T,L2,d])."""
        lay = self.layout
        x = self.hidden_states(batch)
        audio_hidden = x[:, :, lay.ag_audio_slots, :]
        video_cond = x[:, :, lay.ag_video_slots, :]
        from ..nn import stack
        logits = stack([head(audio_hidden) for head in self.audio_heads], axis=3)
        return logits, video_cond                # [B,T,na,K,V], [B,T,L2,d]

    def audio_nll(self, logits: Tensor, targets: np.ndarray,
                  mask: np.ndarray | None = None) -> Tensor:
        """Mean NLL in nats per (codec frame, codebook) token."""
        v = logits.data.shape[-1]
        flat = logits.reshape(-1, v)
        tflat = targets.reshape(-1)
        w = None if mask is None else np.broadcast_to(
            np.asarray(mask, np.float32)[..., None, None], targets.shape).reshape(-1)
        return cross_entropy(flat, tflat, w)

    def export_core_weights(self) -> dict:
        """Flat per-layer arrays for the KV-cached decode cores."""
        from ..nn.modules import export_transformer_blocks
        return export_transformer_blocks(self.blocks, self.final_norm)


def uniform_audio_nll(cfg: BackboneConfig) -> float:
    """NLL of the exactly-uniform head: ln(codebook_size + 1)."""
    return float(np.log(cfg.audio.codebook_size + 1))
