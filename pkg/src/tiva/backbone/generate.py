"""Closed-loop per-frame generation over the KV-cached decode core.

Per frame: one batched pass over the condition slots (prompt, trajectory,
speaker, interlocutor audio/video), then the agent audio slots one codec step
at a time (each step samples all K delayed codebooks in parallel and feeds
the next step), then one batched pass over the agent video slots whose hidden
states condition the diffusion sampler for all tokens simultaneously.
Sampled outputs re-enter the context for the next frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..config import SamplingParams
from ..nn import no_grad
from .diffusion import token_rng_streams
from .model import DuplexBackbone


@dataclass
class FrameOutput:
    frame_index: int
    delayed_audio: np.ndarray            # [na, K] tokens emitted this frame
    completed_audio: np.ndarray | None   # [na, K] raw codec steps finished (lags 1 frame)
    video_tokens: np.ndarray             # [L2, token_dim]
    context_manifest: dict = field(default_factory=dict)
    audio_logits: np.ndarray | None = None    # [na, K, V] when collect_logits
    video_hidden: np.ndarray | None = None    # [L2, d] diffusion conditions


def sample_categorical(logits: np.ndarray, rng: np.random.Generator,
                       temperature: float = 1.0, top_p: float = 1.0) -> int:
    """Nucleus sampling from raw logits; temperature 0 means argmax."""
    if temperature <= 0:
        return int(np.argmax(logits))
    z = logits.astype(np.float64) / temperature
    z -= z.max()
    p = np.exp(z)
    p /= p.sum()
    if top_p < 1.0:
        order = np.argsort(p)[::-1]
        csum = np.cumsum(p[order])
        keep = csum <= top_p
        keep[0] = True
        mask = np.zeros_like(p, dtype=bool)
        mask[order[keep]] = True
        p = np.where(mask, p, 0.0)
        p /= p.sum()
    return int(rng.choice(p.size, p=p))


class FrameGenerator:
    """Owns one session's model context; strictly sequential frames."""

    def __init__(self, model: DuplexBackbone, params: SamplingParams | None = None,
                 core_backend: str | None = None):
        from ..fast import get_decoder_class
        self.model = model
        self.cfg = model.cfg
        self.layout = model.layout
        self.params = params or SamplingParams()
        self.window = self.params.context_window_frames
        slots = self.layout.slots_per_frame
        capacity = (self.window + 2) * slots
        self.core = get_decoder_class(core_backend)(model.export_core_weights(), capacity)
        self.final_norm_w = model.final_norm.weight.data
        na = self.layout.num_audio_slots
        self.emit_lag = -(-(model.cfg.audio.num_codebooks - 1) // na)  # frames
        self.rng = np.random.default_rng(self.params.seed)
        self.reset()

    def _final_norm(self, x: np.ndarray) -> np.ndarray:
        ms = (x * x).mean(axis=-1, keepdims=True)
        return x * self.final_norm_w / np.sqrt(ms + 1e-5)

    def reset(self, initial_video_tokens: np.ndarray | None = None) -> None:
        self.core.reset()
        self.frame_index = 0
        na, k = self.layout.num_audio_slots, self.cfg.audio.num_codebooks
        self.delayed_rows: list[np.ndarray] = []     # one [K] row per codec slot
        self.ih_audio_hist: list[np.ndarray] = []    # raw interlocutor rows [K]
        self.prev_video = initial_video_tokens
        self.initial_video = initial_video_tokens
        self.rng = np.random.default_rng(self.params.seed)

    # -- embedding helpers (numpy, frozen weights) -----------------------------

    def _np_embed_audio(self, tokens: np.ndarray) -> np.ndarray:
        out = None
        for kk, emb in enumerate(self.model.audio_emb):
            e = emb.weight.data[tokens[..., kk]]
            out = e if out is None else out + e
        return out

    def _np_linear(self, lin, x: np.ndarray) -> np.ndarray:
        y = x @ lin.weight.data
        return y + lin.bias.data if lin.bias is not None else y

    def _cond_block(self, bundle, ih_audio_rows: np.ndarray,
                    ih_video_tokens: np.ndarray | None) -> np.ndarray:
        """Assemble [3 + na + L2, d] condition-slot inputs for this frame."""
        m = self.model
        cfg = self.cfg
        lay = self.layout
        d = cfg.model_dim
        out = np.empty((3 + lay.num_audio_slots + lay.num_video_slots, d), np.float32)
        prompt = bundle.prompt
        if prompt is not None and prompt.valid:
            out[0] = self._np_linear(m.prompt_lift, prompt.vector)
        else:
            out[0] = m.prompt_sentinel.data
        if bundle.trajectory_step is not None:
            vel = np.asarray(bundle.trajectory_step, np.float32).reshape(-1)
            cond = self._np_linear(m.traj_encoder.proj, vel)
            out[1] = self._np_linear(m.traj_lift, cond)
        else:
            out[1] = m.traj_sentinel.data
        if bundle.speaker.valid:
            out[2] = m.speaker_emb.weight.data[bundle.speaker.speaker_id]
        else:
            out[2] = m.speaker_sentinel.data
        out[3:3 + lay.num_audio_slots] = self._np_embed_audio(ih_audio_rows)
        if ih_video_tokens is not None:
            out[3 + lay.num_audio_slots:] = self._np_linear(m.ih_video_proj,
                                                            ih_video_tokens)
        else:
            out[3 + lay.num_audio_slots:] = m.ih_video_sentinel.data
        return out

    def _delayed_ih_rows(self) -> np.ndarray:
        """Delayed interlocutor rows for the previous frame's codec steps."""
        na = self.layout.num_audio_slots
        k = self.cfg.audio.num_codebooks
        empty = self.cfg.audio.empty_token
        out = np.full((na, k), empty, np.int64)
        if self.frame_index == 0:
            return out
        base = (self.frame_index - 1) * na
        for j in range(na):
            for kk in range(k):
                src = base + j - kk
                if 0 <= src < len(self.ih_audio_hist):
                    out[j, kk] = self.ih_audio_hist[src][kk]
        return out

    # -- the per-frame step ------------------------------------------------------

    def generate_frame(self, bundle, ih_audio_rows: np.ndarray | None = None,
                       ih_video_tokens: np.ndarray | None = None,
                       teacher_audio: np.ndarray | None = None,
                       teacher_video: np.ndarray | None = None,
                       diffusion_steps: int | None = None,
                       collect_logits: bool = False) -> FrameOutput:
        """bundle: ConditionBundle; ih_audio_rows [na, K] raw interlocutor codec
        tokens heard during the previous frame (None -> silence/empty);
        ih_video_tokens [L2, token_dim] seen during the previous frame."""
        m = self.model
        cfg = self.cfg
        lay = self.layout
        i = self.frame_index
        na, k = lay.num_audio_slots, cfg.audio.num_codebooks
        l2 = lay.num_video_slots
        slots = lay.slots_per_frame
        base_pos = i * slots
        empty = cfg.audio.empty_token

        # rows passed at frame i are the interlocutor's codec steps heard
        # during frame i-1; they land at content positions (i-1)*na..i*na-1
        if i >= 1:
            if ih_audio_rows is not None:
                for row in np.asarray(ih_audio_rows, np.int64):
                    self.ih_audio_hist.append(row)
            else:
                for _ in range(na):
                    self.ih_audio_hist.append(np.full(k, empty, np.int64))

        if i >= self.window:
            self.core.set_window((i - self.window + 1) * slots)

        with no_grad():
            audio_slot0 = lay.ag_audio_slots.start
            frame_rows = np.empty((na, k), np.int64)
            logits_out = np.empty((na, k, cfg.audio.codebook_size + 1), np.float32) \
                if collect_logits else None
            head_w = [(h.weight.data, h.bias.data) for h in m.audio_heads]

            def audio_input(j: int) -> np.ndarray:
                s = i * na + j
                prev = self.delayed_rows[s - 1] if s >= 1 else np.full(k, empty, np.int64)
                return self._np_embed_audio(prev[None]) + m.slot_emb.data[audio_slot0 + j]

            def sample_step(j: int, h: np.ndarray) -> None:
                h = self._final_norm(h)
                for kk in range(k):
                    logits = h @ head_w[kk][0] + head_w[kk][1]
                    if logits_out is not None:
                        logits_out[j, kk] = logits
                    if teacher_audio is None:
                        frame_rows[j, kk] = sample_categorical(
                            logits, self.rng, self.params.audio_temperature,
                            self.params.audio_top_p)
                if teacher_audio is not None:
                    frame_rows[j] = teacher_audio[j]
                self.delayed_rows.append(frame_rows[j].copy())

            # pass 1: condition slots plus the first audio step (its input is
            # the previous frame's final sample, known at frame start)
            cond = self._cond_block(bundle, self._delayed_ih_rows(), ih_video_tokens)
            cond = cond + m.slot_emb.data[:3 + na + l2]
            x1 = np.concatenate([cond, audio_input(0)], axis=0)
            h1 = self.core.decode(x1, base_pos + np.arange(x1.shape[0]))
            sample_step(0, h1[-1])

            # middle audio steps, one token each
            for j in range(1, na - 1):
                h = self.core.decode(audio_input(j),
                                     np.array([base_pos + audio_slot0 + j]))[0]
                sample_step(j, h)

            # final pass: last audio step together with all video query slots
            # (video inputs are the previous frame's tokens, independent of
            # this frame's audio samples)
            if self.prev_video is not None:
                v_in = self._np_linear(m.ag_video_proj, self.prev_video)
            else:
                v_in = np.broadcast_to(m.ag_video_start.data, (l2, cfg.model_dim)).copy()
            v_in = v_in + m.slot_emb.data[lay.ag_video_slots]
            x3 = np.concatenate([audio_input(na - 1), v_in], axis=0)
            pos3 = np.concatenate([[base_pos + audio_slot0 + na - 1],
                                   base_pos + lay.ag_video_slots.start + np.arange(l2)])
            h3 = self.core.decode(x3, pos3)
            sample_step(na - 1, h3[0])
            v_hidden = self._final_norm(h3[1:])
            if teacher_video is not None:
                video_tokens = teacher_video
            elif i == 0 and self.initial_video is not None:
                video_tokens = self.initial_video
            else:
                streams = token_rng_streams(self.params.seed, i, l2)
                steps = diffusion_steps or self.params.diffusion_steps
                video_tokens = m.diffusion.sample(v_hidden, streams, steps)

        self.prev_video = video_tokens
        completed = None
        emit_frame = i - self.emit_lag  # raw steps of this earlier frame are done
        if emit_frame >= 0:
            lo_raw = emit_frame * na
            completed = np.empty((na, k), np.int64)
            for j in range(na):
                for kk in range(k):
                    completed[j, kk] = self.delayed_rows[lo_raw + j + kk][kk]
        manifest = {
            "frame": i,
            "ih_audio_steps": list(range(max(0, (i - 1) * na), i * na)),
            "ih_video_frame": i - 1 if ih_video_tokens is not None else None,
            "window_start_frame": max(0, i - self.window + 1),
        }
        self.frame_index += 1
        return FrameOutput(i, frame_rows, completed, video_tokens, manifest,
                           audio_logits=logits_out,
                           video_hidden=v_hidden if collect_logits else None)
