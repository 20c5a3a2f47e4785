"""Reward model: the policy architecture with a scalar regression head.

Initialized from a fine-tuned policy checkpoint (every non-head weight equal
at step 0); the score of a dialogue segment is read from the final position's
hidden state.  Trained with the pairwise logistic objective
-log(sigmoid(r_w - r_l)) over synthetic preference pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..audio.codec import AudioCodec
from ..backbone import DuplexBackbone, TokenizedDialogue, assemble_training_batch
from ..config import BackboneConfig
from ..control import PromptEncoder
from ..nn import AdamW, Linear, Module, Tensor, no_grad, warmup_cosine
from ..toyworld.prefs import AgentSegment, PreferencePair
from ..video.codec import VideoCodec

REWARD_SEGMENT_FRAMES = 48  # one question-answer round at toy scale


class RewardModel(Module):
    def __init__(self, cfg: BackboneConfig, seed: int = 0):
        self.cfg = cfg
        self.backbone = DuplexBackbone(cfg, seed=seed)
        rng = np.random.default_rng(seed + 1)
        self.head = Linear(rng, cfg.model_dim, 1, zero_init=True)

    def init_from_policy(self, policy_state: dict) -> None:
        self.backbone.load_state(policy_state)

    def scores(self, batch) -> Tensor:
        """Assembled batch -> scalar score per sequence [B]."""
        hidden = self.backbone.hidden_states(batch)
        b = hidden.data.shape[0]
        final = hidden[:, -1, -1, :]
        return self.head(final).reshape(b)

    def score_segment(self, dialogue: TokenizedDialogue) -> float:
        batch = assemble_training_batch([dialogue], self.cfg, dialogue.num_frames,
                                        np.random.default_rng(0), starts=[0])
        with no_grad():
            return float(self.scores(batch).data[0])


def reward_loss(score_w: Tensor, score_l: Tensor) -> Tensor:
    """-log(sigmoid(r_w - r_l)), averaged over the batch."""
    diff = score_w - score_l
    return -(diff.sigmoid().log()).mean()


def segment_dialogue(pair_context, segment: AgentSegment, start: int,
                     audio_codec: AudioCodec, video_codec: VideoCodec,
                     prompt_encoder: PromptEncoder) -> TokenizedDialogue:
    """Tokenize one ranked continuation: interlocutor streams from the shared
    context, agent streams from the candidate segment.  Controls stay empty:
    the reward model judges raw behavior."""
    t = segment.frames.shape[0]
    end = start + t
    spf = audio_codec.cfg.hop * audio_codec.cfg.frames_per_video_frame
    ih_audio = audio_codec.encode(pair_context.human_audio[start * spf:end * spf])
    ag_audio = audio_codec.encode(np.clip(segment.audio, -1, 1))
    ih_video = np.stack([f.tokens for f in
                         video_codec.encode_clip(pair_context.human_frames[start:end])])
    ag_video = np.stack([f.tokens for f in video_codec.encode_clip(segment.frames)])
    return TokenizedDialogue(
        ag_audio=ag_audio.tokens, ih_audio=ih_audio.tokens,
        ag_video=ag_video, ih_video=ih_video,
        traj=np.zeros((t, 6), np.float32),
        prompt_vec=np.zeros(prompt_encoder.cfg.prompt_dim, np.float32),
        speaker_id=0,
        masks={"s": True, "r": True, "P": True},
    )


@dataclass
class RewardReport:
    losses: list[float] = field(default_factory=list)
    train_accuracy: float = 0.0
    holdout_accuracy: float = 0.0


def tokenize_pairs(pairs: list[PreferencePair], audio_codec: AudioCodec,
                   video_codec: VideoCodec, prompt_encoder: PromptEncoder,
                   segment_frames: int = REWARD_SEGMENT_FRAMES):
    out = []
    for p in pairs:
        start = p.context.num_frames - p.preferred.frames.shape[0]
        w = segment_dialogue(p.context, p.preferred, start, audio_codec,
                             video_codec, prompt_encoder)
        l = segment_dialogue(p.context, p.rejected, start, audio_codec,
                             video_codec, prompt_encoder)
        out.append((w, l, p.criterion))
    return out


def pairwise_accuracy(model: RewardModel, tokenized_pairs) -> float:
    wins = 0.0
    for w, l, _ in tokenized_pairs:
        sw = model.score_segment(w)
        sl = model.score_segment(l)
        wins += 1.0 if sw > sl else (0.5 if sw == sl else 0.0)
    return wins / max(len(tokenized_pairs), 1)


def train_reward_model(model: RewardModel, tokenized_pairs, steps: int,
                       batch_pairs: int = 2, lr: float = 5e-5, seed: int = 0,
                       holdout=None) -> RewardReport:
    rng = np.random.default_rng(seed)
    params = model.parameters()
    opt = AdamW(params, lr=lr)
    report = RewardReport()
    t = tokenized_pairs[0][0].num_frames
    for step in range(steps):
        opt.lr = warmup_cosine(step, steps, lr, warmup=min(20, steps // 5))
        picks = rng.integers(0, len(tokenized_pairs), size=batch_pairs)
        seqs = []
        for j in picks:
            seqs.extend([tokenized_pairs[j][0], tokenized_pairs[j][1]])
        batch = assemble_training_batch(seqs, model.cfg, t, rng,
                                        starts=[0] * len(seqs))
        scores = model.scores(batch)
        sw = scores[0:2 * batch_pairs:2]
        sl = scores[1:2 * batch_pairs:2]
        loss = reward_loss(sw, sl)
        lval = float(loss.data)
        if not np.isfinite(lval):
            raise RuntimeError(f"reward training diverged at step {step}")
        report.losses.append(lval)
        opt.zero_grad()
        loss.backward()
        opt.step()
    report.train_accuracy = pairwise_accuracy(model, tokenized_pairs[:64])
    if holdout:
        report.holdout_accuracy = pairwise_accuracy(model, holdout)
    return report
