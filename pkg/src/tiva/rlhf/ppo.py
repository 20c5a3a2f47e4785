"""PPO fine-tuning with a KL-penalized reward.

The effective reward of a rollout is the reward-model score minus beta times
the KL from the frozen pre-RL policy, estimated per token over the discrete
audio channel (the continuous video channel has no closed-form token KL and
keeps its supervised head frozen during RL).  Advantages come from a learned
value head with GAE; updates use the standard clipped surrogate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..audio.codec import AudioCodec
from ..backbone import DuplexBackbone, assemble_training_batch
from ..backbone.layout import TokenizedDialogue
from ..config import SamplingParams
from ..control import PromptEncoder
from ..nn import AdamW, Linear, Module, Tensor, no_grad
from ..toyworld.world import DialogueSample
from ..video.codec import VideoCodec


@dataclass
class PpoConfig:
    beta: float = 0.01              # KL penalty coefficient
    clip_ratio: float = 0.2
    rollout_frames: int = 48
    rollouts_per_batch: int = 8
    minibatch_rollouts: int = 4
    epochs_per_batch: int = 2
    value_loss_weight: float = 0.5
    gamma: float = 1.0
    gae_lambda: float = 0.95
    learning_rate: float = 2e-5
    kl_stop: float = 5.0            # nats per token, early-stop cap
    seed: int = 0

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if not 0 < self.clip_ratio < 1:
            raise ValueError("clip ratio must lie in (0, 1)")


def gae_advantages(rewards: np.ndarray, values: np.ndarray, gamma: float,
                   lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation over one sequence (terminal at end)."""
    t = rewards.shape[0]
    adv = np.zeros(t, np.float64)
    last = 0.0
    for i in reversed(range(t)):
        next_v = values[i + 1] if i + 1 < t else 0.0
        delta = rewards[i] + gamma * next_v - values[i]
        last = delta + gamma * lam * last
        adv[i] = last
    returns = adv + values[:t]
    return adv.astype(np.float32), returns.astype(np.float32)


def clipped_surrogate(logp_new: Tensor, logp_old: np.ndarray, adv: np.ndarray,
                      clip: float) -> Tensor:
    """Pessimistic clipped policy objective (to be minimized)."""
    ratio = (logp_new - Tensor(logp_old)).exp()
    adv_t = Tensor(adv.astype(np.float32))
    unclipped = ratio * adv_t
    lo, hi = 1.0 - clip, 1.0 + clip
    # clip(ratio) via composed ops: lo + relu(ratio - lo) - relu(ratio - hi)
    r = ratio - lo
    r = (r + r.abs()) * 0.5
    s = ratio - hi
    s = (s + s.abs()) * 0.5
    clipped = (Tensor(np.float32(lo)) + r - s) * adv_t
    both = unclipped * 0.5 + clipped * 0.5 - (unclipped - clipped).abs() * 0.5  # elementwise min
    return -(both.mean())


class ValueHead(Module):
    def __init__(self, model_dim: int, seed: int = 0):
        self.proj = Linear(np.random.default_rng(seed), model_dim, 1, zero_init=True)

    def __call__(self, hidden: Tensor) -> Tensor:
        return self.proj(hidden)


@dataclass
class RolloutBuffer:
    dialogues: list[TokenizedDialogue] = field(default_factory=list)
    delayed_tokens: list[np.ndarray] = field(default_factory=list)  # [T, na, K] as sampled
    logp_old: list[np.ndarray] = field(default_factory=list)     # [T*na] per rollout
    logp_ref: list[np.ndarray] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)           # reward model scores
    kl_per_token: list[np.ndarray] = field(default_factory=list)

    def __len__(self):
        return len(self.dialogues)

    @property
    def mean_reward(self) -> float:
        return float(np.mean(self.rewards)) if self.rewards else 0.0

    @property
    def mean_kl(self) -> float:
        if not self.kl_per_token:
            return 0.0
        return float(np.mean(np.concatenate(self.kl_per_token)))


def _token_logprobs(logits: np.ndarray, tokens: np.ndarray) -> np.ndarray:
    """logits [T, na, K, V], tokens [T, na, K] -> summed-per-step logp [T*na]."""
    z = logits.astype(np.float64)
    z -= z.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    t, na, k, _ = logits.shape
    picked = np.take_along_axis(logp, tokens[..., None], axis=-1)[..., 0]
    return picked.sum(axis=-1).reshape(t * na)


def collect_rollouts(policy: DuplexBackbone, reference: DuplexBackbone,
                     score_fn, contexts: list[DialogueSample],
                     audio_codec: AudioCodec, video_codec: VideoCodec,
                     prompt_encoder: PromptEncoder, cfg: PpoConfig,
                     params: SamplingParams | None = None) -> RolloutBuffer:
    """Sample agent behavior for each context; log-probs under both policies.

    score_fn(TokenizedDialogue) -> float is the reward model hook.
    """
    from ..backbone.generate import FrameGenerator
    from ..control import AgentIdentity, ConditionBundle

    buf = RolloutBuffer()
    na = policy.cfg.audio.frames_per_video_frame
    t_frames = cfg.rollout_frames
    for ci, sample in enumerate(contexts):
        try:
            sp = params or SamplingParams()
            sp = SamplingParams(audio_temperature=1.0, audio_top_p=1.0,
                                diffusion_steps=sp.diffusion_steps,
                                context_window_frames=sp.context_window_frames,
                                seed=cfg.seed * 1000 + ci)
            ih_grid = audio_codec.encode(sample.human_audio)
            ih_video = np.stack([f.tokens for f in
                                 video_codec.encode_clip(sample.human_frames)])
            bundle = ConditionBundle(prompt=prompt_encoder.encode(""),
                                     trajectory_step=None,
                                     speaker=AgentIdentity(None))
            gen_pi = FrameGenerator(policy, sp)
            logits_pi = []
            sampled = []
            videos = []
            for i in range(t_frames):
                out = gen_pi.generate_frame(
                    bundle,
                    ih_audio_rows=ih_grid.tokens[(i - 1) * na:i * na] if i >= 1 else None,
                    ih_video_tokens=ih_video[i - 1] if i >= 1 else None,
                    collect_logits=True)
                logits_pi.append(out.audio_logits)
                sampled.append(out.delayed_audio)
                videos.append(out.video_tokens)
            tokens = np.stack(sampled)               # [T, na, K]
            video_tokens = np.stack(videos)          # [T, L2, dim]
            # reference pass: teacher-forced on the sampled behavior
            gen_ref = FrameGenerator(reference, sp)
            logits_ref = []
            for i in range(t_frames):
                out = gen_ref.generate_frame(
                    bundle,
                    ih_audio_rows=ih_grid.tokens[(i - 1) * na:i * na] if i >= 1 else None,
                    ih_video_tokens=ih_video[i - 1] if i >= 1 else None,
                    teacher_audio=tokens[i], teacher_video=video_tokens[i],
                    collect_logits=True)
                logits_ref.append(out.audio_logits)
            lp_pi = _token_logprobs(np.stack(logits_pi), tokens)
            lp_ref = _token_logprobs(np.stack(logits_ref), tokens)

            from ..backbone.delay import invert_delay
            raw = np.clip(tokens.reshape(-1, tokens.shape[-1]), 0,
                          policy.cfg.audio.empty_token)
            dlg = TokenizedDialogue(
                ag_audio=invert_delay(np.concatenate(
                    [raw, np.full((policy.cfg.audio.num_codebooks - 1, raw.shape[1]),
                                  policy.cfg.audio.empty_token, np.int64)]),
                    num_steps=raw.shape[0]),
                ih_audio=ih_grid.tokens[:t_frames * na],
                ag_video=video_tokens,
                ih_video=ih_video[:t_frames],
                traj=np.zeros((t_frames, 6), np.float32),
                prompt_vec=np.zeros(policy.cfg.control.prompt_dim, np.float32),
                speaker_id=0,
                masks={"s": True, "r": True, "P": True},
            )
            buf.dialogues.append(dlg)
            buf.delayed_tokens.append(tokens)
            buf.logp_old.append(lp_pi)
            buf.logp_ref.append(lp_ref)
            buf.kl_per_token.append(lp_pi - lp_ref)
            buf.rewards.append(float(score_fn(dlg)))
        except Exception as e:  # pragma: no cover - rollout failures are logged, not fatal
            import logging
            logging.getLogger(__name__).warning("rollout %d failed: %s", ci, e)
    return buf


@dataclass
class PpoStats:
    mean_reward: float
    mean_kl: float
    policy_loss: float
    value_loss: float
    early_stopped: bool = False


def ppo_update(buffer: RolloutBuffer, policy: DuplexBackbone, value_head: ValueHead,
               cfg: PpoConfig, opt: AdamW | None = None) -> PpoStats:
    """One PPO optimization pass over the buffer (audio tokens only)."""
    if len(buffer) == 0:
        raise ValueError("empty rollout buffer")
    if opt is None:
        params = {**policy.parameters(),
                  **{f"value.{k}": v for k, v in value_head.parameters().items()}}
        opt = AdamW(params, lr=cfg.learning_rate)
    lay = policy.layout
    na = lay.num_audio_slots
    t_frames = buffer.dialogues[0].num_frames
    rng = np.random.default_rng(cfg.seed)

    def patch_audio(batch, chunk) -> None:
        """Train on the exact delayed rows that were sampled (the re-derived
        delay view would pad over ramp-in rows the policy actually emitted)."""
        empty = policy.cfg.audio.empty_token
        for bi, idx in enumerate(chunk):
            tok = buffer.delayed_tokens[idx]         # [T, na, K]
            batch.audio_targets[bi] = tok
            flat = tok.reshape(t_frames * na, -1)
            prev = np.concatenate([np.full((1, flat.shape[1]), empty, np.int64),
                                   flat[:-1]])
            batch.ag_audio_in[bi] = prev.reshape(t_frames, na, -1)

    # effective reward: score minus beta * summed KL, spread per token via GAE
    all_adv, all_ret = [], []
    for idx in range(len(buffer)):
        kl = buffer.kl_per_token[idx]
        rewards = -cfg.beta * kl.copy()
        rewards[-1] += buffer.rewards[idx]
        with no_grad():
            batch = assemble_training_batch([buffer.dialogues[idx]], policy.cfg,
                                            t_frames, rng, starts=[0])
            patch_audio(batch, [idx])
            hidden = policy.hidden_states(batch)
            ah = hidden.data[0, :, lay.ag_audio_slots, :].reshape(t_frames * na, -1)
            values = (ah @ value_head.proj.weight.data).reshape(-1) \
                + value_head.proj.bias.data[0]
        adv, ret = gae_advantages(rewards, values, cfg.gamma, cfg.gae_lambda)
        all_adv.append(adv)
        all_ret.append(ret)
    flat_adv = np.concatenate(all_adv)
    std = flat_adv.std() + 1e-8
    all_adv = [(a - flat_adv.mean()) / std for a in all_adv]

    mean_kl = buffer.mean_kl
    if abs(mean_kl) > cfg.kl_stop:
        return PpoStats(buffer.mean_reward, mean_kl, 0.0, 0.0, early_stopped=True)

    pol_losses, val_losses = [], []
    order = np.arange(len(buffer))
    for _ in range(cfg.epochs_per_batch):
        rng.shuffle(order)
        for lo in range(0, len(order), cfg.minibatch_rollouts):
            chunk = order[lo:lo + cfg.minibatch_rollouts]
            dialogues = [buffer.dialogues[i] for i in chunk]
            batch = assemble_training_batch(dialogues, policy.cfg, t_frames, rng,
                                            starts=[0] * len(chunk))
            patch_audio(batch, chunk)
            logits, _ = policy.forward_train(batch)
            b = len(chunk)
            v = logits.data.shape[-1]
            from ..nn import log_softmax
            logp = log_softmax(logits.reshape(b * t_frames * na,
                                              policy.cfg.audio.num_codebooks, v))
            targets = batch.audio_targets.reshape(b * t_frames * na,
                                                  policy.cfg.audio.num_codebooks)
            picked = logp[np.arange(targets.shape[0])[:, None],
                          np.arange(targets.shape[1])[None, :], targets]
            logp_new = picked.sum(axis=1).reshape(b, t_frames * na)
            lp_old = np.stack([buffer.logp_old[i] for i in chunk])
            adv = np.stack([all_adv[i] for i in chunk])
            ret = np.stack([all_ret[i] for i in chunk])
            pol = clipped_surrogate(logp_new.reshape(-1),
                                    lp_old.reshape(-1).astype(np.float32),
                                    adv.reshape(-1), cfg.clip_ratio)
            hidden = policy.hidden_states(batch)
            ah = hidden[:, :, lay.ag_audio_slots, :].reshape(
                b * t_frames * na, policy.cfg.model_dim)
            vals = value_head(ah).reshape(b, t_frames * na)
            vloss = ((vals - Tensor(ret.astype(np.float32))) ** 2.0).mean()
            loss = pol + vloss * cfg.value_loss_weight
            opt.zero_grad()
            loss.backward()
            opt.step()
            pol_losses.append(float(pol.data))
            val_losses.append(float(vloss.data))
    return PpoStats(buffer.mean_reward, mean_kl,
                    float(np.mean(pol_losses)), float(np.mean(val_losses)))
