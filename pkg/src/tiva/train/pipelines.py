"""Two-stage backbone training: audio-only fine-tuning, then audio-visual.

Stage "lsm" minimizes NLL over the agent's delayed audio tokens with video
channels held at empty sentinels.  Stage "lsvm" initializes from an lsm
checkpoint (gated) and adds the diffusion criterion over agent video tokens;
its first 30% of steps draw from the third-person analog before the full mix
opens up.  Interlocutor tokens are context only and never contribute loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..audio.codec import AudioCodec
from ..backbone import (DuplexBackbone, TokenizedDialogue,
                        assemble_training_batch)
from ..config import BackboneConfig
from ..control import PromptEncoder, positions_to_trajectory
from ..nn import AdamW, Tensor, no_grad, warmup_cosine
from ..nn.checkpoint import config_hash
from ..toyworld.world import DialogueSample
from ..video.codec import VideoCodec

STAGES = ("lsm", "lsvm")


@dataclass
class TrainConfig:
    stage: str = "lsm"
    batch_size: int = 4
    steps: int = 200
    crop_frames: int = 24
    learning_rate: float = 6e-4
    warmup: int = 40
    nll_weight: float = 1.0
    diffusion_weight: float = 1.0
    early_stage_fraction: float = 0.3   # lsvm: third-person-analog phase
    seed: int = 0

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}")


@dataclass
class LossReport:
    steps: list[int] = field(default_factory=list)
    audio_nll: list[float] = field(default_factory=list)
    diffusion_mse: list[float] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)
    mask_counts: dict = field(default_factory=dict)

    def record(self, step: int, nll: float, mse: float, gnorm: float) -> None:
        if not (np.isfinite(nll) and np.isfinite(mse)):
            raise RuntimeError(f"non-finite loss at step {step}: nll={nll} mse={mse}")
        self.steps.append(step)
        self.audio_nll.append(nll)
        self.diffusion_mse.append(mse)
        self.grad_norm.append(gnorm)


def tokenize_dialogue(sample: DialogueSample, audio_codec: AudioCodec,
                      video_codec: VideoCodec | None,
                      prompt_encoder: PromptEncoder,
                      include_video: bool = True) -> TokenizedDialogue:
    """Run the frozen codecs over a rendered sample."""
    ag_grid = audio_codec.encode(sample.agent_audio)
    ih_grid = audio_codec.encode(sample.human_audio)
    ag_video = ih_video = None
    if include_video and video_codec is not None:
        ag_video = np.stack([f.tokens for f in video_codec.encode_clip(sample.agent_frames)])
        ih_video = np.stack([f.tokens for f in video_codec.encode_clip(sample.human_frames)])
    traj = positions_to_trajectory(sample.joints)
    prompt = prompt_encoder.encode(sample.prompt_text if not sample.masks.get("P") else "")
    t = sample.num_frames
    return TokenizedDialogue(
        ag_audio=ag_grid.tokens, ih_audio=ih_grid.tokens,
        ag_video=ag_video, ih_video=ih_video,
        traj=traj.velocities.reshape(t, -1),
        prompt_vec=prompt.vector,
        speaker_id=sample.speaker_id,
        masks=dict(sample.masks),
        agent_activity=sample.agent_activity,
    )


def _loss_terms(model: DuplexBackbone, batch, rng, diffusion_weight: float,
                nll_weight: float):
    logits, video_cond = model.forward_train(batch)
    nll = model.audio_nll(logits, batch.audio_targets)
    loss = nll * nll_weight
    mse_val = 0.0
    if diffusion_weight > 0 and batch.video_loss_mask.any():
        b, t = batch.batch_frames
        l2 = model.cfg.video.tokens_per_frame
        flat_cond = video_cond.reshape(b * t * l2, model.cfg.model_dim)
        flat_targets = batch.video_targets.reshape(b * t * l2, model.cfg.video.token_dim)
        w = np.repeat(batch.video_loss_mask.reshape(-1), l2)
        mse = model.diffusion.loss(flat_targets, flat_cond, rng, weights=w)
        loss = loss + mse * diffusion_weight
        mse_val = float(mse.data)
    return loss, float(nll.data), mse_val


def evaluate_losses(model: DuplexBackbone, dialogues: list[TokenizedDialogue],
                    cfg: BackboneConfig, crop_frames: int, seed: int = 0,
                    diffusion_weight: float = 1.0) -> tuple[float, float]:
    """Teacher-forced eval: (audio NLL, diffusion MSE) on given dialogues."""
    rng = np.random.default_rng(seed)
    with no_grad():
        batch = assemble_training_batch(dialogues, cfg, crop_frames, rng,
                                        starts=[0] * len(dialogues))
        logits, video_cond = model.forward_train(batch)
        nll = float(model.audio_nll(logits, batch.audio_targets).data)
    mse = 0.0
    if diffusion_weight > 0 and batch.video_loss_mask.any():
        b, t = batch.batch_frames
        l2 = cfg.video.tokens_per_frame
        with no_grad():
            m = model.diffusion.loss(
                batch.video_targets.reshape(-1, cfg.video.token_dim),
                video_cond.reshape(-1, cfg.model_dim), rng,
                weights=np.repeat(batch.video_loss_mask.reshape(-1), l2))
        mse = float(m.data)
    return nll, mse


def _train_loop(model: DuplexBackbone, pick_batch, cfg: TrainConfig,
                diffusion_weight: float) -> LossReport:
    params = model.parameters()
    opt = AdamW(params, lr=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed + 17)
    report = LossReport()
    for step in range(cfg.steps):
        opt.lr = warmup_cosine(step, cfg.steps, cfg.learning_rate, cfg.warmup)
        batch = pick_batch(step)
        loss, nll, mse = _loss_terms(model, batch, rng, diffusion_weight,
                                     cfg.nll_weight)
        opt.zero_grad()
        loss.backward()
        gsq = 0.0
        for p in params.values():
            if p.grad is not None:
                gsq += float((p.grad.astype(np.float64) ** 2).sum())
        report.record(step, nll, mse, float(np.sqrt(gsq)))
        opt.step()
    return report


def train_stage1(model: DuplexBackbone, dialogues: list[TokenizedDialogue],
                 cfg: TrainConfig) -> LossReport:
    """Audio-only fine-tuning: video channels must be absent (empty tokens)."""
    if cfg.stage != "lsm":
        raise ValueError("train_stage1 requires stage 'lsm'")
    for i, d in enumerate(dialogues):
        if d.ag_video is not None or d.ih_video is not None:
            raise ValueError(f"dialogue {i} carries video channels; lsm is audio-only")
        if d.prompt_vec is None:
            raise ValueError(f"dialogue {i} missing prompt label")
    rng = np.random.default_rng(cfg.seed)

    def pick(step):
        idx = rng.integers(0, len(dialogues), size=cfg.batch_size)
        return assemble_training_batch([dialogues[j] for j in idx], model.cfg,
                                       cfg.crop_frames, rng)

    return _train_loop(model, pick, cfg, diffusion_weight=0.0)


def train_stage2(model: DuplexBackbone, dialogues: list[TokenizedDialogue],
                 cfg: TrainConfig, stage1_meta: dict | None) -> LossReport:
    """Audio-visual training; requires a stage-1 checkpoint lineage."""
    if cfg.stage != "lsvm":
        raise ValueError("train_stage2 requires stage 'lsvm'")
    if not stage1_meta or stage1_meta.get("stage") != "lsm":
        raise ValueError("stage 'lsvm' requires an 'lsm' checkpoint to initialize from")
    rng = np.random.default_rng(cfg.seed)
    third = [d for d in dialogues if d.masks.get("stage") == "third_person"
             or (d.masks.get("s") and d.masks.get("P") and d.masks.get("r"))]
    pool_early = third if third else dialogues
    cut = int(cfg.steps * cfg.early_stage_fraction)

    def pick(step):
        pool = pool_early if step < cut else dialogues
        idx = rng.integers(0, len(pool), size=cfg.batch_size)
        return assemble_training_batch([pool[j] for j in idx], model.cfg,
                                       cfg.crop_frames, rng)

    return _train_loop(model, pick, cfg, diffusion_weight=cfg.diffusion_weight)


def backbone_config_hash(cfg: BackboneConfig) -> str:
    from ..config import config_dict
    return config_hash(config_dict(cfg))
