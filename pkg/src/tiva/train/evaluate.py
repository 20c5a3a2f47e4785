"""Behavioral evaluation against toyworld ground truth.

All metrics are computed from decoded model outputs versus the generating
script: speech activity from PCM energy, object position from pixel search,
identity from avatar hue.  Closed-loop rollouts feed the interlocutor's real
streams and let the agent's own samples re-enter its context.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..audio.codec import AudioCodec, AudioTokenGrid
from ..backbone import DuplexBackbone, FrameGenerator
from ..config import SamplingParams
from ..control import (AgentIdentity, ConditionBundle, PromptEncoder,
                       positions_to_trajectory)
from ..toyworld.world import SPEAKER_COLORS, DialogueSample
from ..video.codec import VideoCodec, VideoTokenFrame

ACTIVITY_RMS_THRESHOLD = 0.08
EVAL_SUITES = ("nll", "reconstruction", "turn_taking", "manipulation", "identity")


def frame_activity(pcm: np.ndarray, samples_per_frame: int,
                   threshold: float = ACTIVITY_RMS_THRESHOLD) -> np.ndarray:
    """Per-frame RMS energy gate over a PCM track."""
    n = pcm.size // samples_per_frame
    rms = np.sqrt((pcm[:n * samples_per_frame].reshape(n, samples_per_frame) ** 2).mean(axis=1))
    return rms > threshold


def f1_score(pred: np.ndarray, truth: np.ndarray) -> float:
    pred = np.asarray(pred, bool)
    truth = np.asarray(truth, bool)
    tp = float((pred & truth).sum())
    fp = float((pred & ~truth).sum())
    fn = float((~pred & truth).sum())
    if tp == 0:
        return 0.0
    prec = tp / (tp + fp)
    rec = tp / (tp + fn)
    return 2 * prec * rec / (prec + rec)


def locate_object(frame: np.ndarray, color=(0.95, 0.85, 0.2),
                  tol: float = 0.22) -> tuple[float, float] | None:
    """Centroid of pixels near the object color, or None."""
    dist = np.abs(frame - np.asarray(color, np.float32)).max(axis=2)
    mask = dist < tol
    if mask.sum() < 3:
        return None
    ys, xs = np.nonzero(mask)
    return float(xs.mean()), float(ys.mean())


def avatar_color(frame: np.ndarray) -> np.ndarray:
    """Mean color over the head disc region."""
    return frame[6:20, 9:24].reshape(-1, 3).mean(axis=0)


@dataclass
class Rollout:
    sample: DialogueSample
    agent_pcm: np.ndarray
    agent_activity: np.ndarray       # detected, aligned to frame indices
    video_frames: list[np.ndarray] = field(default_factory=list)


def closed_loop_rollout(model: DuplexBackbone, sample: DialogueSample,
                        audio_codec: AudioCodec, video_codec: VideoCodec,
                        prompt_encoder: PromptEncoder,
                        params: SamplingParams,
                        decode_video: bool = False,
                        use_initial_frame: bool = False) -> Rollout:
    """Generate the agent's side against the sample's interlocutor streams."""
    cfg = model.cfg
    na = cfg.audio.frames_per_video_frame
    spf = cfg.audio.hop * na
    t = sample.num_frames
    ih_grid = audio_codec.encode(sample.human_audio)
    ih_video = None if sample.masks.get("Vh") else \
        np.stack([f.tokens for f in video_codec.encode_clip(sample.human_frames)])
    traj = positions_to_trajectory(sample.joints)
    prompt = prompt_encoder.encode("" if sample.masks.get("P") else sample.prompt_text)
    speaker = AgentIdentity(None if sample.masks.get("s") else sample.speaker_id)

    initial = None
    if use_initial_frame:
        initial = video_codec.encode_clip(sample.agent_frames[0:1])[0].tokens
    gen = FrameGenerator(model, params)
    gen.reset(initial_video_tokens=initial)

    completed: dict[int, np.ndarray] = {}
    video_frames: list[np.ndarray] = []
    for i in range(t):
        bundle = ConditionBundle(
            prompt=prompt,
            trajectory_step=None if sample.masks.get("r") else traj.velocities[i],
            speaker=speaker)
        out = gen.generate_frame(
            bundle,
            ih_audio_rows=ih_grid.tokens[(i - 1) * na:i * na] if i >= 1 else None,
            ih_video_tokens=ih_video[i - 1] if (ih_video is not None and i >= 1) else None)
        if out.completed_audio is not None:
            completed[i - gen.emit_lag] = out.completed_audio
        if decode_video:
            video_frames.append(video_codec.decode_frame(
                VideoTokenFrame(out.video_tokens, i)))
    pcm = np.zeros(t * spf, np.float32)
    for frame_idx, rows in completed.items():
        wave = audio_codec.decode(AudioTokenGrid(np.clip(rows, 0,
                                                         cfg.audio.empty_token),
                                                 cfg.audio))
        pcm[frame_idx * spf:(frame_idx + 1) * spf] = wave[:spf]
    activity = frame_activity(pcm, spf)
    return Rollout(sample, pcm, activity, video_frames)


def eval_turn_taking(model: DuplexBackbone, samples: list[DialogueSample],
                     audio_codec: AudioCodec, video_codec: VideoCodec,
                     prompt_encoder: PromptEncoder,
                     params: SamplingParams) -> dict:
    f1s = []
    for s in samples:
        roll = closed_loop_rollout(model, s, audio_codec, video_codec,
                                   prompt_encoder, params)
        f1s.append(f1_score(roll.agent_activity, s.agent_activity))
    return {"per_sample_f1": f1s, "f1": float(np.mean(f1s))}


def eval_manipulation(model: DuplexBackbone, samples: list[DialogueSample],
                      audio_codec: AudioCodec, video_codec: VideoCodec,
                      prompt_encoder: PromptEncoder,
                      params: SamplingParams) -> dict:
    errs = []
    for s in samples:
        roll = closed_loop_rollout(model, s, audio_codec, video_codec,
                                   prompt_encoder, params, decode_video=True,
                                   use_initial_frame=True)
        per_frame = []
        for i, img in enumerate(roll.video_frames):
            found = locate_object(img)
            if found is not None and s.spec.object_path is not None:
                want = s.spec.object_path[i]
                per_frame.append(float(np.hypot(found[0] - want[0], found[1] - want[1])))
        errs.append(float(np.mean(per_frame)) if per_frame else float("inf"))
    return {"per_sample_px": errs, "px": float(np.mean(errs))}


def eval_identity(model: DuplexBackbone, samples: list[DialogueSample],
                  audio_codec: AudioCodec, video_codec: VideoCodec,
                  prompt_encoder: PromptEncoder, params: SamplingParams,
                  tol: float = 0.12) -> dict:
    rates = []
    for s in samples:
        roll = closed_loop_rollout(model, s, audio_codec, video_codec,
                                   prompt_encoder, params, decode_video=True,
                                   use_initial_frame=True)
        want = SPEAKER_COLORS[s.speaker_id % len(SPEAKER_COLORS)]
        ok = [float(np.abs(avatar_color(img) - want).mean()) < tol
              for img in roll.video_frames]
        rates.append(float(np.mean(ok)))
    return {"per_sample_rate": rates, "constancy": float(np.mean(rates))}


def evaluate(model: DuplexBackbone, suite: str, **kwargs) -> dict:
    if suite not in EVAL_SUITES:
        raise ValueError(f"unknown eval suite {suite!r}; choose from {EVAL_SUITES}")
    if suite == "nll":
        from .pipelines import evaluate_losses
        nll, mse = evaluate_losses(**kwargs)
        return {"audio_nll": nll, "diffusion_mse": mse}
    if suite == "reconstruction":
        from ..video.codec import psnr
        codec: VideoCodec = kwargs["video_codec"]
        images: np.ndarray = kwargs["images"]
        vals = [psnr(codec.decode_frame(codec.encode_clip(images[i:i + 1])[0]), images[i])
                for i in range(images.shape[0])]
        return {"psnr": float(np.mean(vals))}
    fn = {"turn_taking": eval_turn_taking, "manipulation": eval_manipulation,
          "identity": eval_identity}[suite]
    return fn(**kwargs)
