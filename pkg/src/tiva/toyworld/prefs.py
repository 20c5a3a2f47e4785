"""Synthetic preference pairs from planted defects.

Each pair shares one context (a question-answer round) and differs only in
the agent's continuation: the preferred side follows the script, the rejected
side carries a planted defect in one of five criteria.  The defect labeling
is programmatic, so labels agree with the generating script by construction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..config import AudioCodecConfig
from .world import (HUMAN_TONE_HZ, SPEAKER_COLORS, DialogueSample, TONE_AMP,
                    render_avatar_frame, render_scenario, speaker_tone_hz,
                    turn_taking_spec)

CRITERIA = ("speaking", "listening", "manipulation", "identity", "safety")
BANNED_WORDS = ("hazardword",)


@dataclass
class AgentSegment:
    """The agent-side continuation being ranked."""
    audio: np.ndarray          # float PCM
    frames: np.ndarray         # [T, H, W, 3]
    activity: np.ndarray       # [T] bool (as rendered)
    transcript: str


@dataclass
class PreferencePair:
    context: DialogueSample    # shared prefix: one question-answer round
    preferred: AgentSegment
    rejected: AgentSegment
    criterion: str

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ValueError(f"unknown criterion {self.criterion!r}")


def _clip_segment(sample: DialogueSample, start: int, end: int,
                  cfg: AudioCodecConfig) -> AgentSegment:
    spf = cfg.hop * cfg.frames_per_video_frame
    return AgentSegment(
        audio=sample.agent_audio[start * spf:end * spf].copy(),
        frames=sample.agent_frames[start:end].copy(),
        activity=sample.agent_activity[start:end].copy(),
        transcript=sample.transcript,
    )


def _plant_defect(seg: AgentSegment, sample: DialogueSample, start: int,
                  criterion: str, cfg: AudioCodecConfig,
                  rng: np.random.Generator) -> AgentSegment:
    out = AgentSegment(seg.audio.copy(), seg.frames.copy(), seg.activity.copy(),
                       seg.transcript)
    t = out.frames.shape[0]
    spf = cfg.hop * cfg.frames_per_video_frame
    color = SPEAKER_COLORS[sample.speaker_id % len(SPEAKER_COLORS)]
    if criterion == "speaking":
        # mouth open while silent (or shut while speaking) on half the frames
        for i in range(t):
            wrong = not out.activity[i]
            obj = tuple(sample.joints[start + i, 2]) if sample.spec.object_present else None
            out.frames[i] = render_avatar_frame(color, wrong, (16.0, 13.0),
                                                tuple(sample.joints[start + i, 1]), obj)
    elif criterion == "listening":
        # agent talks over the interlocutor in a non-interrupt context
        human = sample.human_activity[start:start + t]
        tt = np.arange(out.audio.size) / cfg.sample_rate
        gate = np.repeat(human, spf)[:out.audio.size]
        tone = TONE_AMP * np.sin(2 * np.pi * speaker_tone_hz(sample.speaker_id) * tt)
        out.audio[gate] = np.clip(out.audio[gate] + tone[gate], -1, 1).astype(np.float32)
        out.activity = out.activity | human
    elif criterion == "manipulation":
        # object teleports off its scripted path
        jump = rng.integers(1, max(2, t))
        for i in range(int(jump), t):
            ox = float(rng.uniform(4, 28))
            oy = float(rng.uniform(4, 28))
            out.frames[i] = render_avatar_frame(color, bool(out.activity[i]), (16.0, 13.0),
                                                (ox, oy + 3.0), (ox, oy))
    elif criterion == "identity":
        # the avatar changes color mid-segment
        other = SPEAKER_COLORS[(sample.speaker_id + 1) % len(SPEAKER_COLORS)]
        flip = t // 2
        for i in range(flip, t):
            obj = tuple(sample.joints[start + i, 2]) if sample.spec.object_present else None
            out.frames[i] = render_avatar_frame(other, bool(out.activity[i]), (16.0, 13.0),
                                                tuple(sample.joints[start + i, 1]), obj)
    elif criterion == "safety":
        out.transcript = seg.transcript + f"\nagent says {BANNED_WORDS[0]}"
    return out


def label_pair(preferred: AgentSegment, rejected: AgentSegment,
               human_activity: np.ndarray, criterion: str) -> bool:
    """Programmatic check that the rejected side really violates the criterion."""
    if criterion == "speaking":
        return not np.array_equal(preferred.frames, rejected.frames)
    if criterion == "listening":
        overlap = rejected.activity & human_activity[:rejected.activity.size]
        return overlap.sum() > (preferred.activity & human_activity[:preferred.activity.size]).sum()
    if criterion == "manipulation":
        return not np.array_equal(preferred.frames, rejected.frames)
    if criterion == "identity":
        return not np.array_equal(preferred.frames, rejected.frames)
    if criterion == "safety":
        return any(w in rejected.transcript for w in BANNED_WORDS)
    return False


def synthesize_preferences(count: int, seed: int = 0,
                           criteria: tuple = CRITERIA,
                           num_frames: int = 96,
                           segment_frames: int = 48,
                           audio_cfg: AudioCodecConfig | None = None,
                           sources: list | None = None) -> list[PreferencePair]:
    """Build `count` pairs; `sources` may supply alternative continuation
    generators (model variants), otherwise planted-defect transforms are the
    second source.  Returns fewer than requested (with a warning) only if the
    generator runs out of usable contexts.
    """
    cfg = audio_cfg or AudioCodecConfig()
    rng = np.random.default_rng(seed)
    pairs: list[PreferencePair] = []
    attempts = 0
    while len(pairs) < count and attempts < count * 4:
        attempts += 1
        criterion = criteria[len(pairs) % len(criteria)]
        scen_seed = seed * 7_777_777 + attempts
        if criterion == "manipulation":
            from .world import manipulation_spec
            sample = render_scenario(manipulation_spec(scen_seed, num_frames), cfg)
        else:
            sample = render_scenario(turn_taking_spec(scen_seed, num_frames), cfg)
        start = num_frames - segment_frames
        if criterion == "listening" and not sample.human_activity[start:].any():
            continue
        good = _clip_segment(sample, start, num_frames, cfg)
        if sources:
            bad = sources[int(rng.integers(0, len(sources)))](sample, start)
        else:
            bad = _plant_defect(good, sample, start, criterion, cfg, rng)
        if not label_pair(good, bad, sample.human_activity[start:], criterion):
            continue
        pairs.append(PreferencePair(sample, good, bad, criterion))
    if len(pairs) < count:
        warnings.warn(f"only {len(pairs)} of {count} preference pairs available")
    return pairs
