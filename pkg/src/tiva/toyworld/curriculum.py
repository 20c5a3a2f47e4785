"""Staged dataset assembly with per-stage channel masking.

Default mix: 15% third-person analog (speaker, trajectory, and prompt masked),
50% first-person (all controls present), 35% synthetic (speaker masked always;
interlocutor video masked except for the idle-splice family).  Customized-agent
data is generated separately with pinned speaker ids.
"""

from __future__ import annotations

import numpy as np

from ..config import AudioCodecConfig
from .world import (DialogueSample, idle_splice_spec, manipulation_spec,
                    render_scenario, single_speaker_spec, turn_taking_spec)

DEFAULT_MIX = (0.15, 0.50, 0.35)
STAGES = ("third_person", "first_person", "synthetic", "customized")


def _mask(s=False, r=False, p=False, vh=False) -> dict:
    return {"s": s, "r": r, "P": p, "Vh": vh}


def make_sample(stage: str, seed: int, num_frames: int = 96,
                audio_cfg: AudioCodecConfig | None = None,
                speaker_id: int | None = None) -> DialogueSample:
    rng = np.random.default_rng(seed)
    if stage == "third_person":
        spec = turn_taking_spec(seed, num_frames, interrupt=bool(rng.integers(0, 3) == 0))
        sample = render_scenario(spec, audio_cfg)
        sample.masks = _mask(s=True, r=True, p=True)
    elif stage == "first_person":
        spec = turn_taking_spec(seed, num_frames, interrupt=bool(rng.integers(0, 3) == 0),
                                speaker_id=speaker_id)
        sample = render_scenario(spec, audio_cfg)
        sample.masks = _mask()
    elif stage == "synthetic":
        family = int(rng.integers(0, 3))
        if family == 0:
            sample = render_scenario(single_speaker_spec(seed, num_frames), audio_cfg)
            sample.masks = _mask(s=True, vh=True)
        elif family == 1:
            sample = render_scenario(idle_splice_spec(seed, num_frames), audio_cfg)
            sample.masks = _mask(s=True)
        else:
            sample = render_scenario(manipulation_spec(seed, num_frames), audio_cfg)
            sample.masks = _mask(s=True, vh=True)
    elif stage == "customized":
        sid = speaker_id if speaker_id is not None else int(rng.integers(0, 8))
        spec = turn_taking_spec(seed, num_frames, interrupt=False, speaker_id=sid)
        sample = render_scenario(spec, audio_cfg)
        sample.masks = _mask()
    else:
        raise ValueError(f"unknown stage {stage!r}")
    sample.stage = stage
    return sample


def build_curriculum(total: int, seed: int = 0, mix: tuple = DEFAULT_MIX,
                     num_frames: int = 96,
                     audio_cfg: AudioCodecConfig | None = None) -> list[DialogueSample]:
    """Render `total` samples in the given stage mix (exact counts by rounding)."""
    if total < 0:
        raise ValueError("total must be non-negative")
    n3 = round(total * mix[0])
    n1 = round(total * mix[1])
    ns = total - n3 - n1
    samples: list[DialogueSample] = []
    base = seed * 1_000_003
    for i in range(n3):
        samples.append(make_sample("third_person", base + i, num_frames, audio_cfg))
    for i in range(n1):
        samples.append(make_sample("first_person", base + 10_000 + i, num_frames, audio_cfg))
    for i in range(ns):
        samples.append(make_sample("synthetic", base + 20_000 + i, num_frames, audio_cfg))
    return samples


def build_customized(count: int, speaker_ids: list[int], seed: int = 0,
                     num_frames: int = 96,
                     audio_cfg: AudioCodecConfig | None = None) -> list[DialogueSample]:
    return [make_sample("customized", seed * 1_000_003 + 30_000 + i, num_frames,
                        audio_cfg, speaker_id=speaker_ids[i % len(speaker_ids)])
            for i in range(count)]


def check_mask_rules(sample: DialogueSample) -> bool:
    m = sample.masks
    if sample.stage == "third_person":
        return m["s"] and m["r"] and m["P"] and not m["Vh"]
    if sample.stage == "first_person":
        return not any(m.values())
    if sample.stage == "synthetic":
        return m["s"] and not m["r"] and not m["P"]
    if sample.stage == "customized":
        return not any(m.values())
    return False
