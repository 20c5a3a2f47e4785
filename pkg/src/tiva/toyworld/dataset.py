"""On-disk sample layout: one directory per sample.

    frames.rgb8     agent frames then human frames, RGB8 row-major
    agent.pcm       s16le mono at the codec sample rate
    human.pcm       s16le mono
    conditions.bin  per-frame joint velocities (trajectory wire format)
    meta.json       stage, masks, script, seed, prompt, speaker, transcript
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..audio.codec import float_to_pcm16, pcm16_to_float
from ..config import AudioCodecConfig
from ..control import positions_to_trajectory, serialize_trajectory, deserialize_trajectory
from .world import FRAME_H, FRAME_W, DialogueSample, ScenarioSpec, Segment


def _spec_dict(spec: ScenarioSpec) -> dict:
    d = {
        "seed": spec.seed,
        "num_frames": spec.num_frames,
        "agent_segments": [[s.kind, s.start, s.end] for s in spec.agent_segments],
        "human_segments": [[s.kind, s.start, s.end] for s in spec.human_segments],
        "object_present": spec.object_present,
        "prompt_label": spec.prompt_label,
        "speaker_id": spec.speaker_id,
    }
    if spec.object_path is not None:
        d["object_path"] = np.asarray(spec.object_path).tolist()
    return d


def _spec_from_dict(d: dict) -> ScenarioSpec:
    path = np.asarray(d["object_path"], np.float32) if "object_path" in d else None
    return ScenarioSpec(
        seed=d["seed"], num_frames=d["num_frames"],
        agent_segments=[Segment(*s) for s in d["agent_segments"]],
        human_segments=[Segment(*s) for s in d["human_segments"]],
        object_present=d["object_present"], object_path=path,
        prompt_label=d["prompt_label"], speaker_id=d["speaker_id"])


def save_sample(sample: DialogueSample, directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    frames = np.concatenate([sample.agent_frames, sample.human_frames])
    (d / "frames.rgb8").write_bytes(
        (np.clip(frames, 0, 1) * 255).astype(np.uint8).tobytes())
    (d / "agent.pcm").write_bytes(float_to_pcm16(sample.agent_audio))
    (d / "human.pcm").write_bytes(float_to_pcm16(sample.human_audio))
    traj = positions_to_trajectory(sample.joints)
    (d / "conditions.bin").write_bytes(serialize_trajectory(traj))
    meta = {
        "stage": sample.stage,
        "masks": sample.masks,
        "script": _spec_dict(sample.spec),
        "seed": sample.spec.seed,
        "prompt": sample.prompt_text,
        "speaker_id": sample.speaker_id,
        "transcript": sample.transcript,
        "num_frames": sample.num_frames,
        "agent_activity": sample.agent_activity.astype(int).tolist(),
        "human_activity": sample.human_activity.astype(int).tolist(),
    }
    (d / "meta.json").write_text(json.dumps(meta, indent=1), encoding="utf-8")


def load_sample(directory: str | Path) -> DialogueSample:
    d = Path(directory)
    meta = json.loads((d / "meta.json").read_text(encoding="utf-8"))
    t = meta["num_frames"]
    raw = np.frombuffer((d / "frames.rgb8").read_bytes(), np.uint8)
    frames = raw.reshape(2 * t, FRAME_H, FRAME_W, 3).astype(np.float32) / 255.0
    spec = _spec_from_dict(meta["script"])
    traj = deserialize_trajectory((d / "conditions.bin").read_bytes())
    joints = np.cumsum(traj.velocities, axis=0)  # relative reconstruction only
    sample = DialogueSample(
        spec=spec,
        agent_audio=pcm16_to_float((d / "agent.pcm").read_bytes()),
        human_audio=pcm16_to_float((d / "human.pcm").read_bytes()),
        agent_frames=frames[:t],
        human_frames=frames[t:],
        joints=joints,
        agent_activity=np.asarray(meta["agent_activity"], bool),
        human_activity=np.asarray(meta["human_activity"], bool),
        prompt_text=meta["prompt"],
        speaker_id=meta["speaker_id"],
        transcript=meta["transcript"],
        stage=meta["stage"],
        masks=meta["masks"],
    )
    return sample


def save_dataset(samples: list[DialogueSample], root: str | Path) -> None:
    root = Path(root)
    for i, s in enumerate(samples):
        save_sample(s, root / f"sample_{i:05d}")


def load_dataset(root: str | Path) -> list[DialogueSample]:
    root = Path(root)
    dirs = sorted(p for p in root.iterdir() if p.is_dir() and (p / "meta.json").exists())
    return [load_sample(p) for p in dirs]
