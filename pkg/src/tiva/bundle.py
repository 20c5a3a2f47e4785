"""Engine bundle: every trained component in one directory.

    manifest.json        run id, config snapshot, lineage, seeds, metrics
    audio_codec.bohc     codec weights
    video_codec.bohc
    backbone_<stage>.bohc  lsm / lsvm / ppo policies (same architecture)
    reward.bohc

Loading validates config hashes so a checkpoint trained under one geometry
cannot silently drive another.
"""

from __future__ import annotations

import json
import time
import uuid
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .audio.codec import AudioCodec
from .backbone.model import DuplexBackbone
from .config import BackboneConfig, config_dict
from .control import PromptEncoder
from .nn.checkpoint import (CheckpointError, check_config_hash, config_hash,
                            load_checkpoint_file, save_checkpoint_file)
from .video.codec import VideoCodec

STAGE_ORDER = ("codec-audio", "codec-video", "lsm", "lsvm", "reward", "ppo")


class RunManifest:
    def __init__(self, root: str | Path, cfg: BackboneConfig | None = None,
                 seed: int = 0):
        self.root = Path(root)
        self.path = self.root / "manifest.json"
        if self.path.exists():
            self.data = json.loads(self.path.read_text())
        else:
            cfg = cfg or BackboneConfig()
            self.data = {
                "run_id": uuid.uuid4().hex[:12],
                "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
                "config": config_dict(cfg),
                "config_hash": config_hash(config_dict(cfg)),
                "seed": seed,
                "lineage": [],
                "metrics": {},
            }

    @property
    def config(self) -> BackboneConfig:
        return BackboneConfig(**self.data["config"])

    @property
    def config_hash(self) -> str:
        return self.data["config_hash"]

    def record_stage(self, stage: str, checkpoint_name: str,
                     metrics: dict | None = None) -> None:
        if stage not in STAGE_ORDER:
            raise ValueError(f"unknown stage {stage!r}")
        done = [s for s, _ in self.data["lineage"]]
        required = {"lsvm": "lsm", "reward": "lsvm", "ppo": "reward"}
        need = required.get(stage)
        if need and need not in done:
            raise ValueError(f"stage {stage!r} requires completed stage {need!r}")
        self.data["lineage"].append([stage, checkpoint_name])
        if metrics:
            self.data["metrics"][stage] = metrics

    def stage_checkpoint(self, stage: str) -> Path | None:
        for s, name in self.data["lineage"]:
            if s == stage:
                return self.root / name
        return None

    def save(self) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.data, indent=1, sort_keys=True))


def save_component(manifest: RunManifest, stage: str, state: dict, extra_meta: dict | None = None,
                   metrics: dict | None = None) -> Path:
    name = {"codec-audio": "audio_codec.bohc", "codec-video": "video_codec.bohc",
            "lsm": "backbone_lsm.bohc", "lsvm": "backbone_lsvm.bohc",
            "reward": "reward.bohc", "ppo": "backbone_ppo.bohc"}[stage]
    meta = {"config_hash": manifest.config_hash, "stage": stage,
            "run_id": manifest.data["run_id"]}
    if extra_meta:
        meta.update(extra_meta)
    manifest.root.mkdir(parents=True, exist_ok=True)
    save_checkpoint_file(manifest.root / name, state, meta)
    manifest.record_stage(stage, name, metrics)
    manifest.save()
    return manifest.root / name


def load_component(manifest: RunManifest, stage: str,
                   expect_hash: bool = True) -> tuple[dict, dict]:
    path = manifest.stage_checkpoint(stage)
    if path is None or not path.exists():
        raise CheckpointError(f"run has no {stage!r} checkpoint yet")
    params, meta = load_checkpoint_file(path)
    if expect_hash:
        check_config_hash(meta, manifest.config_hash)
    return params, meta


class Engine:
    """A fully loaded inference stack."""

    def __init__(self, cfg: BackboneConfig, model: DuplexBackbone,
                 audio_codec: AudioCodec, video_codec: VideoCodec,
                 prompt_encoder: PromptEncoder, stage: str):
        self.cfg = cfg
        self.model = model
        self.audio_codec = audio_codec
        self.video_codec = video_codec
        self.prompt_encoder = prompt_encoder
        self.stage = stage


def load_engine(run_dir: str | Path, stage: str | None = None,
                seed: int = 0) -> Engine:
    """Load the newest (or requested) policy stage plus the frozen codecs."""
    manifest = RunManifest(run_dir)
    cfg = manifest.config
    audio_codec = AudioCodec(cfg.audio, seed=seed)
    audio_codec.load_state(load_component(manifest, "codec-audio")[0])
    video_codec = VideoCodec(cfg.video, seed=seed)
    video_codec.load_state(load_component(manifest, "codec-video")[0])
    model = DuplexBackbone(cfg, seed=seed)
    if stage is None:
        for cand in ("ppo", "lsvm", "lsm"):
            if manifest.stage_checkpoint(cand) is not None:
                stage = cand
                break
        else:
            raise CheckpointError("run has no backbone checkpoint")
    model.load_state(load_component(manifest, stage)[0])
    return Engine(cfg, model, audio_codec, video_codec, PromptEncoder(cfg.control), stage)
