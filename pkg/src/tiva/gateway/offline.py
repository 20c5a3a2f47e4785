"""Offline runner: drive a session from a scenario file, write artifacts.

Outputs in the target directory: agent.pcm (s16le), frames.rgb8, tokens.jsonl
(per-frame delayed audio rows and video token checksums), telemetry.json.
Deterministic for a fixed seed and checkpoint.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..audio.codec import float_to_pcm16
from ..bundle import Engine
from ..config import SessionConfig
from ..runtime.session import DuplexSession
from ..toyworld.dataset import _spec_from_dict
from ..toyworld.world import render_scenario


def load_scenario_file(path: str | Path):
    data = json.loads(Path(path).read_text())
    return _spec_from_dict(data["script"] if "script" in data else data)


def run_offline(engine: Engine, scenario_path: str | Path, out_dir: str | Path,
                session_config: SessionConfig | None = None,
                core_backend: str | None = None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = load_scenario_file(scenario_path)
    sample = render_scenario(spec, engine.cfg.audio)
    scfg = session_config or SessionConfig()
    session = DuplexSession(engine.model, engine.audio_codec, engine.video_codec,
                            engine.prompt_encoder, scfg,
                            initial_frame=sample.agent_frames[0],
                            core_backend=core_backend)
    spf = session.spf
    pcm_chunks: list[np.ndarray] = []
    frames: list[np.ndarray] = []
    token_log = []
    try:
        for i in range(sample.num_frames):
            if i >= 1:
                lo, hi = (i - 1) * spf, i * spf
                session.ingest_audio(sample.human_audio[lo:hi])
                session.ingest_video(sample.human_frames[i - 1])
            if not sample.masks.get("P") and i == 0:
                session.set_prompt(sample.prompt_text)
            res = session.tick()
            pcm_chunks.append(res.pcm)
            frames.append(np.round(np.clip(res.image, 0, 1) * 255).astype(np.uint8))
            token_log.append({
                "frame": res.index,
                "audio_tokens": res.audio_tokens.tolist(),
                "video_token_sum": float(np.abs(res.video_tokens).sum()),
            })
    finally:
        session.close()
    (out / "agent.pcm").write_bytes(float_to_pcm16(np.concatenate(pcm_chunks)))
    (out / "frames.rgb8").write_bytes(np.stack(frames).tobytes())
    with (out / "tokens.jsonl").open("w") as f:
        for row in token_log:
            f.write(json.dumps(row, sort_keys=True) + "\n")
    telemetry = {"summary": session.telemetry.summary(),
                 "ticks": [json.loads(line) for line in session.telemetry.json_lines()]}
    (out / "telemetry.json").write_text(json.dumps(telemetry, indent=1, sort_keys=True))
    return telemetry["summary"]
