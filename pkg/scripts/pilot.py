"""Calibration pilot: small two-stage run + behavioral probe.

Reports NLL/MSE trajectories and held-out turn-taking F1 so the full run's
step budgets can be set with evidence.
"""

import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from tiva.audio.codec import AudioCodec
from tiva.audio.train import train_codec
from tiva.backbone import DuplexBackbone
from tiva.config import BackboneConfig, SamplingParams
from tiva.control import PromptEncoder
from tiva.toyworld import build_curriculum, make_sample
from tiva.train.evaluate import eval_turn_taking
from tiva.train.pipelines import (TrainConfig, tokenize_dialogue, train_stage1,
                                  train_stage2)
from tiva.video.codec import VideoCodec
from tiva.video.train import train_video_codec_clips


def main():
    t_start = time.time()
    cfg = BackboneConfig()
    n_dialogues = int(sys.argv[1]) if len(sys.argv) > 1 else 200
    lsm_steps = int(sys.argv[2]) if len(sys.argv) > 2 else 150
    lsvm_steps = int(sys.argv[3]) if len(sys.argv) > 3 else 200

    print("== codecs ==", flush=True)
    samples = build_curriculum(max(16, n_dialogues // 8), seed=0, num_frames=48)
    audio = AudioCodec(cfg.audio, seed=0)
    rep = train_codec(audio, [s.agent_audio for s in samples] +
                      [s.human_audio for s in samples], steps=350, seed=0)
    print("audio per-K MSE:", [round(m, 5) for m in rep.per_k_mse], flush=True)
    video = VideoCodec(cfg.video, seed=0)
    vrep = train_video_codec_clips(video, [s.agent_frames for s in samples] +
                                   [s.human_frames for s in samples],
                                   steps=700, seed=0)
    print("video loss:", vrep.losses[-1], f"({time.time()-t_start:.0f}s)", flush=True)

    print("== tokenize ==", flush=True)
    prompts = PromptEncoder(cfg.control)
    corpus = build_curriculum(n_dialogues, seed=1, num_frames=48)
    t0 = time.time()
    dialogues_av = [tokenize_dialogue(s, audio, video, prompts) for s in corpus]
    dialogues_a = [tokenize_dialogue(s, audio, None, prompts, include_video=False)
                   for s in corpus]
    print(f"tokenized {n_dialogues} in {time.time()-t0:.0f}s", flush=True)

    print("== stage 1 (lsm) ==", flush=True)
    model = DuplexBackbone(cfg, seed=0)
    tc1 = TrainConfig(stage="lsm", steps=lsm_steps, crop_frames=16, batch_size=4,
                      learning_rate=1e-3, seed=0)
    t0 = time.time()
    r1 = train_stage1(model, dialogues_a, tc1)
    print(f"lsm {lsm_steps} steps in {time.time()-t0:.0f}s  "
          f"nll {r1.audio_nll[0]:.3f} -> {r1.audio_nll[-1]:.3f}", flush=True)

    print("== stage 2 (lsvm) ==", flush=True)
    tc2 = TrainConfig(stage="lsvm", steps=lsvm_steps, crop_frames=24, batch_size=4,
                      learning_rate=8e-4, seed=0)
    t0 = time.time()
    r2 = train_stage2(model, dialogues_av, tc2, stage1_meta={"stage": "lsm"})
    print(f"lsvm {lsvm_steps} steps in {time.time()-t0:.0f}s  "
          f"nll -> {r2.audio_nll[-1]:.3f}  mse -> {r2.diffusion_mse[-1]:.4f}", flush=True)

    print("== behavioral probe ==", flush=True)
    held = [make_sample("first_person", seed=7_000_000 + i, num_frames=72)
            for i in range(6)]
    params = SamplingParams(seed=0, context_window_frames=24, diffusion_steps=4,
                            audio_temperature=0.8)
    t0 = time.time()
    res = eval_turn_taking(model, held, audio, video, prompts, params)
    print(f"turn-taking F1 {res['f1']:.3f} per-sample "
          f"{[round(f, 2) for f in res['per_sample_f1']]} ({time.time()-t0:.0f}s)",
          flush=True)
    print(f"total {time.time()-t_start:.0f}s")


if __name__ == "__main__":
    main()
