"""Command-line entry points.

    tiva gen-data      render a toyworld dataset to disk
    tiva train         --stage codec-audio|codec-video|lsm|lsvm|reward|ppo
    tiva eval          --suite nll|reconstruction|turn_taking|manipulation|identity
    tiva serve         stream live sessions over the wire protocol
    tiva run-offline   drive a scenario file, write artifacts
    tiva bench-latency tick-latency percentiles (and core comparison)

Exit codes: 0 success, 1 user error, 2 internal error.  `--config` accepts a
JSON object file or line-oriented key=value pairs; explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from ..config import (BackboneConfig, SamplingParams, SessionConfig,
                      load_config_file)


class UserError(ValueError):
    pass


def _emit(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True), flush=True)


# -- subcommand implementations --------------------------------------------------


def cmd_gen_data(args) -> int:
    from ..toyworld import build_curriculum, build_customized, save_dataset
    samples = build_curriculum(args.count, seed=args.seed, num_frames=args.frames)
    if args.customized:
        samples += build_customized(args.customized, speaker_ids=[1, 4],
                                    seed=args.seed, num_frames=args.frames)
    save_dataset(samples, args.out)
    _emit({"written": len(samples), "dir": str(args.out)})
    return 0


def _toyworld_corpus(count: int, seed: int, frames: int):
    from ..toyworld import build_curriculum
    return build_curriculum(count, seed=seed, num_frames=frames)


def _train_codec_audio(run, args) -> dict:
    from ..audio.codec import AudioCodec
    from ..audio.train import train_codec
    cfg = run.config
    samples = _toyworld_corpus(max(16, args.count // 8), args.seed, 48)
    waves = [s.agent_audio for s in samples] + [s.human_audio for s in samples]
    holdout = [s.agent_audio for s in _toyworld_corpus(6, args.seed + 999, 48)]
    codec = AudioCodec(cfg.audio, seed=args.seed)
    report = train_codec(codec, waves, steps=args.steps or 400, seed=args.seed,
                         holdout=holdout)
    from ..bundle import save_component
    save_component(run, "codec-audio", codec.state(),
                   metrics={"per_k_mse": report.per_k_mse,
                            "reinit_events": len(report.reinit_events)})
    return {"per_k_mse": report.per_k_mse}


def _train_codec_video(run, args) -> dict:
    from ..video.codec import VideoCodec, psnr
    from ..video.train import train_video_codec_clips
    cfg = run.config
    samples = _toyworld_corpus(max(12, args.count // 16), args.seed, 32)
    clips = [s.agent_frames for s in samples] + [s.human_frames for s in samples]
    codec = VideoCodec(cfg.video, seed=args.seed)
    report = train_video_codec_clips(codec, clips, steps=args.steps or 900,
                                     seed=args.seed)
    vals = []
    for s in samples[:4]:
        frames = codec.encode_clip(s.agent_frames[:8])
        vals.extend(psnr(codec.decode_frame(f), s.agent_frames[i])
                    for i, f in enumerate(frames))
    from ..bundle import save_component
    save_component(run, "codec-video", codec.state(),
                   metrics={"loss": report.losses[-1], "clip_psnr": float(np.mean(vals))})
    return {"loss": report.losses[-1], "clip_psnr": float(np.mean(vals))}


def _load_codecs(run, seed):
    from ..audio.codec import AudioCodec
    from ..bundle import load_component
    from ..video.codec import VideoCodec
    cfg = run.config
    audio = AudioCodec(cfg.audio, seed=seed)
    audio.load_state(load_component(run, "codec-audio")[0])
    video = VideoCodec(cfg.video, seed=seed)
    video.load_state(load_component(run, "codec-video")[0])
    return audio, video


def _tokenized_corpus(run, args, include_video: bool, count: int, frames: int):
    from ..control import PromptEncoder
    from ..train.pipelines import tokenize_dialogue
    audio, video = _load_codecs(run, args.seed)
    prompts = PromptEncoder(run.config.control)
    samples = _toyworld_corpus(count, args.seed, frames)
    out = []
    for s in samples:
        out.append(tokenize_dialogue(s, audio, video if include_video else None,
                                     prompts, include_video=include_video))
    return out, samples


def _train_backbone_stage(run, args, stage: str) -> dict:
    from ..backbone.model import DuplexBackbone
    from ..bundle import load_component, save_component
    from ..train.pipelines import TrainConfig, train_stage1, train_stage2
    cfg = run.config
    model = DuplexBackbone(cfg, seed=args.seed)
    tc = TrainConfig(stage=stage, steps=args.steps or 300,
                     batch_size=args.batch, crop_frames=args.crop_frames,
                     learning_rate=args.lr, seed=args.seed)
    count = args.count
    if stage == "lsm":
        dialogues, _ = _tokenized_corpus(run, args, include_video=False,
                                         count=count, frames=args.frames)
        report = train_stage1(model, dialogues, tc)
    else:
        params, meta = load_component(run, "lsm")
        if meta.get("stage") != "lsm":
            raise UserError("lsvm requires an lsm checkpoint in this run")
        model.load_state(params)
        dialogues, _ = _tokenized_corpus(run, args, include_video=True,
                                         count=count, frames=args.frames)
        report = train_stage2(model, dialogues, tc, stage1_meta=meta)
    for i, nll in enumerate(report.audio_nll):
        if i % 25 == 0 or i == len(report.audio_nll) - 1:
            _emit({"step": i, "audio_nll": nll,
                   "diffusion_mse": report.diffusion_mse[i]})
    metrics = {"final_nll": report.audio_nll[-1],
               "final_mse": report.diffusion_mse[-1]}
    save_component(run, stage, model.state(), metrics=metrics)
    return metrics


def _train_reward(run, args) -> dict:
    from ..bundle import load_component, save_component
    from ..control import PromptEncoder
    from ..rlhf.reward import RewardModel, tokenize_pairs, train_reward_model
    from ..toyworld.prefs import synthesize_preferences
    cfg = run.config
    audio, video = _load_codecs(run, args.seed)
    prompts = PromptEncoder(cfg.control)
    pairs = synthesize_preferences(args.count or 200, seed=args.seed,
                                   num_frames=72, segment_frames=48,
                                   audio_cfg=cfg.audio)
    split = max(1, len(pairs) // 6)
    tp_train = tokenize_pairs(pairs[split:], audio, video, prompts)
    tp_hold = tokenize_pairs(pairs[:split], audio, video, prompts)
    model = RewardModel(cfg, seed=args.seed)
    params, _ = load_component(run, "lsvm")
    model.init_from_policy(params)
    report = train_reward_model(model, tp_train, steps=args.steps or 150,
                                lr=args.lr, seed=args.seed, holdout=tp_hold)
    metrics = {"train_accuracy": report.train_accuracy,
               "holdout_accuracy": report.holdout_accuracy}
    save_component(run, "reward", model.state(), metrics=metrics)
    _emit(metrics)
    return metrics


def _train_ppo(run, args) -> dict:
    from ..backbone.model import DuplexBackbone
    from ..bundle import load_component, save_component
    from ..control import PromptEncoder
    from ..nn import AdamW
    from ..rlhf.ppo import PpoConfig, ValueHead, collect_rollouts, ppo_update
    from ..rlhf.reward import RewardModel
    cfg = run.config
    audio, video = _load_codecs(run, args.seed)
    prompts = PromptEncoder(cfg.control)
    policy = DuplexBackbone(cfg, seed=args.seed)
    policy.load_state(load_component(run, "lsvm")[0])
    reference = DuplexBackbone(cfg, seed=args.seed)
    reference.load_state(load_component(run, "lsvm")[0])
    rstate, _ = load_component(run, "reward")
    reward = RewardModel(cfg, seed=args.seed)
    reward.load_state(rstate)
    pcfg = PpoConfig(beta=args.beta, seed=args.seed,
                     rollout_frames=args.crop_frames,
                     rollouts_per_batch=args.batch,
                     learning_rate=args.lr)
    value_head = ValueHead(cfg.model_dim, seed=args.seed)
    opt = AdamW({**policy.parameters(),
                 **{f"value.{k}": v for k, v in value_head.parameters().items()}},
                lr=pcfg.learning_rate)
    contexts = _toyworld_corpus(64, args.seed + 31337, pcfg.rollout_frames)
    sp = SamplingParams(diffusion_steps=4, context_window_frames=pcfg.rollout_frames)
    stats_log = []
    iters = args.steps or 6
    for it in range(iters):
        batch_ctx = contexts[(it * pcfg.rollouts_per_batch) % len(contexts):][:pcfg.rollouts_per_batch]
        buf = collect_rollouts(policy, reference, reward.score_segment, batch_ctx,
                               audio, video, prompts, pcfg, sp)
        stats = ppo_update(buf, policy, value_head, pcfg, opt)
        stats_log.append({"iter": it, "mean_reward": stats.mean_reward,
                          "mean_kl": stats.mean_kl,
                          "policy_loss": stats.policy_loss,
                          "early_stopped": stats.early_stopped})
        _emit(stats_log[-1])
    metrics = {"iters": iters, "final_reward": stats_log[-1]["mean_reward"],
               "final_kl": stats_log[-1]["mean_kl"]}
    save_component(run, "ppo", policy.state(), metrics=metrics)
    return metrics


def cmd_train(args) -> int:
    from ..bundle import RunManifest
    overrides = load_config_file(args.config) if args.config else {}
    cfg = BackboneConfig(**overrides.get("backbone", {}))
    run = RunManifest(args.out, cfg, seed=args.seed)
    run.save()
    if args.stage == "codec-audio":
        metrics = _train_codec_audio(run, args)
    elif args.stage == "codec-video":
        metrics = _train_codec_video(run, args)
    elif args.stage in ("lsm", "lsvm"):
        metrics = _train_backbone_stage(run, args, args.stage)
    elif args.stage == "reward":
        metrics = _train_reward(run, args)
    elif args.stage == "ppo":
        metrics = _train_ppo(run, args)
    else:
        raise UserError(f"unknown stage {args.stage!r}")
    _emit({"stage": args.stage, "metrics": metrics})
    return 0


def cmd_eval(args) -> int:
    from ..bundle import load_engine
    from ..train.evaluate import (eval_identity, eval_manipulation,
                                  eval_turn_taking)
    from ..toyworld.curriculum import make_sample
    engine = load_engine(args.run, stage=args.stage_name)
    params = SamplingParams(seed=args.seed, context_window_frames=args.crop_frames,
                            diffusion_steps=args.diffusion_steps)
    frames = args.frames
    if args.suite == "turn_taking":
        samples = [make_sample("first_person", seed=args.seed + 7000 + i,
                               num_frames=frames) for i in range(args.count)]
        out = eval_turn_taking(engine.model, samples, engine.audio_codec,
                               engine.video_codec, engine.prompt_encoder, params)
    elif args.suite == "manipulation":
        from ..toyworld.world import manipulation_spec, render_scenario
        samples = [render_scenario(manipulation_spec(args.seed + 8000 + i, frames))
                   for i in range(args.count)]
        out = eval_manipulation(engine.model, samples, engine.audio_codec,
                                engine.video_codec, engine.prompt_encoder, params)
    elif args.suite == "identity":
        samples = [make_sample("customized", seed=args.seed + 9000 + i,
                               num_frames=frames, speaker_id=1 + (i % 2))
                   for i in range(args.count)]
        out = eval_identity(engine.model, samples, engine.audio_codec,
                            engine.video_codec, engine.prompt_encoder, params)
    else:
        raise UserError(f"unsupported eval suite {args.suite!r} from the CLI")
    _emit(out if isinstance(out, dict) else {"result": out})
    return 0


def cmd_serve(args) -> int:
    from ..bundle import load_engine
    from .server import SessionServer
    engine = load_engine(args.run, stage=args.stage_name)
    overrides = load_config_file(args.config) if args.config else {}
    scfg = SessionConfig(**overrides.get("session", {}))
    server = SessionServer(engine, port=args.port, session_config=scfg)
    server.start()
    _emit({"serving": True, "port": server.port})
    try:
        while True:
            time.sleep(0.5)
    except KeyboardInterrupt:
        server.close()
    return 0


def cmd_run_offline(args) -> int:
    from ..bundle import load_engine
    from .offline import run_offline
    engine = load_engine(args.run, stage=args.stage_name)
    scfg = SessionConfig(planner=args.planner,
                         sampling=SamplingParams(seed=args.seed,
                                                 context_window_frames=args.crop_frames))
    summary = run_offline(engine, args.scenario, args.out, scfg)
    _emit({"out": str(args.out), "summary": summary})
    return 0


def cmd_bench_latency(args) -> int:
    from ..backbone.model import DuplexBackbone
    from ..bundle import load_engine
    from ..control import PromptEncoder
    from ..runtime.session import DuplexSession
    from ..audio.codec import AudioCodec
    from ..video.codec import VideoCodec
    if args.run:
        engine = load_engine(args.run)
        model, audio, video, prompts = (engine.model, engine.audio_codec,
                                        engine.video_codec, engine.prompt_encoder)
        cfg = engine.cfg
    else:
        cfg = BackboneConfig()
        model = DuplexBackbone(cfg, seed=args.seed)
        audio = AudioCodec(cfg.audio, seed=args.seed)
        video = VideoCodec(cfg.video, seed=args.seed)
        prompts = PromptEncoder(cfg.control)
    backends = ["compiled", "numpy"] if args.compare_cores else [None]
    results = {}
    for backend in backends:
        try:
            scfg = SessionConfig(planner="none",
                                 sampling=SamplingParams(seed=args.seed))
            session = DuplexSession(model, audio, video, prompts, scfg,
                                    core_backend=backend)
        except ImportError as e:
            results[backend or "auto"] = {"error": str(e)}
            continue
        rng = np.random.default_rng(0)
        spf = session.spf
        for i in range(args.frames):
            if i % 3 != 0:
                session.ingest_audio(rng.standard_normal(spf).astype(np.float32) * 0.2)
            session.tick()
        results[backend or "auto"] = session.telemetry.summary()
        session.close()
        _emit({"backend": backend or "auto", **results[backend or "auto"]})
    return 0


# -- argument parsing --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tiva",
                                     description="duplex audio-video agent engine")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_run=False):
        p.add_argument("--config", type=Path, default=None,
                       help="JSON or key=value config file")
        p.add_argument("--seed", type=int, default=0)
        if with_run:
            p.add_argument("--run", type=Path, required=True,
                           help="run directory (manifest + checkpoints)")

    p = sub.add_parser("gen-data", help="render a toyworld dataset")
    common(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--frames", type=int, default=96)
    p.add_argument("--customized", type=int, default=0)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train one pipeline stage")
    common(p)
    p.add_argument("--stage", required=True,
                   choices=["codec-audio", "codec-video", "lsm", "lsvm",
                            "reward", "ppo"])
    p.add_argument("--out", type=Path, required=True, help="run directory")
    p.add_argument("--steps", type=int, default=0, help="0 = stage default")
    p.add_argument("--count", type=int, default=200, help="dataset size")
    p.add_argument("--frames", type=int, default=48)
    p.add_argument("--crop-frames", type=int, default=24, dest="crop_frames")
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--lr", type=float, default=6e-4)
    p.add_argument("--beta", type=float, default=0.01, help="PPO KL coefficient")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="behavioral evaluation suites")
    common(p, with_run=True)
    p.add_argument("--suite", required=True,
                   choices=["turn_taking", "manipulation", "identity"])
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--frames", type=int, default=72)
    p.add_argument("--crop-frames", type=int, default=24, dest="crop_frames")
    p.add_argument("--diffusion-steps", type=int, default=8, dest="diffusion_steps")
    p.add_argument("--stage-name", default=None, dest="stage_name")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("serve", help="serve live sessions")
    common(p, with_run=True)
    p.add_argument("--port", type=int, default=7711)
    p.add_argument("--stage-name", default=None, dest="stage_name")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("run-offline", help="render a scenario offline")
    common(p, with_run=True)
    p.add_argument("--scenario", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--planner", default="none", choices=["rule", "none"])
    p.add_argument("--crop-frames", type=int, default=24, dest="crop_frames")
    p.add_argument("--stage-name", default=None, dest="stage_name")
    p.set_defaults(fn=cmd_run_offline)

    p = sub.add_parser("bench-latency", help="tick latency percentiles")
    common(p)
    p.add_argument("--run", type=Path, default=None)
    p.add_argument("--frames", type=int, default=1000)
    p.add_argument("--compare-cores", action="store_true", dest="compare_cores")
    p.set_defaults(fn=cmd_bench_latency)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 1
    try:
        return args.fn(args)
    except (UserError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1
    except Exception as e:  # internal fault
        import traceback
        traceback.print_exc()
        print(f"internal error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
