"""Duplex session: boundary rules, causality, rate law, miss policies,
planner asynchrony.  Uses a small untrained model (behavior-free checks)."""

import time

import numpy as np
import pytest

from tiva.audio.codec import AudioCodec
from tiva.backbone import DuplexBackbone
from tiva.config import (AudioCodecConfig, BackboneConfig, SamplingParams,
                         SessionConfig, VideoCodecConfig)
from tiva.control import PromptEncoder, Trajectory
from tiva.runtime import (DuplexSession, FrameBudget, Plan, RulePlanner,
                          run_interruption_probe)
from tiva.runtime.planner import PlanRequest
from tiva.video.codec import VideoCodec


def small_stack(seed=0):
    bcfg = BackboneConfig(layers=2, model_dim=64, num_heads=4,
                          context_window_frames=8)
    model = DuplexBackbone(bcfg, seed=seed)
    audio = AudioCodec(bcfg.audio, seed=seed)
    video = VideoCodec(bcfg.video, seed=seed)
    prompts = PromptEncoder(bcfg.control)
    return model, audio, video, prompts


def make_session(planner="none", delay_ms=0.0, miss_policy="repeat_last",
                 budget_ms=0.0, seed=0):
    model, audio, video, prompts = small_stack(seed)
    cfg = SessionConfig(miss_policy=miss_policy, planner=planner,
                        planner_delay_ms=delay_ms, budget_ms=budget_ms,
                        sampling=SamplingParams(seed=seed, diffusion_steps=2,
                                                context_window_frames=8))
    return DuplexSession(model, audio, video, prompts, cfg)


def test_budget_derivation():
    b = FrameBudget(target_fps=24)
    assert abs(b.budget_ms - 41.6667) < 1e-3
    with pytest.raises(ValueError):
        FrameBudget(miss_policy="panic")


def test_rate_law_exact():
    s = make_session()
    total = 0
    for _ in range(24):
        total += s.tick().pcm.size
    assert total == 24 * s.spf == s.model.cfg.audio.sample_rate
    s.close()


def test_audio_visible_next_frame_only():
    s = make_session()
    s.tick()  # frame 0
    t = np.arange(s.spf) / s.model.cfg.audio.sample_rate
    s.ingest_audio(0.5 * np.sin(2 * np.pi * 300 * t).astype(np.float32))
    f1 = s.tick()  # frame 1: sees the chunk (arrived during frame 0 interval)
    assert ("human_audio", 0) in f1.manifest["events"]
    f2 = s.tick()
    assert all(kind != "human_audio" for kind, _ in f2.manifest["events"])
    s.close()


def test_manifest_causality_invariant():
    s = make_session()
    rng = np.random.default_rng(0)
    for i in range(6):
        s.ingest_audio(rng.standard_normal(s.spf).astype(np.float32) * 0.1)
        s.ingest_video(rng.random((32, 32, 3)).astype(np.float32))
        s.tick()
    for m in s.manifests:
        for kind, arrived in m["events"]:
            assert arrived < m["emitted_frame"]
    s.close()


def test_prompt_update_applies_next_boundary():
    s = make_session()
    s.tick()
    s.set_prompt("agent speaks happily")
    rev_before = s.prompt_rev
    out = s.tick()
    assert s.prompt_rev == rev_before + 1
    assert out.record.prompt_rev == s.prompt_rev
    s.close()


def test_trajectory_queue_consumed_per_frame():
    s = make_session()
    vel = np.ones((3, 3, 2), np.float32)
    s.set_trajectory(Trajectory(vel))
    s.tick()
    assert len(s._traj_queue) == 2
    s.tick()
    s.tick()
    assert len(s._traj_queue) == 0
    s.close()


def test_forced_slow_tick_engages_repeat_last():
    s = make_session(budget_ms=0.0001, miss_policy="repeat_last")
    first = s.tick()   # always a miss with this budget; nothing to repeat yet
    second = s.tick()
    assert second.record.miss
    assert second.repeated
    np.testing.assert_array_equal(second.pcm, first.pcm)
    np.testing.assert_array_equal(second.image, first.image)
    assert s.telemetry.miss_count >= 2
    s.close()


def test_degrade_sampler_policy_halves_steps():
    s = make_session(budget_ms=0.0001, miss_policy="degrade_sampler")
    s.tick()
    assert s._degraded
    s.tick()
    s.close()


def test_budget_accounting_consistency():
    s = make_session()
    for _ in range(30):
        s.tick()
    total = sum(r.tick_ms for r in s.telemetry.records)
    assert abs(total - s.telemetry.total_tick_ms) < 1e-6
    s.close()


def test_overflow_drops_flagged():
    s = make_session()
    big = np.zeros(int(4.5 * s.model.cfg.audio.sample_rate), np.float32)
    s.ingest_audio(big)
    out = s.tick()
    assert out.record.overflow_drops > 0
    s.close()


def test_planner_async_never_blocks_ticks():
    # a 300 ms planner delay must not stall any tick
    s = make_session(planner="rule", delay_ms=300.0)
    durations = []
    for i in range(30):
        t0 = time.perf_counter()
        s.tick()
        durations.append((time.perf_counter() - t0) * 1000)
    # no tick should come close to the planner delay
    assert max(durations) < 250, f"a tick waited on the planner: {max(durations):.0f} ms"
    s.close()


def test_plan_applies_at_boundary_and_expires():
    s = make_session(planner="rule")
    plan = Plan(prompt_text="agent speaks", trajectory=np.zeros((4, 3, 2), np.float32),
                horizon=4, created_at=0.0, description="d", analysis="a")
    rev = s.prompt_rev
    s._apply_plan(plan)
    assert s.prompt_rev == rev + 1
    for _ in range(5):
        s.tick()
    assert s._plan is None  # expired after horizon
    assert not s.active_prompt.valid  # reverted to empty sentinel
    s.close()


def test_rule_planner_table():
    p = RulePlanner()
    req = PlanRequest(frame_index=0, keyframes=[], transcript="",
                      interlocutor_speaking=False, silence_seconds=2.5)
    plan = p.plan(req)
    assert plan.prompt_text == "agent speaks"
    assert plan.description and plan.analysis
    req2 = PlanRequest(frame_index=0, keyframes=[], transcript="",
                       interlocutor_speaking=True)
    assert p.plan(req2).prompt_text == "agent stays idle"


def test_plan_requires_all_stages():
    with pytest.raises(ValueError):
        Plan(prompt_text="x", trajectory=np.zeros((2, 3, 2)), horizon=2,
             created_at=0.0, description="", analysis="a")
    with pytest.raises(ValueError):
        Plan(prompt_text="x", trajectory=np.zeros((2, 3, 2)), horizon=0,
             created_at=0.0, description="d", analysis="a")


def test_interruption_probe_context_check():
    s = make_session()
    report = run_interruption_probe(s, total_frames=8, barge_in_frame=3)
    assert report.context_ok, report.context_detail
    s.close()
    s2 = make_session()
    neg = run_interruption_probe(s2, total_frames=6, barge_in_frame=None)
    assert neg.barge_in_frame is None and neg.response_frames is None
    s2.close()
