"""Asynchronous three-stage planner: describe, analyze, plan.

The default desk-scale planner is a deterministic rule table over toyworld
features (speech activity, object position), standing in for a large
vision-language model; its latency is emulated with a configurable delay so
the asynchrony contract is exercised for real.  The generation loop never
waits: plans land on a queue and apply at the next frame boundary.
"""

from __future__ import annotations

import queue
import threading
import time
from dataclasses import dataclass, field

import numpy as np

KEYFRAME_COUNT = 4
KEYFRAME_SPACING_S = 1.0
DEFAULT_HORIZON_FRAMES = 72   # 3 s at 24 fps
PLANNER_TIMEOUT_S = 2.0


@dataclass
class PlanRequest:
    frame_index: int
    keyframes: list[np.ndarray]       # 4 frames sampled 1 s apart, newest last
    transcript: str
    object_xy: tuple[float, float] | None = None
    agent_speaking: bool = False
    interlocutor_speaking: bool = False
    silence_seconds: float = 0.0


@dataclass
class Plan:
    prompt_text: str
    trajectory: np.ndarray            # [horizon, joints, 2] velocities
    horizon: int = DEFAULT_HORIZON_FRAMES
    created_at: float = 0.0
    description: str = ""
    analysis: str = ""
    request_frame: int = -1

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("plan horizon must be positive")
        if not (self.description and self.analysis):
            raise ValueError("a plan carries all three stage outputs")


class RulePlanner:
    """Deterministic rule table over toyworld features."""

    def __init__(self, num_joints: int = 3):
        self.num_joints = num_joints

    def plan(self, req: PlanRequest) -> Plan:
        description = (
            f"agent {'speaking' if req.agent_speaking else 'quiet'}; "
            f"interlocutor {'speaking' if req.interlocutor_speaking else 'quiet'}; "
            f"object {'at %.0f,%.0f' % req.object_xy if req.object_xy else 'absent'}")
        if req.interlocutor_speaking:
            analysis = "interlocutor holds the floor; agent should keep listening"
            prompt = "agent stays idle"
        elif req.silence_seconds >= 2.0:
            analysis = "interlocutor silent for a while; agent should take the turn"
            prompt = "agent speaks"
        elif req.agent_speaking:
            analysis = "agent already holds the floor; continue naturally"
            prompt = "agent converses politely"
        else:
            analysis = "brief gap in conversation; keep idling"
            prompt = "agent stays idle"
        traj = np.zeros((DEFAULT_HORIZON_FRAMES, self.num_joints, 2), np.float32)
        if req.object_xy is not None and not req.interlocutor_speaking:
            traj[:, 2, 0] = 0.2  # nudge the object rightward
        return Plan(prompt_text=prompt, trajectory=traj,
                    horizon=DEFAULT_HORIZON_FRAMES, created_at=time.monotonic(),
                    description=description, analysis=analysis,
                    request_frame=req.frame_index)


class AsyncPlanner:
    """Runs a planner on its own thread; request/response via queues."""

    def __init__(self, planner: RulePlanner | None, delay_ms: float = 0.0,
                 timeout_s: float = PLANNER_TIMEOUT_S):
        self.planner = planner
        self.delay_ms = delay_ms
        self.timeout_s = timeout_s
        self._requests: queue.Queue = queue.Queue()
        self._results: queue.Queue = queue.Queue()
        self._stop = threading.Event()
        self.busy = False
        self.last_latency_ms = 0.0
        self.timeouts = 0
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def _run(self) -> None:
        while not self._stop.is_set():
            try:
                req = self._requests.get(timeout=0.05)
            except queue.Empty:
                continue
            start = time.monotonic()
            if self.delay_ms > 0:
                time.sleep(self.delay_ms / 1000.0)
            plan = self.planner.plan(req) if self.planner else None
            latency = (time.monotonic() - start) * 1000.0
            self._results.put((plan, latency))

    def submit(self, req: PlanRequest) -> bool:
        """Non-blocking; refuses while a request is in flight."""
        if self.busy or self.planner is None:
            return False
        self.busy = True
        self._requests.put(req)
        return True

    def poll(self) -> Plan | None:
        """Non-blocking; returns a finished plan, dropping timed-out ones."""
        try:
            plan, latency = self._results.get_nowait()
        except queue.Empty:
            return None
        self.busy = False
        self.last_latency_ms = latency
        if latency > self.timeout_s * 1000.0:
            self.timeouts += 1
            return None
        return plan

    def close(self) -> None:
        self._stop.set()
        self._thread.join(timeout=1.0)
