"""The real-time duplex session engine.

Three actors: ingestion (any thread, lock-guarded buffers, never blocks
generation), generation (exclusive owner of the model context, strictly
serial ticks), and the asynchronous planner.  Events become visible at the
frame boundary after they arrive; control updates swap the active bundle
atomically at that boundary.  Every tick emits exactly one video frame and
one frame's worth of audio samples, on time or not; late ticks engage the
configured miss policy and are flagged in telemetry.
"""

from __future__ import annotations

import threading
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ..audio.codec import AudioCodec, AudioTokenGrid
from ..backbone.generate import FrameGenerator
from ..backbone.model import DuplexBackbone
from ..config import SessionConfig
from ..control import (AgentIdentity, ConditionBundle, PromptEncoder,
                       Trajectory)
from ..nn import no_grad, Tensor
from ..video.codec import VideoCodec, VideoTokenFrame
from .planner import (KEYFRAME_COUNT, AsyncPlanner, Plan, PlanRequest,
                      RulePlanner)
from .telemetry import FrameBudget, Telemetry, TickRecord

AUDIO_BUFFER_SECONDS = 4.0
VIDEO_BUFFER_FRAMES = 8
ACTIVITY_RMS = 0.08


@dataclass
class AgentFrame:
    index: int
    pcm: np.ndarray                 # exactly one frame of samples
    image: np.ndarray               # decoded agent frame [H, W, 3]
    audio_tokens: np.ndarray        # delayed rows emitted this tick [na, K]
    video_tokens: np.ndarray        # [L2, token_dim]
    record: TickRecord = None
    manifest: dict = field(default_factory=dict)
    repeated: bool = False


class StreamingContextualizer:
    """Causal temporal contextualization over a short sliding window."""

    def __init__(self, codec: VideoCodec, window: int = 16):
        self.codec = codec
        self.window = window
        self.history: deque = deque(maxlen=window)
        self.start_index = 0

    def push(self, image: np.ndarray, frame_index: int) -> np.ndarray:
        pre = self.codec.encode_frame(image).tokens
        if len(self.history) == self.history.maxlen:
            self.start_index += 1
        self.history.append(pre)
        stack = np.stack(list(self.history))
        with no_grad():
            out = self.codec.temporal(Tensor(stack), self.start_index).data
        return out[-1]


class SessionFault(RuntimeError):
    pass


class DuplexSession:
    def __init__(self, model: DuplexBackbone, audio_codec: AudioCodec,
                 video_codec: VideoCodec, prompt_encoder: PromptEncoder,
                 config: SessionConfig | None = None,
                 initial_frame: np.ndarray | None = None,
                 core_backend: str | None = None):
        self.cfg = config or SessionConfig()
        self.model = model
        self.audio_codec = audio_codec
        self.video_codec = video_codec
        self.prompt_encoder = prompt_encoder
        self.budget = FrameBudget(self.cfg.fps, self.cfg.budget_ms, self.cfg.miss_policy)
        self.telemetry = Telemetry(self.budget)
        self.generator = FrameGenerator(model, self.cfg.sampling, core_backend)
        self.spf = model.cfg.audio.hop * model.cfg.audio.frames_per_video_frame
        self.na = model.cfg.audio.frames_per_video_frame

        initial_tokens = None
        if initial_frame is not None:
            initial_tokens = video_codec.encode_clip(initial_frame[None])[0].tokens
        self.generator.reset(initial_video_tokens=initial_tokens)

        self._lock = threading.Lock()
        self._audio_buf = np.zeros(0, np.float32)
        self._video_buf: deque = deque(maxlen=VIDEO_BUFFER_FRAMES)
        self._pending_controls: list[tuple[str, object]] = []
        self._overflow_drops = 0

        self.frame = 0
        self.prompt_rev = 0
        self.active_prompt = prompt_encoder.encode("")
        self.active_speaker = AgentIdentity(None)
        self._traj_queue: deque = deque()
        self._plan: Plan | None = None
        self._plan_applied_at = -1
        self._manual_prompt = False

        self.contextualizer = StreamingContextualizer(video_codec)
        rule = RulePlanner(model.cfg.control.num_joints) if self.cfg.planner == "rule" else None
        self.planner = AsyncPlanner(rule, self.cfg.planner_delay_ms) \
            if self.cfg.planner != "none" else None
        self._last_human_pcm = np.zeros(self.spf, np.float32)
        self._silence_frames = 0
        self._agent_active = False
        self._keyframes: deque = deque(maxlen=KEYFRAME_COUNT)
        self._last_payload: AgentFrame | None = None
        self._degraded = False
        self._audio_tail = np.zeros(self.spf, np.float32)  # rolling encode context
        self.faulted = False
        self.manifests: list[dict] = []
        from ..fast import limit_blas_threads
        self._blas_limit = limit_blas_threads(1)

    # -- ingestion (any thread) -------------------------------------------------

    def ingest_audio(self, pcm: np.ndarray) -> dict:
        """Interlocutor PCM chunk; visible at the next frame boundary."""
        pcm = np.asarray(pcm, np.float32).reshape(-1)
        with self._lock:
            cap = int(AUDIO_BUFFER_SECONDS * self.model.cfg.audio.sample_rate)
            self._audio_buf = np.concatenate([self._audio_buf, pcm])
            if self._audio_buf.size > cap:
                self._overflow_drops += self._audio_buf.size - cap
                self._audio_buf = self._audio_buf[-cap:]
            return {"arrived_frame": self.frame}

    def ingest_video(self, image: np.ndarray) -> dict:
        with self._lock:
            if len(self._video_buf) == self._video_buf.maxlen:
                self._overflow_drops += 1
            self._video_buf.append(np.asarray(image, np.float32))
            return {"arrived_frame": self.frame}

    def set_prompt(self, text: str) -> dict:
        with self._lock:
            self._pending_controls.append(("prompt", text))
            return {"arrived_frame": self.frame}

    def set_trajectory(self, traj: Trajectory) -> dict:
        with self._lock:
            self._pending_controls.append(("trajectory", traj))
            return {"arrived_frame": self.frame}

    def set_speaker(self, speaker_id: int) -> dict:
        with self._lock:
            self._pending_controls.append(("speaker", speaker_id))
            return {"arrived_frame": self.frame}

    ingest = ingest_audio  # default event kind

    # -- frame boundary ----------------------------------------------------------

    def _apply_controls(self, controls: list[tuple[str, object]]) -> None:
        for kind, value in controls:
            if kind == "prompt":
                self.active_prompt = self.prompt_encoder.encode(value)
                self.prompt_rev += 1
                self._manual_prompt = True
            elif kind == "trajectory":
                self._traj_queue.clear()
                for row in value.velocities:
                    self._traj_queue.append(row)
            elif kind == "speaker":
                self.active_speaker = AgentIdentity(int(value))
            else:
                raise ValueError(f"unknown control {kind!r}")

    def _apply_plan(self, plan: Plan) -> None:
        self._plan = plan
        self._plan_applied_at = self.frame
        self.active_prompt = self.prompt_encoder.encode(plan.prompt_text)
        self.prompt_rev += 1
        self._manual_prompt = False
        self._traj_queue.clear()
        for row in plan.trajectory:
            self._traj_queue.append(row)

    def _expire_plan(self) -> None:
        if self._plan is not None and not self._manual_prompt \
                and self.frame - self._plan_applied_at >= self._plan.horizon:
            self._plan = None
            self.active_prompt = self.prompt_encoder.encode("")
            self.prompt_rev += 1
            self._traj_queue.clear()

    def _drain_frame_inputs(self):
        with self._lock:
            pcm = self._audio_buf
            self._audio_buf = np.zeros(0, np.float32)
            video = self._video_buf.pop() if self._video_buf else None
            self._video_buf.clear()
            controls = self._pending_controls
            self._pending_controls = []
            drops = self._overflow_drops
            self._overflow_drops = 0
        return pcm, video, controls, drops

    # -- the tick -----------------------------------------------------------------

    def tick(self) -> AgentFrame:
        if self.faulted:
            raise SessionFault("session is in a fault state")
        t0 = time.perf_counter()
        i = self.frame
        pcm_in, video_in, controls, drops = self._drain_frame_inputs()
        self._apply_controls(controls)
        if self.planner is not None:
            plan = self.planner.poll()
            if plan is not None:
                self._apply_plan(plan)
        self._expire_plan()

        manifest_events = []
        ih_rows = None
        if pcm_in.size > 0 and i >= 1:
            chunk = np.zeros(self.spf, np.float32)
            chunk[:min(self.spf, pcm_in.size)] = pcm_in[-self.spf:] if pcm_in.size >= self.spf \
                else pcm_in
            rms = float(np.sqrt((chunk ** 2).mean()))
            self._silence_frames = 0 if rms > ACTIVITY_RMS else self._silence_frames + 1
            self._last_human_pcm = chunk
            # encode with one frame of rolling context to tame boundary effects
            window = np.concatenate([self._audio_tail, chunk])
            grid = self.audio_codec.encode(np.clip(window, -1, 1))
            ih_rows = grid.tokens[-self.na:]
            self._audio_tail = chunk
            manifest_events.append(("human_audio", i - 1))
        else:
            self._silence_frames += 1

        ih_video_tokens = None
        if video_in is not None and i >= 1:
            ih_video_tokens = self.contextualizer.push(video_in, i - 1)
            manifest_events.append(("human_video", i - 1))

        bundle = ConditionBundle(
            prompt=self.active_prompt,
            trajectory_step=self._traj_queue.popleft() if self._traj_queue else None,
            speaker=self.active_speaker)
        try:
            steps = self.cfg.sampling.diffusion_steps
            if self._degraded:
                steps = max(1, steps // 2)
            out = self.generator.generate_frame(
                bundle, ih_audio_rows=ih_rows, ih_video_tokens=ih_video_tokens,
                diffusion_steps=steps)
        except Exception as e:
            self.faulted = True
            raise SessionFault(f"generation failed at frame {i}: {e}") from e

        pcm_out = np.zeros(self.spf, np.float32)
        if out.completed_audio is not None:
            grid = AudioTokenGrid(np.clip(out.completed_audio, 0,
                                          self.model.cfg.audio.empty_token),
                                  self.model.cfg.audio)
            pcm_out = self.audio_codec.decode(grid)[:self.spf]
        image = self.video_codec.decode_frame(VideoTokenFrame(out.video_tokens, i))
        self._agent_active = bool(np.sqrt((pcm_out ** 2).mean()) > ACTIVITY_RMS)
        if i % self.cfg.fps == 0:
            self._keyframes.append(image.copy())
        self._maybe_request_plan(i)

        dt_ms = (time.perf_counter() - t0) * 1000.0
        miss = dt_ms > self.budget.budget_ms
        policy = ""
        repeated = False
        if miss:
            policy = self.budget.miss_policy
            if policy == "degrade_sampler":
                self._degraded = True
        elif self._degraded:
            self._degraded = False

        manifest = dict(out.context_manifest)
        manifest["events"] = manifest_events
        manifest["emitted_frame"] = i
        self.manifests.append(manifest)
        rec = TickRecord(frame=i, tick_ms=dt_ms, miss=miss, policy=policy,
                         planner_ms=self.planner.last_latency_ms if self.planner else 0.0,
                         prompt_rev=self.prompt_rev, overflow_drops=drops)
        self.telemetry.add(rec)
        if self.planner is not None:
            self.telemetry.planner_timeouts = self.planner.timeouts

        frame_out = AgentFrame(index=i, pcm=pcm_out, image=image,
                               audio_tokens=out.delayed_audio,
                               video_tokens=out.video_tokens, record=rec,
                               manifest=manifest)
        if miss and policy == "repeat_last" and self._last_payload is not None:
            prev = self._last_payload
            frame_out = AgentFrame(index=i, pcm=prev.pcm.copy(),
                                   image=prev.image.copy(),
                                   audio_tokens=out.delayed_audio,
                                   video_tokens=out.video_tokens, record=rec,
                                   manifest=manifest, repeated=True)
        self._last_payload = frame_out
        self.frame += 1
        return frame_out

    def _maybe_request_plan(self, i: int) -> None:
        if self.planner is None or i % self.cfg.fps != self.cfg.fps - 1:
            return
        if len(self._keyframes) < KEYFRAME_COUNT:
            return  # under 4 s of history: planner idles
        obj = None
        req = PlanRequest(
            frame_index=i,
            keyframes=list(self._keyframes),
            transcript=f"agent {'speaking' if self._agent_active else 'quiet'}; "
                       f"interlocutor silent {self._silence_frames / self.cfg.fps:.1f}s",
            object_xy=obj,
            agent_speaking=self._agent_active,
            interlocutor_speaking=self._silence_frames == 0,
            silence_seconds=self._silence_frames / self.cfg.fps)
        self.planner.submit(req)

    def close(self) -> None:
        if self.planner is not None:
            self.planner.close()
        self._blas_limit.restore()
