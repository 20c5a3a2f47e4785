"""Deterministic toy dialogue world.

Every sample is rendered from a ScenarioSpec: avatars are circles whose mouth
rectangle opens exactly when that party's audio is active, an optional object
square follows a manipulation path, and tracked joints (head, hand, object
anchor) are emitted as ground truth.  Audio is a per-speaker tone during
speech over a faint noise floor.  Identical specs render bit-identical
samples, which is what makes behavioral scoring against the script exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..config import AudioCodecConfig, VideoCodecConfig

FRAME_H = 32
FRAME_W = 32
OVERLAP_FRAMES = 8      # both parties audible this long after a barge-in
NOISE_FLOOR = 0.005
TONE_AMP = 0.5
HUMAN_TONE_HZ = 220.0

SPEAKER_COLORS = np.array([
    [0.85, 0.35, 0.35], [0.35, 0.75, 0.40], [0.35, 0.45, 0.85], [0.85, 0.75, 0.30],
    [0.70, 0.40, 0.80], [0.40, 0.75, 0.75], [0.80, 0.55, 0.35], [0.55, 0.55, 0.55],
], np.float32)


def speaker_tone_hz(speaker_id: int) -> float:
    return 320.0 + 45.0 * (speaker_id % 8)


@dataclass
class Segment:
    kind: str        # "speak" | "idle" | "interrupt"
    start: int
    end: int         # exclusive

    def __post_init__(self):
        if self.kind not in ("speak", "idle", "interrupt"):
            raise ValueError(f"unknown segment kind {self.kind!r}")
        if not 0 <= self.start < self.end:
            raise ValueError(f"bad segment bounds [{self.start}, {self.end})")


@dataclass
class ScenarioSpec:
    seed: int
    num_frames: int
    agent_segments: list[Segment] = field(default_factory=list)
    human_segments: list[Segment] = field(default_factory=list)
    object_present: bool = False
    object_path: np.ndarray | None = None   # [num_frames, 2] pixel centers
    prompt_label: str = ""
    speaker_id: int = 0

    def __post_init__(self):
        for segs in (self.agent_segments, self.human_segments):
            last_end = 0
            for s in sorted(segs, key=lambda s: s.start):
                if s.start < last_end:
                    raise ValueError("segments overlap within one party")
                if s.end > self.num_frames:
                    raise ValueError("segment extends past the scenario")
                last_end = s.end
        if self.object_present:
            if self.object_path is None or self.object_path.shape != (self.num_frames, 2):
                raise ValueError("object_present requires a full object_path")

    def activity(self, party: str) -> np.ndarray:
        """Per-frame speech activity implied by the script (with barge-in yield)."""
        segs = self.agent_segments if party == "agent" else self.human_segments
        other = self.human_segments if party == "agent" else self.agent_segments
        act = np.zeros(self.num_frames, bool)
        for s in segs:
            if s.kind in ("speak", "interrupt"):
                act[s.start:s.end] = True
        # an interrupt by the other party truncates the segment it lands in,
        # OVERLAP_FRAMES after onset (both audible inside the overlap window)
        for s in other:
            if s.kind == "interrupt":
                cut = min(s.start + OVERLAP_FRAMES, self.num_frames)
                for own in segs:
                    if own.start <= s.start < own.end:
                        act[cut:own.end] = False
        return act


@dataclass
class DialogueSample:
    spec: ScenarioSpec
    agent_audio: np.ndarray        # float PCM in [-1, 1]
    human_audio: np.ndarray
    agent_frames: np.ndarray       # [T, H, W, 3] in [0, 1]
    human_frames: np.ndarray
    joints: np.ndarray             # [T, 3, 2] head / hand / object anchor (px)
    agent_activity: np.ndarray     # [T] bool, ground truth
    human_activity: np.ndarray
    prompt_text: str
    speaker_id: int
    transcript: str
    stage: str = "first_person"
    masks: dict = field(default_factory=lambda: {"s": False, "r": False,
                                                 "P": False, "Vh": False})

    @property
    def num_frames(self) -> int:
        return self.agent_frames.shape[0]


def _draw_circle(img: np.ndarray, cx: float, cy: float, r: float, color) -> None:
    yy, xx = np.mgrid[0:img.shape[0], 0:img.shape[1]]
    mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
    img[mask] = color


def _draw_rect(img: np.ndarray, x0: int, y0: int, x1: int, y1: int, color) -> None:
    img[max(y0, 0):y1, max(x0, 0):x1] = color


def render_avatar_frame(color: np.ndarray, mouth_open: bool,
                        head_xy: tuple[float, float],
                        hand_xy: tuple[float, float],
                        object_xy: tuple[float, float] | None,
                        object_color=None) -> np.ndarray:
    img = np.full((FRAME_H, FRAME_W, 3), 0.08, np.float32)
    hx, hy = head_xy
    _draw_circle(img, hx, hy, 9.0, color)
    # eyes
    _draw_rect(img, int(hx) - 4, int(hy) - 3, int(hx) - 2, int(hy) - 1, (0.05, 0.05, 0.05))
    _draw_rect(img, int(hx) + 2, int(hy) - 3, int(hx) + 4, int(hy) - 1, (0.05, 0.05, 0.05))
    # mouth: tall when open, thin line when closed
    if mouth_open:
        _draw_rect(img, int(hx) - 2, int(hy) + 3, int(hx) + 3, int(hy) + 7, (0.02, 0.02, 0.02))
    else:
        _draw_rect(img, int(hx) - 2, int(hy) + 4, int(hx) + 3, int(hy) + 5, (0.02, 0.02, 0.02))
    if object_xy is not None:
        ox, oy = object_xy
        _draw_rect(img, int(ox) - 2, int(oy) - 2, int(ox) + 2, int(oy) + 2,
                   object_color if object_color is not None else (0.95, 0.85, 0.2))
    px, py = hand_xy
    _draw_rect(img, int(px) - 1, int(py) - 1, int(px) + 2, int(py) + 2, color * 0.8)
    return img


def _tone_track(activity: np.ndarray, freq: float, cfg: AudioCodecConfig,
                rng: np.random.Generator) -> np.ndarray:
    spf = cfg.hop * cfg.frames_per_video_frame  # samples per video frame
    n = activity.size * spf
    t = np.arange(n) / cfg.sample_rate
    wave = rng.standard_normal(n).astype(np.float32) * NOISE_FLOOR
    gate = np.repeat(activity, spf)
    wave[gate] += (TONE_AMP * np.sin(2 * np.pi * freq * t[gate])).astype(np.float32)
    return np.clip(wave, -1.0, 1.0)


def _transcript(spec: ScenarioSpec, agent_act: np.ndarray, human_act: np.ndarray) -> str:
    def runs(act):
        out, start = [], None
        for i, a in enumerate(act):
            if a and start is None:
                start = i
            elif not a and start is not None:
                out.append((start, i))
                start = None
        if start is not None:
            out.append((start, act.size))
        return out

    lines = [f"agent tone {int(speaker_tone_hz(spec.speaker_id))}hz frames {a}-{b}"
             for a, b in runs(agent_act)]
    lines += [f"human tone {int(HUMAN_TONE_HZ)}hz frames {a}-{b}" for a, b in runs(human_act)]
    if spec.prompt_label:
        lines.append(f"prompt: {spec.prompt_label}")
    return "\n".join(lines)


def render_scenario(spec: ScenarioSpec,
                    audio_cfg: AudioCodecConfig | None = None) -> DialogueSample:
    cfg = audio_cfg or AudioCodecConfig()
    rng = np.random.default_rng(spec.seed)
    t = spec.num_frames
    agent_act = spec.activity("agent")
    human_act = spec.activity("human")

    color = SPEAKER_COLORS[spec.speaker_id % len(SPEAKER_COLORS)]
    human_color = SPEAKER_COLORS[(spec.speaker_id + 3) % len(SPEAKER_COLORS)]
    head = (16.0, 13.0)
    rest_hand = (25.0, 26.0)

    agent_frames = np.zeros((t, FRAME_H, FRAME_W, 3), np.float32)
    human_frames = np.zeros((t, FRAME_H, FRAME_W, 3), np.float32)
    joints = np.zeros((t, 3, 2), np.float32)
    for i in range(t):
        obj = tuple(spec.object_path[i]) if spec.object_present else None
        hand = (obj[0], obj[1] + 3.0) if obj is not None else rest_hand
        agent_frames[i] = render_avatar_frame(color, bool(agent_act[i]), head, hand, obj)
        human_frames[i] = render_avatar_frame(human_color, bool(human_act[i]), head,
                                              rest_hand, None)
        anchor = obj if obj is not None else rest_hand
        joints[i, 0] = head
        joints[i, 1] = hand
        joints[i, 2] = anchor

    agent_audio = _tone_track(agent_act, speaker_tone_hz(spec.speaker_id), cfg,
                              np.random.default_rng(spec.seed * 2 + 1))
    human_audio = _tone_track(human_act, HUMAN_TONE_HZ, cfg,
                              np.random.default_rng(spec.seed * 2 + 2))

    return DialogueSample(
        spec=spec,
        agent_audio=agent_audio,
        human_audio=human_audio,
        agent_frames=agent_frames,
        human_frames=human_frames,
        joints=joints,
        agent_activity=agent_act,
        human_activity=human_act,
        prompt_text=spec.prompt_label,
        speaker_id=spec.speaker_id,
        transcript=_transcript(spec, agent_act, human_act),
    )


def compose_initial_frame(agent_sprite: np.ndarray | None,
                          object_sprites: list[tuple[np.ndarray, int, int]],
                          background: np.ndarray) -> np.ndarray:
    """Paste sprites into a background scene (deterministic alpha compositing).

    object_sprites are (sprite_rgba_or_rgb, x, y) with (x, y) the top-left
    corner; placement must stay inside the frame.
    """
    out = np.asarray(background, np.float32).copy()
    sprites = list(object_sprites)
    if agent_sprite is not None:
        ax = (out.shape[1] - agent_sprite.shape[1]) // 2
        ay = (out.shape[0] - agent_sprite.shape[0]) // 2
        sprites = [(agent_sprite, ax, ay)] + sprites
    for sprite, x, y in sprites:
        sprite = np.asarray(sprite, np.float32)
        h, w = sprite.shape[:2]
        if x < 0 or y < 0 or x + w > out.shape[1] or y + h > out.shape[0]:
            raise ValueError(f"sprite at ({x}, {y}) size ({w}x{h}) leaves the frame")
        if sprite.shape[2] == 4:
            alpha = sprite[:, :, 3:4]
            out[y:y + h, x:x + w, :] = alpha * sprite[:, :, :3] \
                + (1 - alpha) * out[y:y + h, x:x + w, :]
        else:
            out[y:y + h, x:x + w, :] = sprite[:, :, :3]
    return out


# -- scenario families -------------------------------------------------------


def turn_taking_spec(seed: int, num_frames: int = 96, interrupt: bool = False,
                     speaker_id: int | None = None) -> ScenarioSpec:
    """Alternating turns with gaps; optionally the human barges in mid-turn."""
    rng = np.random.default_rng(seed)
    sid = int(rng.integers(0, 8)) if speaker_id is None else speaker_id
    agent_segs: list[Segment] = []
    human_segs: list[Segment] = []
    cursor = 0
    human_turn = bool(rng.integers(0, 2))
    while cursor < num_frames - 12:
        turn = int(rng.integers(16, 30))
        gap = int(rng.integers(2, 6))
        end = min(cursor + turn, num_frames)
        (human_segs if human_turn else agent_segs).append(Segment("speak", cursor, end))
        cursor = end + gap
        human_turn = not human_turn
    spec = ScenarioSpec(seed=seed, num_frames=num_frames, agent_segments=agent_segs,
                        human_segments=human_segs, speaker_id=sid,
                        prompt_label="agent converses politely")
    if interrupt:
        # the human interrupts midway through an agent turn
        candidates = [s for s in agent_segs if s.end - s.start >= 14
                      and s.start + 4 < num_frames - OVERLAP_FRAMES - 2]
        if candidates:
            target = candidates[len(candidates) // 2]
            at = target.start + (target.end - target.start) // 2
            free = [h for h in human_segs if h.start <= at < h.end]
            if not free:
                bend = min(at + int(rng.integers(12, 20)), num_frames)
                cut = [h for h in human_segs if h.start >= at]
                for h in cut:
                    human_segs.remove(h)
                human_segs.append(Segment("interrupt", at, bend))
                spec = ScenarioSpec(seed=seed, num_frames=num_frames,
                                    agent_segments=agent_segs,
                                    human_segments=sorted(human_segs, key=lambda s: s.start),
                                    speaker_id=sid,
                                    prompt_label="agent converses politely")
    return spec


def single_speaker_spec(seed: int, num_frames: int = 96) -> ScenarioSpec:
    """Short question, then the agent holds the floor (synthetic QA analog)."""
    rng = np.random.default_rng(seed)
    q_end = int(rng.integers(8, 16))
    return ScenarioSpec(
        seed=seed, num_frames=num_frames,
        agent_segments=[Segment("speak", q_end + 3, num_frames - 4)],
        human_segments=[Segment("speak", 0, q_end)],
        speaker_id=int(rng.integers(0, 8)),
        prompt_label="agent explains at length")


def idle_splice_spec(seed: int, num_frames: int = 96) -> ScenarioSpec:
    """Both parties idle; different-speaker segments spliced into one dialogue."""
    rng = np.random.default_rng(seed)
    return ScenarioSpec(
        seed=seed, num_frames=num_frames,
        agent_segments=[], human_segments=[],
        speaker_id=int(rng.integers(0, 8)),
        prompt_label="agent stays idle")


def manipulation_spec(seed: int, num_frames: int = 96) -> ScenarioSpec:
    """The agent narrates while sliding the object along a straight path."""
    rng = np.random.default_rng(seed)
    x0 = float(rng.uniform(6, 10))
    y0 = float(rng.uniform(20, 26))
    dx = float(rng.uniform(0.15, 0.3))
    path = np.zeros((num_frames, 2), np.float32)
    path[:, 0] = np.minimum(x0 + dx * np.arange(num_frames), FRAME_W - 4.0)
    path[:, 1] = y0
    return ScenarioSpec(
        seed=seed, num_frames=num_frames,
        agent_segments=[Segment("speak", 6, num_frames - 6)],
        human_segments=[],
        object_present=True, object_path=path,
        speaker_id=int(rng.integers(0, 8)),
        prompt_label="agent moves the object right")
