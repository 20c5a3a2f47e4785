"""Control channels: text prompt, joint-velocity trajectory, speaker identity.

The prompt encoder is a frozen map (hashed byte trigrams through a fixed
random projection): deterministic, never trained, and swappable for a larger
text model behind the same signature.  The trajectory encoder is a single
learned linear layer trained with the backbone.  Absent controls are flagged
and the backbone substitutes its learned per-channel sentinel vectors.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .config import ControlConfig
from .nn import Linear, Module, Tensor

_PROMPT_BUCKETS = 512
_PROMPT_SEED = 0x7E0C


@dataclass
class PromptEmbedding:
    vector: np.ndarray
    text: str
    valid: bool = True


@dataclass
class Trajectory:
    velocities: np.ndarray  # [frames, joints, spatial]
    valid: bool = True

    @property
    def num_frames(self) -> int:
        return self.velocities.shape[0]

    @property
    def num_joints(self) -> int:
        return self.velocities.shape[1]


@dataclass
class AgentIdentity:
    speaker_id: int | None = None

    @property
    def valid(self) -> bool:
        return self.speaker_id is not None


class PromptEncoder:
    """Frozen byte-trigram bag-of-features encoder."""

    def __init__(self, cfg: ControlConfig):
        self.cfg = cfg
        rng = np.random.default_rng(_PROMPT_SEED)
        self.projection = (rng.standard_normal((_PROMPT_BUCKETS, cfg.prompt_dim))
                           / np.sqrt(_PROMPT_BUCKETS)).astype(np.float32)

    def weight_hash(self) -> str:
        import hashlib
        return hashlib.sha256(self.projection.tobytes()).hexdigest()[:16]

    def encode(self, text: str) -> PromptEmbedding:
        if text is None or text == "":
            return PromptEmbedding(np.zeros(self.cfg.prompt_dim, np.float32), "", valid=False)
        if len(text) > self.cfg.max_prompt_chars:
            warnings.warn(f"prompt truncated to {self.cfg.max_prompt_chars} characters")
            text = text[:self.cfg.max_prompt_chars]
        raw = text.encode("utf-8")
        padded = b"\x00" + raw + b"\x00"
        counts = np.zeros(_PROMPT_BUCKETS, np.float32)
        for i in range(len(padded) - 2):
            tri = padded[i:i + 3]
            bucket = (tri[0] * 31 * 31 + tri[1] * 31 + tri[2]) % _PROMPT_BUCKETS
            counts[bucket] += 1.0
        norm = np.linalg.norm(counts)
        if norm > 0:
            counts /= norm
        vec = counts @ self.projection
        return PromptEmbedding(vec.astype(np.float32), text, valid=True)


def positions_to_trajectory(positions: np.ndarray) -> Trajectory:
    """First differences of joint positions; frame 0 velocity is zero.

    positions: [frames, joints, spatial], frames >= 2.  Output keeps one
    velocity per frame so downstream conditioning stays frame-aligned.
    """
    positions = np.asarray(positions, dtype=np.float32)
    if positions.ndim != 3:
        raise ValueError(f"positions must be [frames, joints, spatial], got {positions.shape}")
    if positions.shape[0] < 2:
        raise ValueError("need at least two frames of positions")
    if not np.all(np.isfinite(positions)):
        raise ValueError("positions contain NaN or Inf")
    vel = np.zeros_like(positions)
    vel[1:] = positions[1:] - positions[:-1]
    return Trajectory(vel, valid=True)


class TrajectoryEncoder(Module):
    """Single linear layer lifting per-frame joint velocities to cond vectors."""

    def __init__(self, rng: np.random.Generator, cfg: ControlConfig):
        self.cfg = cfg
        self.proj = Linear(rng, cfg.trajectory_dim, cfg.cond_dim)

    def __call__(self, traj: Trajectory) -> Tensor:
        if traj.velocities.ndim != 3 or traj.velocities.shape[1] != self.cfg.num_joints \
                or traj.velocities.shape[2] != self.cfg.spatial_dim:
            raise ValueError(
                f"trajectory shaped {traj.velocities.shape}, expected "
                f"[frames, {self.cfg.num_joints}, {self.cfg.spatial_dim}]")
        flat = traj.velocities.reshape(traj.num_frames, self.cfg.trajectory_dim)
        return self.proj(Tensor(flat))

    @property
    def bias_vector(self) -> np.ndarray:
        return self.proj.bias.data


def serialize_trajectory(traj: Trajectory) -> bytes:
    """Wire format: u16 frame count, u8 joint count, f32 velocities row-major."""
    frames, joints, spatial = traj.velocities.shape
    if spatial != 2:
        raise ValueError("wire format carries 2-component velocities")
    head = struct.pack("<HB", frames, joints)
    body = np.asarray(traj.velocities, dtype="<f4").tobytes()
    return head + body


def deserialize_trajectory(blob: bytes) -> Trajectory:
    if len(blob) < 3:
        raise ValueError("trajectory blob too short")
    frames, joints = struct.unpack("<HB", blob[:3])
    need = 3 + frames * joints * 2 * 4
    if len(blob) != need:
        raise ValueError(f"trajectory blob length {len(blob)} != expected {need}")
    vel = np.frombuffer(blob[3:], dtype="<f4").reshape(frames, joints, 2).copy()
    return Trajectory(vel, valid=True)


@dataclass
class ConditionBundle:
    """Per-frame conditioning: prompt, trajectory step, speaker identity."""

    prompt: PromptEmbedding
    trajectory_step: np.ndarray | None = None  # [joints, spatial] for this frame
    speaker: AgentIdentity = field(default_factory=AgentIdentity)

    @staticmethod
    def empty(cfg: ControlConfig) -> "ConditionBundle":
        return ConditionBundle(
            prompt=PromptEmbedding(np.zeros(cfg.prompt_dim, np.float32), "", valid=False),
            trajectory_step=None,
            speaker=AgentIdentity(None),
        )
