"""3D-motion variant: pose sequences through the causal temporal transformer.

A pose is root displacement (3) plus a 6-real rotation representation per
joint; only the temporal transformer is retained from the video path, with a
linear lift from pose space in front of it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..config import VideoCodecConfig
from ..nn import Module, Tensor, no_grad
from .codec import TemporalTransformer, VideoTokenFrame


@dataclass
class MotionPose:
    root: np.ndarray       # [3]
    rotations: np.ndarray  # [J, 6]

    def __post_init__(self):
        self.root = np.asarray(self.root, np.float32).reshape(3)
        self.rotations = np.asarray(self.rotations, np.float32)
        if self.rotations.ndim != 2 or self.rotations.shape[1] != 6:
            raise ValueError(f"rotations must be [J, 6], got {self.rotations.shape}")

    @property
    def num_joints(self) -> int:
        return self.rotations.shape[0]

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.root, self.rotations.reshape(-1)])


def sixd_to_rotation(sixd: np.ndarray) -> np.ndarray:
    """Gram-Schmidt: 6 reals -> a proper rotation matrix."""
    sixd = np.asarray(sixd, np.float64).reshape(2, 3)
    a, b = sixd
    x = a / (np.linalg.norm(a) + 1e-12)
    b = b - (x @ b) * x
    y = b / (np.linalg.norm(b) + 1e-12)
    z = np.cross(x, y)
    return np.stack([x, y, z]).T


class MotionEncoder(Module):
    """Pose sequence -> one contextualized token frame per pose (L2 = 1)."""

    def __init__(self, cfg: VideoCodecConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.temporal = TemporalTransformer(rng, cfg, in_dim=cfg.pose_dim)

    def encode(self, poses: list[MotionPose], start_frame: int = 0) -> list[VideoTokenFrame]:
        if not poses:
            return []
        joints = poses[0].num_joints
        if any(p.num_joints != joints for p in poses):
            raise ValueError("inconsistent joint count across poses")
        if joints != self.cfg.num_joints:
            raise ValueError(f"pose has {joints} joints, encoder configured for {self.cfg.num_joints}")
        arr = np.stack([p.flatten() for p in poses])[:, None, :]  # [T, 1, pose_dim]
        with no_grad():
            out = self.temporal(Tensor(arr), start_frame).data
        return [VideoTokenFrame(out[i], start_frame + i) for i in range(len(poses))]

    def encode_tensor(self, poses: np.ndarray) -> Tensor:
        """Training path: [T, pose_dim] -> [T, 1, token_dim]."""
        return self.temporal(Tensor(poses[:, None, :]))
