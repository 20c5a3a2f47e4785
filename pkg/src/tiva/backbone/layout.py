"""Frame-block layout and training batch assembly.

Every video frame occupies a fixed run of sequence slots, in this order:
prompt, trajectory, speaker, interlocutor audio (one slot per codec frame,
all K delayed codebooks summed into it), interlocutor video (one slot per
token), agent audio (same layout as interlocutor), agent video.  Agent slots
sit strictly after the frame's condition slots, so sampling stays causal.

Input/target shift conventions (what each slot carries at frame block i):
    interlocutor slots: frame i-1 content (arrivals during the previous frame)
    agent audio slot (i, j): input = delayed tokens at codec step 3i+j-1,
      the head at that slot predicts delayed step 3i+j
    agent video slot (i, l): input = agent token l of frame i-1, the hidden
      state is the diffusion condition for token l of frame i
Frame 0 inputs fall back to the learned start/empty sentinels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..config import BackboneConfig
from .delay import delayed_view


@dataclass
class FrameLayout:
    num_audio_slots: int      # codec frames per video frame
    num_video_slots: int      # tokens per video frame

    @property
    def slots_per_frame(self) -> int:
        return 3 + 2 * (self.num_audio_slots + self.num_video_slots)

    @property
    def prompt_slot(self) -> int:
        return 0

    @property
    def traj_slot(self) -> int:
        return 1

    @property
    def speaker_slot(self) -> int:
        return 2

    @property
    def ih_audio_slots(self) -> slice:
        return slice(3, 3 + self.num_audio_slots)

    @property
    def ih_video_slots(self) -> slice:
        a = 3 + self.num_audio_slots
        return slice(a, a + self.num_video_slots)

    @property
    def ag_audio_slots(self) -> slice:
        a = 3 + self.num_audio_slots + self.num_video_slots
        return slice(a, a + self.num_audio_slots)

    @property
    def ag_video_slots(self) -> slice:
        a = 3 + 2 * self.num_audio_slots + self.num_video_slots
        return slice(a, a + self.num_video_slots)

    @staticmethod
    def from_config(cfg: BackboneConfig) -> "FrameLayout":
        return FrameLayout(cfg.audio.frames_per_video_frame,
                           cfg.video.tokens_per_frame)


@dataclass
class TokenizedDialogue:
    """A dialogue sample after the frozen codecs: ready for assembly."""
    ag_audio: np.ndarray            # [3T, K] raw codec indices
    ih_audio: np.ndarray            # [3T, K]
    ag_video: np.ndarray | None     # [T, L2, token_dim] contextualized, None for audio-only
    ih_video: np.ndarray | None
    traj: np.ndarray                # [T, joints*spatial] per-frame velocities
    prompt_vec: np.ndarray          # [prompt_dim]
    speaker_id: int
    masks: dict = field(default_factory=dict)
    num_frames: int = 0
    agent_activity: np.ndarray | None = None

    def __post_init__(self):
        if self.num_frames == 0:
            self.num_frames = self.traj.shape[0]


@dataclass
class AssembledBatch:
    """Everything forward_train needs, already delayed/shifted/cropped."""
    prompt: np.ndarray          # [B, T, prompt_dim]
    prompt_valid: np.ndarray    # [B, T] in {0,1}
    traj: np.ndarray            # [B, T, traj_dim]
    traj_valid: np.ndarray
    speaker: np.ndarray         # [B, T] int
    speaker_valid: np.ndarray
    ih_audio: np.ndarray        # [B, T, na, K] delayed indices
    ih_video: np.ndarray        # [B, T, L2, token_dim]
    ih_video_valid: np.ndarray  # [B, T]
    ag_audio_in: np.ndarray     # [B, T, na, K]
    ag_video_in: np.ndarray     # [B, T, L2, token_dim]
    ag_video_in_valid: np.ndarray
    audio_targets: np.ndarray   # [B, T, na, K]
    video_targets: np.ndarray   # [B, T, L2, token_dim]
    video_loss_mask: np.ndarray  # [B, T]

    @property
    def batch_frames(self) -> tuple[int, int]:
        return self.prompt.shape[0], self.prompt.shape[1]


def assemble_training_batch(dialogues: list[TokenizedDialogue], cfg: BackboneConfig,
                            crop_frames: int, rng: np.random.Generator,
                            starts: list[int] | None = None) -> AssembledBatch:
    """Crop each dialogue to `crop_frames` frames and build shifted arrays."""
    b = len(dialogues)
    na = cfg.audio.frames_per_video_frame
    k = cfg.audio.num_codebooks
    l2 = cfg.video.tokens_per_frame
    td = cfg.video.token_dim
    empty = cfg.audio.empty_token
    t = crop_frames

    out = AssembledBatch(
        prompt=np.zeros((b, t, cfg.control.prompt_dim), np.float32),
        prompt_valid=np.zeros((b, t), np.float32),
        traj=np.zeros((b, t, cfg.control.trajectory_dim), np.float32),
        traj_valid=np.zeros((b, t), np.float32),
        speaker=np.zeros((b, t), np.int64),
        speaker_valid=np.zeros((b, t), np.float32),
        ih_audio=np.full((b, t, na, k), empty, np.int64),
        ih_video=np.zeros((b, t, l2, td), np.float32),
        ih_video_valid=np.zeros((b, t), np.float32),
        ag_audio_in=np.full((b, t, na, k), empty, np.int64),
        ag_video_in=np.zeros((b, t, l2, td), np.float32),
        ag_video_in_valid=np.zeros((b, t), np.float32),
        audio_targets=np.full((b, t, na, k), empty, np.int64),
        video_targets=np.zeros((b, t, l2, td), np.float32),
        video_loss_mask=np.zeros((b, t), np.float32),
    )

    for j, d in enumerate(dialogues):
        if d.num_frames < t:
            raise ValueError(f"dialogue {j} shorter ({d.num_frames}) than crop {t}")
        f0 = int(rng.integers(0, d.num_frames - t + 1)) if starts is None else starts[j]
        dv_ag = delayed_view(d.ag_audio, na * d.num_frames, empty)
        dv_ih = delayed_view(d.ih_audio, na * d.num_frames, empty)

        if not d.masks.get("P", False):
            out.prompt[j] = d.prompt_vec
            out.prompt_valid[j] = 1.0
        if not d.masks.get("r", False):
            out.traj[j] = d.traj[f0:f0 + t]
            out.traj_valid[j] = 1.0
        if not d.masks.get("s", False):
            out.speaker[j] = d.speaker_id
            out.speaker_valid[j] = 1.0

        for i in range(t):
            g = f0 + i  # global frame index
            if g >= 1:
                out.ih_audio[j, i] = dv_ih[na * (g - 1):na * g]
                if d.ih_video is not None and not d.masks.get("Vh", False):
                    out.ih_video[j, i] = d.ih_video[g - 1]
                    out.ih_video_valid[j, i] = 1.0
            # agent audio inputs: previous delayed step, ramping from empty
            s0 = na * g
            for jj in range(na):
                if s0 + jj - 1 >= 0:
                    out.ag_audio_in[j, i, jj] = dv_ag[s0 + jj - 1]
            out.audio_targets[j, i] = dv_ag[s0:s0 + na]
            if d.ag_video is not None:
                if g >= 1:
                    out.ag_video_in[j, i] = d.ag_video[g - 1]
                    out.ag_video_in_valid[j, i] = 1.0
                out.video_targets[j, i] = d.ag_video[g]
                out.video_loss_mask[j, i] = 1.0
    return out
