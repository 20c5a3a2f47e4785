"""Engine configuration: codec, backbone, sampling, and session settings.

The audio clock divides evenly into the video clock: one 24 fps video frame
carries exactly `audio_frames_per_video_frame` codec frames, and one codec
frame covers an integer number of PCM samples (the hop).  The sample rate
default is 7200 Hz because 72 Hz tokens require an integer hop; see README
for the trade-off.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path


@dataclass
class AudioCodecConfig:
    sample_rate: int = 7200
    codec_frame_rate: int = 72
    num_codebooks: int = 4
    codebook_size: int = 256
    code_dim: int = 64
    video_fps: int = 24

    def __post_init__(self):
        if self.sample_rate % self.codec_frame_rate != 0:
            raise ValueError(
                f"sample_rate {self.sample_rate} must be an integer multiple of "
                f"codec_frame_rate {self.codec_frame_rate}")
        if self.codec_frame_rate % self.video_fps != 0:
            raise ValueError(
                f"codec_frame_rate {self.codec_frame_rate} must be an integer multiple "
                f"of the video frame rate {self.video_fps}")
        if self.num_codebooks < 1:
            raise ValueError("need at least one codebook")

    @property
    def hop(self) -> int:
        return self.sample_rate // self.codec_frame_rate

    @property
    def frames_per_video_frame(self) -> int:
        return self.codec_frame_rate // self.video_fps

    @property
    def empty_token(self) -> int:
        """Reserved index one past the codebook range: missing modality."""
        return self.codebook_size


@dataclass
class VideoCodecConfig:
    height: int = 32
    width: int = 32
    channels: int = 3
    tokens_per_frame: int = 16
    token_dim: int = 32
    patch_size: int = 4
    temporal_compression: int = 1
    embed_dim: int = 128
    encoder_layers: int = 2
    decoder_layers: int = 2
    temporal_layers: int = 2
    temporal_window: int = 64
    num_joints: int = 2  # 3D-motion variant: pose dim = 3 + 6*num_joints

    def __post_init__(self):
        if self.temporal_compression != 1:
            raise ValueError("temporal compression is fixed at 1 (no frame merging)")
        if self.tokens_per_frame < 1:
            raise ValueError("need at least one token per frame")
        if self.height % self.patch_size or self.width % self.patch_size:
            raise ValueError("frame dims must be divisible by the patch size")

    @property
    def num_patches(self) -> int:
        return (self.height // self.patch_size) * (self.width // self.patch_size)

    @property
    def pose_dim(self) -> int:
        return 3 + 6 * self.num_joints


@dataclass
class ControlConfig:
    prompt_dim: int = 64
    max_prompt_chars: int = 256
    num_joints: int = 3      # tracked 2D points: head, hand, object anchor
    spatial_dim: int = 2
    cond_dim: int = 64
    num_speakers: int = 8

    @property
    def trajectory_dim(self) -> int:
        return self.num_joints * self.spatial_dim


@dataclass
class BackboneConfig:
    # 6 layers x 192 dims is the largest stack that holds the 42 ms frame
    # deadline on the reference 2-core box with headroom for the codecs
    layers: int = 6
    model_dim: int = 192
    num_heads: int = 6
    ff_mult: int = 4
    context_window_frames: int = 96   # maximum supported context
    diffusion_train_steps: int = 100
    diffusion_width: int = 256
    diffusion_layers: int = 3
    audio: AudioCodecConfig = field(default_factory=AudioCodecConfig)
    video: VideoCodecConfig = field(default_factory=VideoCodecConfig)
    control: ControlConfig = field(default_factory=ControlConfig)

    def __post_init__(self):
        if isinstance(self.audio, dict):
            self.audio = AudioCodecConfig(**self.audio)
        if isinstance(self.video, dict):
            self.video = VideoCodecConfig(**self.video)
        if isinstance(self.control, dict):
            self.control = ControlConfig(**self.control)
        if self.model_dim % self.num_heads:
            raise ValueError("model_dim must divide evenly across heads")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads


@dataclass
class SamplingParams:
    audio_temperature: float = 1.0
    audio_top_p: float = 0.95
    diffusion_steps: int = 20
    context_window_frames: int = 24   # real-time default; up to 96 offline
    seed: int = 0


@dataclass
class SessionConfig:
    fps: int = 24
    budget_ms: float = 0.0          # 0 -> derived as 1000/fps
    miss_policy: str = "repeat_last"
    planner: str = "rule"           # rule | none | external
    planner_delay_ms: float = 0.0
    horizon_frames: int = 72
    sampling: SamplingParams = field(default_factory=SamplingParams)

    def __post_init__(self):
        if isinstance(self.sampling, dict):
            self.sampling = SamplingParams(**self.sampling)
        if not self.budget_ms:
            self.budget_ms = 1000.0 / self.fps
        if self.miss_policy not in ("repeat_last", "degrade_sampler"):
            raise ValueError(f"unknown miss policy {self.miss_policy!r}")
        if self.planner not in ("rule", "none", "external"):
            raise ValueError(f"unknown planner {self.planner!r}")


def _coerce(value: str):
    low = value.strip()
    try:
        return json.loads(low)
    except json.JSONDecodeError:
        return low


def load_config_file(path: str | Path) -> dict:
    """Parse a config file: JSON object, or line-oriented key=value pairs."""
    text = Path(path).read_text(encoding="utf-8").strip()
    if not text:
        return {}
    if text.lstrip().startswith("{"):
        return json.loads(text)
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        target = out
        parts = key.strip().split(".")
        for part in parts[:-1]:
            target = target.setdefault(part, {})
        target[parts[-1]] = _coerce(value)
    return out


def config_dict(cfg) -> dict:
    return asdict(cfg)
