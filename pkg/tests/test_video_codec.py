"""Video codec: shapes, causality (bitwise), sentinel, motion variant."""

import numpy as np
import pytest

from tiva.config import VideoCodecConfig
from tiva.video import (GRAY_LEVEL, MotionEncoder, MotionPose, VideoCodec,
                        VideoTokenFrame, psnr, sixd_to_rotation)

CFG = VideoCodecConfig()


def toy_images(n: int, seed: int = 0) -> np.ndarray:
    """Flat-color frames with a bright square at varying positions."""
    rng = np.random.default_rng(seed)
    imgs = np.zeros((n, CFG.height, CFG.width, CFG.channels), np.float32)
    for i in range(n):
        imgs[i] += rng.uniform(0.1, 0.4)
        x, y = rng.integers(2, CFG.width - 10, 2)
        imgs[i, y:y + 8, x:x + 8] = rng.uniform(0.6, 1.0, 3)
    return imgs


def test_temporal_compression_rejected():
    with pytest.raises(ValueError):
        VideoCodecConfig(temporal_compression=2)


def test_encode_frame_shape_and_determinism():
    codec = VideoCodec(CFG, seed=0)
    img = toy_images(1)[0]
    a = codec.encode_frame(img)
    b = codec.encode_frame(img)
    assert a.tokens.shape == (CFG.tokens_per_frame, CFG.token_dim)
    np.testing.assert_array_equal(a.tokens, b.tokens)


def test_encode_dimension_mismatch_rejected():
    codec = VideoCodec(CFG, seed=0)
    with pytest.raises(ValueError, match="shape"):
        codec.encode_frame(np.zeros((16, 16, 3), np.float32))


def test_range_violation_rejected():
    codec = VideoCodec(CFG, seed=0)
    with pytest.raises(ValueError, match="0, 1"):
        codec.encode_frame(np.full((32, 32, 3), 1.5, np.float32))


def test_no_temporal_downsampling():
    codec = VideoCodec(CFG, seed=0)
    clip = toy_images(8)
    frames = codec.encode_clip(clip)
    assert len(frames) == 8
    for i, f in enumerate(frames):
        assert f.tokens.shape == (CFG.tokens_per_frame, CFG.token_dim)
        assert f.frame_index == i


def test_single_frame_equals_self_attention_only():
    codec = VideoCodec(CFG, seed=0)
    img = toy_images(1)[0]
    solo = codec.encode_clip(img[None])
    assert len(solo) == 1
    pre = codec.encode_frame(img)
    ctx = codec.temporal_contextualize([pre])
    np.testing.assert_array_equal(solo[0].tokens, ctx[0].tokens)


def test_temporal_causality_bitwise():
    codec = VideoCodec(CFG, seed=0)
    clip = toy_images(8, seed=1)
    base = codec.encode_clip(clip)
    clip2 = clip.copy()
    clip2[5:] = toy_images(3, seed=2)
    pert = codec.encode_clip(clip2)
    for i in range(5):
        np.testing.assert_array_equal(base[i].tokens, pert[i].tokens)
    assert not np.array_equal(base[5].tokens, pert[5].tokens)


def test_sliding_window_bounds_context():
    small = VideoCodecConfig(temporal_window=4)
    codec = VideoCodec(small, seed=0)
    clip = toy_images(7, seed=3)
    out = codec.encode_clip(clip)
    assert len(out) == 7


def test_decode_sentinel_is_gray():
    codec = VideoCodec(CFG, seed=0)
    img = codec.decode_frame(VideoTokenFrame.sentinel(CFG))
    np.testing.assert_array_equal(img, np.full((32, 32, 3), GRAY_LEVEL, np.float32))


def test_decode_deterministic():
    codec = VideoCodec(CFG, seed=0)
    frame = codec.encode_clip(toy_images(1))[0]
    np.testing.assert_array_equal(codec.decode_frame(frame), codec.decode_frame(frame))


def test_token_frame_serialization_roundtrip():
    rng = np.random.default_rng(0)
    f = VideoTokenFrame(rng.standard_normal((16, 32)).astype(np.float32), frame_index=7)
    blob = f.serialize()
    back = VideoTokenFrame.deserialize(blob)
    assert back.frame_index == 7
    np.testing.assert_array_equal(back.tokens, f.tokens)


def test_nonfinite_tokens_rejected():
    bad = np.zeros((16, 32), np.float32)
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        VideoTokenFrame(bad)


# -- motion variant --------------------------------------------------------


def make_poses(t: int, joints: int = CFG.num_joints, seed: int = 0):
    rng = np.random.default_rng(seed)
    return [MotionPose(rng.standard_normal(3), rng.standard_normal((joints, 6)))
            for _ in range(t)]


def test_pose_dimension():
    p = MotionPose(np.zeros(3), np.zeros((2, 6)))
    assert p.flatten().shape == (15,)  # 3 + 6*2


def test_sixd_gram_schmidt_gives_rotation():
    rng = np.random.default_rng(1)
    for _ in range(10):
        r = sixd_to_rotation(rng.standard_normal(6))
        np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-9)
        assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-9)


def test_motion_encoder_one_frame_per_pose():
    enc = MotionEncoder(CFG, seed=0)
    poses = make_poses(6)
    frames = enc.encode(poses)
    assert len(frames) == 6
    assert frames[0].tokens.shape == (1, CFG.token_dim)


def test_motion_encoder_causality():
    enc = MotionEncoder(CFG, seed=0)
    poses = make_poses(6, seed=2)
    base = enc.encode(poses)
    poses2 = poses[:-1] + make_poses(1, seed=3)
    pert = enc.encode(poses2)
    for i in range(5):
        np.testing.assert_array_equal(base[i].tokens, pert[i].tokens)


def test_motion_encoder_inconsistent_joints_rejected():
    enc = MotionEncoder(CFG, seed=0)
    poses = make_poses(3) + make_poses(1, joints=CFG.num_joints + 1)
    with pytest.raises(ValueError, match="joint"):
        enc.encode(poses)
