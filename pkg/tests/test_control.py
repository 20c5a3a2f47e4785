"""Control-channel encoders: determinism, sentinel rules, linearity laws."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tiva.config import ControlConfig
from tiva.control import (PromptEncoder, Trajectory, TrajectoryEncoder,
                          deserialize_trajectory, positions_to_trajectory,
                          serialize_trajectory)

CFG = ControlConfig()


def test_prompt_deterministic():
    enc = PromptEncoder(CFG)
    a = enc.encode("agent speaks happily")
    b = enc.encode("agent speaks happily")
    np.testing.assert_array_equal(a.vector, b.vector)
    assert a.valid


def test_empty_prompt_is_sentinel():
    enc = PromptEncoder(CFG)
    e = enc.encode("")
    assert not e.valid


def test_distinct_prompts_distinguishable():
    enc = PromptEncoder(CFG)
    a = enc.encode("agent speaks happily").vector
    b = enc.encode("agent stays idle").vector
    cos = float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
    assert cos < 0.99


def test_overlong_prompt_truncated_with_warning():
    enc = PromptEncoder(CFG)
    with pytest.warns(UserWarning, match="truncated"):
        e = enc.encode("x" * 1000)
    assert e.valid and len(e.text) == CFG.max_prompt_chars


def test_prompt_encoder_weight_hash_stable():
    assert PromptEncoder(CFG).weight_hash() == PromptEncoder(CFG).weight_hash()


def test_positions_to_trajectory_definition():
    pos = np.zeros((2, 1, 2), np.float32)
    pos[1, 0] = [1.0, 2.0]
    traj = positions_to_trajectory(pos)
    np.testing.assert_array_equal(traj.velocities[0, 0], [0.0, 0.0])
    np.testing.assert_array_equal(traj.velocities[1, 0], [1.0, 2.0])


def test_static_joints_zero_trajectory():
    pos = np.ones((5, 3, 2), np.float32) * 7.0
    traj = positions_to_trajectory(pos)
    np.testing.assert_array_equal(traj.velocities, np.zeros((5, 3, 2)))


def test_nan_positions_rejected():
    pos = np.ones((3, 1, 2), np.float32)
    pos[1, 0, 0] = np.nan
    with pytest.raises(ValueError, match="NaN"):
        positions_to_trajectory(pos)


def test_circular_motion_speed():
    # radius-1 circle stepped by 2*pi/24 per frame: chord length 2*sin(pi/24)
    steps = np.arange(25)
    ang = 2 * np.pi * steps / 24
    pos = np.stack([np.cos(ang), np.sin(ang)], axis=-1)[:, None, :]
    traj = positions_to_trajectory(pos)
    speeds = np.linalg.norm(traj.velocities[1:, 0], axis=-1)
    expected = 2 * np.sin(np.pi / 24)
    np.testing.assert_allclose(speeds, expected, rtol=1e-5)
    assert abs(expected - 0.2611) < 1e-4


@given(st.integers(2, 20), st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_first_difference_property(frames, seed):
    rng = np.random.default_rng(seed)
    pos = rng.standard_normal((frames, 3, 2)).astype(np.float32)
    traj = positions_to_trajectory(pos)
    assert traj.velocities.shape == pos.shape
    np.testing.assert_allclose(traj.velocities[1:], pos[1:] - pos[:-1], atol=1e-6)
    np.testing.assert_array_equal(traj.velocities[0], 0)


def test_trajectory_encoder_zero_input_gives_bias():
    enc = TrajectoryEncoder(np.random.default_rng(0), CFG)
    traj = Trajectory(np.zeros((4, CFG.num_joints, 2), np.float32))
    out = enc(traj).data
    for row in out:
        np.testing.assert_array_equal(row, enc.bias_vector)


def test_trajectory_encoder_affine():
    enc = TrajectoryEncoder(np.random.default_rng(1), CFG)
    rng = np.random.default_rng(2)
    a = rng.standard_normal((3, CFG.num_joints, 2)).astype(np.float32)
    b = rng.standard_normal((3, CFG.num_joints, 2)).astype(np.float32)
    f = lambda arr: enc(Trajectory(arr)).data
    zero = f(np.zeros_like(a))
    lhs = f(a + b) - zero
    rhs = (f(a) - zero) + (f(b) - zero)
    np.testing.assert_allclose(lhs, rhs, atol=1e-5)
    np.testing.assert_allclose(f(2 * a) - zero, 2 * (f(a) - zero), atol=1e-5)


def test_trajectory_encoder_joint_mismatch_rejected():
    enc = TrajectoryEncoder(np.random.default_rng(0), CFG)
    with pytest.raises(ValueError, match="trajectory shaped"):
        enc(Trajectory(np.zeros((4, CFG.num_joints + 1, 2), np.float32)))


def test_trajectory_wire_roundtrip():
    rng = np.random.default_rng(3)
    traj = Trajectory(rng.standard_normal((6, 3, 2)).astype(np.float32))
    blob = serialize_trajectory(traj)
    assert blob[:3] == bytes([6, 0, 3])  # u16 LE frame count, u8 joints
    back = deserialize_trajectory(blob)
    np.testing.assert_array_equal(back.velocities, traj.velocities)


def test_trajectory_wire_length_check():
    with pytest.raises(ValueError):
        deserialize_trajectory(b"\x01\x00\x03" + b"\x00" * 5)
