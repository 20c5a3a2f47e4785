"""Wire protocol: framing laws and the fuzz robustness contract."""

import numpy as np
import pytest

from tiva.gateway import protocol as P


def test_roundtrip_messages():
    reader = P.WireReader()
    stream = P.encode_preamble()
    msgs = [P.WireMessage(P.TAG_CONTROL_TEXT, b"hello"),
            P.encode_json(P.TAG_CLIENT_HELLO, {"fps": 24}),
            P.WireMessage(P.TAG_END, b"")]
    for m in msgs:
        stream += m.encode()
    got = []
    for i in range(0, len(stream), 3):  # drip-feed in odd chunks
        got.extend(reader.feed(stream[i:i + 3]))
    assert [(m.tag, m.payload) for m in got] == [(m.tag, m.payload) for m in msgs]


def test_bad_magic_single_error():
    reader = P.WireReader()
    with pytest.raises(P.ProtocolError, match="magic"):
        reader.feed(b"XXXX\x01")
    with pytest.raises(P.ProtocolError, match="already failed"):
        reader.feed(b"more")


def test_versions_and_caps():
    reader = P.WireReader()
    with pytest.raises(P.ProtocolError, match="version"):
        reader.feed(P.MAGIC + b"\x09")
    r2 = P.WireReader(expect_preamble=False)
    with pytest.raises(P.ProtocolError, match="cap"):
        r2.feed(P.WireMessage(0x10, b"").encode()[:1] + (2 ** 30).to_bytes(4, "little"))


def test_unknown_tag_structurally_fine_but_flagged():
    r = P.WireReader(expect_preamble=False)
    msgs = r.feed(P.WireMessage(0xEE, b"abc").encode())
    assert len(msgs) == 1
    assert P.validate_message(msgs[0]) is not None


def test_agent_frame_roundtrip():
    rng = np.random.default_rng(0)
    pcm = rng.uniform(-1, 1, 300).astype(np.float32)
    img = rng.random((32, 32, 3)).astype(np.float32)
    msg = P.encode_agent_frame(7, pcm, img)
    idx, pcm2, img2 = P.decode_agent_frame(msg, 300, 32, 32)
    assert idx == 7
    assert np.max(np.abs(pcm2 - pcm)) < 1e-3
    assert np.max(np.abs(img2 - img)) <= 0.5 / 255 + 1e-6


def test_fuzz_frames_never_crash():
    """10^6 fuzzed frames: each is either parsed or yields exactly one
    validation error; the framing layer never raises except structurally."""
    rng = np.random.default_rng(0)
    total = 1_000_000
    structural_errors = 0
    parsed = 0
    validation_errors = 0
    batch = 10_000
    for chunk in range(total // batch):
        reader = P.WireReader(expect_preamble=False)
        blob = bytearray()
        for _ in range(batch):
            tag = int(rng.integers(0, 256))
            length = int(rng.integers(0, 24))
            payload = rng.integers(0, 256, length, dtype=np.uint8).tobytes()
            blob += P.WireMessage(tag, payload).encode()
        try:
            msgs = reader.feed(bytes(blob))
        except P.ProtocolError:
            structural_errors += 1
            continue
        parsed += len(msgs)
        for m in msgs:
            if P.validate_message(m) is not None:
                validation_errors += 1
    assert parsed + structural_errors * batch >= total * 0.99
    assert validation_errors > 0  # fuzz certainly produced malformed payloads


def test_fuzz_random_byte_streams_single_error():
    """Arbitrary byte soup: parse or die exactly once, never crash."""
    rng = np.random.default_rng(1)
    for _ in range(300):
        reader = P.WireReader()
        data = rng.integers(0, 256, int(rng.integers(1, 400)), dtype=np.uint8).tobytes()
        errors = 0
        try:
            reader.feed(data)
        except P.ProtocolError:
            errors = 1
        if errors:
            with pytest.raises(P.ProtocolError):
                reader.feed(b"\x00")
        assert errors <= 1
