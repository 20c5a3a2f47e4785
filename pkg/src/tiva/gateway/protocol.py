"""Binary wire protocol.

Stream preamble: magic "BOHP" + version u8.  After that, length-prefixed
messages: tag u8, payload length u32 LE, payload bytes.  Framing survives
unknown tags (the header fully determines message extent), so a session can
report an error for a bad message and keep going; structural violations
(bad magic, oversize length, truncation) kill the stream with exactly one
protocol error.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"BOHP"
PROTOCOL_VERSION = 1
MAX_PAYLOAD = 16 * 1024 * 1024

TAG_CLIENT_HELLO = 0x01
TAG_SERVER_HELLO = 0x02
TAG_HUMAN_AUDIO = 0x10
TAG_HUMAN_VIDEO = 0x11
TAG_CONTROL_TEXT = 0x20
TAG_CONTROL_TRAJECTORY = 0x21
TAG_CONTROL_SPEAKER = 0x22
TAG_AGENT_FRAME = 0x30
TAG_AGENT_TOKENS_DEBUG = 0x31
TAG_TELEMETRY = 0x40
TAG_ERROR = 0x7E
TAG_END = 0x7F

KNOWN_TAGS = {
    TAG_CLIENT_HELLO, TAG_SERVER_HELLO, TAG_HUMAN_AUDIO, TAG_HUMAN_VIDEO,
    TAG_CONTROL_TEXT, TAG_CONTROL_TRAJECTORY, TAG_CONTROL_SPEAKER,
    TAG_AGENT_FRAME, TAG_AGENT_TOKENS_DEBUG, TAG_TELEMETRY, TAG_ERROR, TAG_END,
}


@dataclass
class WireMessage:
    tag: int
    payload: bytes

    def encode(self) -> bytes:
        return struct.pack("<BI", self.tag, len(self.payload)) + self.payload


class ProtocolError(ValueError):
    pass


def encode_preamble() -> bytes:
    return MAGIC + struct.pack("<B", PROTOCOL_VERSION)


class WireReader:
    """Incremental framing parser.

    feed(data) -> list of WireMessage.  A structural violation raises
    ProtocolError once; afterwards the reader refuses further input.
    """

    def __init__(self, expect_preamble: bool = True):
        self._buf = bytearray()
        self._need_preamble = expect_preamble
        self.dead = False

    def feed(self, data: bytes) -> list[WireMessage]:
        if self.dead:
            raise ProtocolError("stream already failed")
        self._buf.extend(data)
        out: list[WireMessage] = []
        if self._need_preamble:
            if len(self._buf) < 5:
                return out
            if bytes(self._buf[:4]) != MAGIC:
                self.dead = True
                raise ProtocolError("bad stream magic")
            version = self._buf[4]
            if version != PROTOCOL_VERSION:
                self.dead = True
                raise ProtocolError(f"unsupported protocol version {version}")
            del self._buf[:5]
            self._need_preamble = False
        while len(self._buf) >= 5:
            tag, length = struct.unpack_from("<BI", self._buf, 0)
            if length > MAX_PAYLOAD:
                self.dead = True
                raise ProtocolError(f"payload length {length} exceeds cap")
            if len(self._buf) < 5 + length:
                break
            payload = bytes(self._buf[5:5 + length])
            del self._buf[:5 + length]
            out.append(WireMessage(tag, payload))
        return out


# -- payload codecs ------------------------------------------------------------


def encode_json(tag: int, obj: dict) -> WireMessage:
    return WireMessage(tag, json.dumps(obj, sort_keys=True).encode())


def decode_json(msg: WireMessage) -> dict:
    try:
        obj = json.loads(msg.payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ProtocolError(f"bad JSON payload for tag 0x{msg.tag:02X}: {e}") from e
    if not isinstance(obj, dict):
        raise ProtocolError(f"JSON payload for tag 0x{msg.tag:02X} must be an object")
    return obj


def encode_agent_frame(index: int, pcm: np.ndarray, image: np.ndarray) -> WireMessage:
    from ..audio.codec import float_to_pcm16
    rgb = np.round(np.clip(image, 0, 1) * 255).astype(np.uint8).tobytes()
    payload = struct.pack("<I", index) + float_to_pcm16(pcm) + rgb
    return WireMessage(TAG_AGENT_FRAME, payload)


def decode_agent_frame(msg: WireMessage, samples_per_frame: int,
                       height: int, width: int) -> tuple[int, np.ndarray, np.ndarray]:
    from ..audio.codec import pcm16_to_float
    need = 4 + samples_per_frame * 2 + height * width * 3
    if len(msg.payload) != need:
        raise ProtocolError(f"agent frame payload {len(msg.payload)} != expected {need}")
    (index,) = struct.unpack_from("<I", msg.payload, 0)
    pcm = pcm16_to_float(msg.payload[4:4 + samples_per_frame * 2])
    rgb = np.frombuffer(msg.payload[4 + samples_per_frame * 2:], np.uint8)
    image = rgb.reshape(height, width, 3).astype(np.float32) / 255.0
    return index, pcm, image


def decode_speaker(msg: WireMessage) -> int:
    if len(msg.payload) != 4:
        raise ProtocolError("speaker payload must be u32")
    return struct.unpack("<I", msg.payload)[0]


def decode_text(msg: WireMessage) -> str:
    try:
        return msg.payload.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ProtocolError(f"control text is not UTF-8: {e}") from e


def validate_message(msg: WireMessage) -> str | None:
    """Returns an error string for malformed known-tag payloads, None if OK.

    Unknown tags are reported as errors too; framing has already consumed
    the message, so the caller may keep the session alive either way.
    """
    from ..control import deserialize_trajectory
    try:
        if msg.tag not in KNOWN_TAGS:
            return f"unknown message tag 0x{msg.tag:02X}"
        if msg.tag in (TAG_CLIENT_HELLO, TAG_SERVER_HELLO, TAG_TELEMETRY):
            decode_json(msg)
        elif msg.tag == TAG_CONTROL_TRAJECTORY:
            deserialize_trajectory(msg.payload)
        elif msg.tag == TAG_CONTROL_SPEAKER:
            decode_speaker(msg)
        elif msg.tag in (TAG_CONTROL_TEXT, TAG_ERROR):
            decode_text(msg)
        elif msg.tag == TAG_HUMAN_AUDIO:
            if len(msg.payload) % 2:
                return "PCM payload must hold whole s16le samples"
        return None
    except (ProtocolError, ValueError) as e:
        return str(e)
