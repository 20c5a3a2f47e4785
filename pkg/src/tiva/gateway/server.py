"""Streaming session server.

One listener, one session pipeline per connection.  The transport is
auto-detected: raw TCP clients open with the protocol magic, browsers open
with an HTTP WebSocket upgrade and then carry the identical byte protocol
inside binary frames.  A reader thread feeds ingestion; the connection
thread paces ticks at the negotiated fps; writes are serialized.
"""

from __future__ import annotations

import base64
import hashlib
import json
import socket
import struct
import threading
import time

import numpy as np

from ..audio.codec import pcm16_to_float
from ..bundle import Engine
from ..config import SamplingParams, SessionConfig
from ..control import deserialize_trajectory
from ..runtime.session import DuplexSession
from . import protocol as P

WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


class Transport:
    """Byte-stream transport over a socket, raw or WebSocket-framed."""

    def __init__(self, sock: socket.socket, is_ws: bool):
        self.sock = sock
        self.is_ws = is_ws
        self._wlock = threading.Lock()
        self._rbuf = bytearray()

    def send(self, data: bytes) -> None:
        with self._wlock:
            if self.is_ws:
                header = bytearray([0x82])  # FIN + binary
                n = len(data)
                if n < 126:
                    header.append(n)
                elif n < 1 << 16:
                    header.append(126)
                    header += struct.pack(">H", n)
                else:
                    header.append(127)
                    header += struct.pack(">Q", n)
                self.sock.sendall(bytes(header) + data)
            else:
                self.sock.sendall(data)

    def recv(self) -> bytes:
        """Blocking read of the next chunk of protocol bytes ('' on close)."""
        if not self.is_ws:
            return self.sock.recv(65536)
        while True:
            frame = self._read_ws_frame()
            if frame is None:
                return b""
            opcode, payload = frame
            if opcode in (0x1, 0x2, 0x0):
                return payload
            if opcode == 0x9:  # ping -> pong
                with self._wlock:
                    self.sock.sendall(bytes([0x8A, len(payload)]) + payload)
                continue
            if opcode == 0x8:  # close
                return b""

    def _read_exact(self, n: int) -> bytes | None:
        while len(self._rbuf) < n:
            chunk = self.sock.recv(65536)
            if not chunk:
                return None
            self._rbuf.extend(chunk)
        out = bytes(self._rbuf[:n])
        del self._rbuf[:n]
        return out

    def _read_ws_frame(self):
        head = self._read_exact(2)
        if head is None:
            return None
        opcode = head[0] & 0x0F
        masked = bool(head[1] & 0x80)
        length = head[1] & 0x7F
        if length == 126:
            ext = self._read_exact(2)
            if ext is None:
                return None
            length = struct.unpack(">H", ext)[0]
        elif length == 127:
            ext = self._read_exact(8)
            if ext is None:
                return None
            length = struct.unpack(">Q", ext)[0]
        mask = b"\x00" * 4
        if masked:
            mask = self._read_exact(4)
            if mask is None:
                return None
        payload = self._read_exact(length)
        if payload is None:
            return None
        if masked:
            payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
        return opcode, payload

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def _maybe_websocket(sock: socket.socket) -> Transport | None:
    """Sniff the first bytes; perform the upgrade if it looks like HTTP."""
    first = sock.recv(4, socket.MSG_PEEK)
    if first[:3] != b"GET":
        return Transport(sock, is_ws=False)
    data = bytearray()
    while b"\r\n\r\n" not in data:
        chunk = sock.recv(4096)
        if not chunk:
            return None
        data.extend(chunk)
    headers = {}
    for line in bytes(data).split(b"\r\n")[1:]:
        if b":" in line:
            k, v = line.split(b":", 1)
            headers[k.strip().lower().decode()] = v.strip().decode()
    key = headers.get("sec-websocket-key")
    if not key:
        sock.sendall(b"HTTP/1.1 400 Bad Request\r\n\r\n")
        return None
    accept = base64.b64encode(hashlib.sha1((key + WS_GUID).encode()).digest()).decode()
    sock.sendall((
        "HTTP/1.1 101 Switching Protocols\r\n"
        "Upgrade: websocket\r\nConnection: Upgrade\r\n"
        f"Sec-WebSocket-Accept: {accept}\r\n\r\n").encode())
    return Transport(sock, is_ws=True)


class SessionServer:
    def __init__(self, engine: Engine, port: int = 0, host: str = "127.0.0.1",
                 session_config: SessionConfig | None = None,
                 realtime: bool = True, core_backend: str | None = None):
        self.engine = engine
        self.base_config = session_config or SessionConfig()
        self.realtime = realtime
        self.core_backend = core_backend
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen(4)
        self.port = self._listener.getsockname()[1]
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._accept_loop, daemon=True)

    def start(self) -> "SessionServer":
        self._thread.start()
        return self

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                self._listener.settimeout(0.25)
                sock, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            threading.Thread(target=self._serve_connection, args=(sock,),
                             daemon=True).start()

    # -- one connection ----------------------------------------------------------

    def _serve_connection(self, sock: socket.socket) -> None:
        transport = None
        session = None
        try:
            transport = _maybe_websocket(sock)
            if transport is None:
                return
            reader = P.WireReader(expect_preamble=True)
            hello = self._await_hello(transport, reader)
            if hello is None:
                return
            scfg = self._negotiate(hello)
            session = DuplexSession(self.engine.model, self.engine.audio_codec,
                                    self.engine.video_codec, self.engine.prompt_encoder,
                                    scfg, core_backend=self.core_backend)
            acfg = self.engine.cfg
            transport.send(P.encode_preamble())
            transport.send(P.encode_json(P.TAG_SERVER_HELLO, {
                "fps": scfg.fps, "budget_ms": scfg.budget_ms,
                "sample_rate": acfg.audio.sample_rate,
                "samples_per_frame": acfg.audio.hop * acfg.audio.frames_per_video_frame,
                "frame_height": acfg.video.height, "frame_width": acfg.video.width,
                "stage": self.engine.stage,
            }).encode())
            ended = threading.Event()
            t = threading.Thread(target=self._reader_loop,
                                 args=(transport, reader, session, ended), daemon=True)
            t.start()
            self._tick_loop(transport, session, scfg, ended)
        except (OSError, P.ProtocolError):
            pass
        finally:
            if session is not None:
                session.close()
            if transport is not None:
                transport.close()

    def _await_hello(self, transport: Transport, reader: P.WireReader):
        deadline = time.monotonic() + 10.0
        while time.monotonic() < deadline:
            data = transport.recv()
            if not data:
                return None
            try:
                msgs = reader.feed(data)
            except P.ProtocolError as e:
                transport.send(P.WireMessage(P.TAG_ERROR, str(e).encode()).encode())
                return None
            for m in msgs:
                if m.tag == P.TAG_CLIENT_HELLO:
                    try:
                        return P.decode_json(m)
                    except P.ProtocolError as e:
                        transport.send(P.WireMessage(P.TAG_ERROR, str(e).encode()).encode())
                        return None
                transport.send(P.WireMessage(
                    P.TAG_ERROR, b"expected ClientHello before streaming").encode())
                return None
        return None

    def _negotiate(self, hello: dict) -> SessionConfig:
        base = self.base_config
        sampling = SamplingParams(
            seed=int(hello.get("seed", base.sampling.seed)),
            diffusion_steps=int(hello.get("diffusion_steps", base.sampling.diffusion_steps)),
            context_window_frames=int(hello.get("context_window_frames",
                                                base.sampling.context_window_frames)),
            audio_temperature=float(hello.get("audio_temperature",
                                              base.sampling.audio_temperature)),
            audio_top_p=float(hello.get("audio_top_p", base.sampling.audio_top_p)))
        return SessionConfig(
            fps=int(hello.get("fps", base.fps)),
            miss_policy=hello.get("miss_policy", base.miss_policy),
            planner=hello.get("planner", base.planner),
            planner_delay_ms=float(hello.get("planner_delay_ms", base.planner_delay_ms)),
            horizon_frames=int(hello.get("horizon_frames", base.horizon_frames)),
            sampling=sampling)

    def _reader_loop(self, transport: Transport, reader: P.WireReader,
                     session: DuplexSession, ended: threading.Event) -> None:
        while not ended.is_set():
            try:
                data = transport.recv()
            except OSError:
                ended.set()
                return
            if not data:
                ended.set()
                return
            try:
                msgs = reader.feed(data)
            except P.ProtocolError as e:
                try:
                    transport.send(P.WireMessage(P.TAG_ERROR, str(e).encode()).encode())
                except OSError:
                    pass
                ended.set()
                return
            for m in msgs:
                err = P.validate_message(m)
                if err is not None:
                    transport.send(P.WireMessage(P.TAG_ERROR, err.encode()).encode())
                    continue  # malformed message reported; session survives
                if m.tag == P.TAG_HUMAN_AUDIO:
                    session.ingest_audio(pcm16_to_float(m.payload))
                elif m.tag == P.TAG_HUMAN_VIDEO:
                    cfg = self.engine.cfg.video
                    need = cfg.height * cfg.width * 3
                    if len(m.payload) != need:
                        transport.send(P.WireMessage(
                            P.TAG_ERROR, f"video frame must be {need} bytes".encode()).encode())
                        continue
                    img = np.frombuffer(m.payload, np.uint8).reshape(
                        cfg.height, cfg.width, 3).astype(np.float32) / 255.0
                    session.ingest_video(img)
                elif m.tag == P.TAG_CONTROL_TEXT:
                    session.set_prompt(P.decode_text(m))
                elif m.tag == P.TAG_CONTROL_TRAJECTORY:
                    session.set_trajectory(deserialize_trajectory(m.payload))
                elif m.tag == P.TAG_CONTROL_SPEAKER:
                    session.set_speaker(P.decode_speaker(m))
                elif m.tag == P.TAG_END:
                    ended.set()
                    return

    def _tick_loop(self, transport: Transport, session: DuplexSession,
                   scfg: SessionConfig, ended: threading.Event) -> None:
        period = 1.0 / scfg.fps
        next_deadline = time.monotonic()
        while not ended.is_set():
            out = session.tick()
            transport.send(P.encode_agent_frame(out.index, out.pcm, out.image).encode())
            transport.send(P.WireMessage(P.TAG_TELEMETRY,
                                         out.record.to_json().encode()).encode())
            if self.realtime:
                next_deadline += period
                delay = next_deadline - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
                else:
                    next_deadline = time.monotonic()
        summary = {"summary": session.telemetry.summary()}
        try:
            transport.send(P.encode_json(P.TAG_TELEMETRY, summary).encode())
            transport.send(P.WireMessage(P.TAG_END, b"").encode())
        except OSError:
            pass

    def close(self) -> None:
        self._stop.set()
        try:
            self._listener.close()
        except OSError:
            pass
