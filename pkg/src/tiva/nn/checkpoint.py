"""Checkpoint container.

Layout (all integers little-endian):
    magic "BOHC" | format version u16 | metadata length u32 | metadata JSON
    then per parameter: name length u16 | name UTF-8 | rank u8 | dims u32 each
    | float32 data.
Metadata always carries a config hash and the training stage; loading checks
structure and magic here, while stage/lineage rules live with the trainers.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct

import numpy as np

MAGIC = b"BOHC"
VERSION = 1


class CheckpointError(ValueError):
    pass


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(params: dict[str, np.ndarray], metadata: dict) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", VERSION))
    meta = json.dumps(metadata, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(meta)))
    buf.write(meta)
    for name in sorted(params):
        arr = np.asarray(params[name], dtype="<f4")  # tobytes() yields C order
        nb = name.encode()
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", arr.ndim))
        for d in arr.shape:
            buf.write(struct.pack("<I", d))
        buf.write(arr.tobytes())
    return buf.getvalue()


def load_checkpoint(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    buf = io.BytesIO(blob)

    def read(n: int, what: str) -> bytes:
        b = buf.read(n)
        if len(b) != n:
            raise CheckpointError(f"checkpoint truncated while reading {what}")
        return b

    if read(4, "magic") != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic")
    (version,) = struct.unpack("<H", read(2, "version"))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    (mlen,) = struct.unpack("<I", read(4, "metadata length"))
    try:
        metadata = json.loads(read(mlen, "metadata").decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt metadata: {e}") from e
    params: dict[str, np.ndarray] = {}
    while True:
        head = buf.read(2)
        if not head:
            break
        if len(head) != 2:
            raise CheckpointError("checkpoint truncated while reading name length")
        (nlen,) = struct.unpack("<H", head)
        name = read(nlen, "name").decode()
        (rank,) = struct.unpack("<B", read(1, "rank"))
        dims = struct.unpack(f"<{rank}I", read(4 * rank, "dims")) if rank else ()
        count = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(read(4 * count, f"data for {name}"), dtype="<f4")
        params[name] = data.reshape(dims).copy()
    return params, metadata


def save_checkpoint_file(path, params: dict[str, np.ndarray], metadata: dict) -> None:
    with open(path, "wb") as f:
        f.write(save_checkpoint(params, metadata))


def load_checkpoint_file(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        return load_checkpoint(f.read())


def check_config_hash(metadata: dict, expected: str) -> None:
    got = metadata.get("config_hash")
    if got != expected:
        raise CheckpointError(
            f"config hash mismatch: checkpoint has {got!r}, this run expects {expected!r}")
