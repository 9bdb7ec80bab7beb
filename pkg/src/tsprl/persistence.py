"""Versioned binary checkpoints of a training run.

Layout (all integers little-endian; see ``docs/checkpoint_format.md``)::

    magic "TSPRLCKP" | u32 version | u64 payload length | payload | sha256(header + payload)

Floats are stored as raw binary64 so every value round-trips bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from tsprl.rl import Experience, QNetwork

MAGIC = b"TSPRLCKP"
VERSION = 1
_HEADER = struct.Struct("<8sIQ")
_TRAILER = 32


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointDigestError(CheckpointError):
    """The checkpoint was written under a different configuration."""


class CheckpointCorruptError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    kind: str  # "sc" or "tsp"
    main: QNetwork
    target: QNetwork
    buffer: list[Experience]
    buffer_capacity: int
    epsilon: float
    episode: int  # completed episodes
    rng_state: dict
    config_digest: bytes
    optimizer_state: list[np.ndarray] = field(default_factory=list)
    curve: list[dict] = field(default_factory=list)


# ------------------------------------------------------------------ writing


class _Writer:
    def __init__(self):
        self.parts: list[bytes] = []

    def u8(self, x):
        self.parts.append(struct.pack("<B", x))

    def u32(self, x):
        self.parts.append(struct.pack("<I", x))

    def u64(self, x):
        self.parts.append(struct.pack("<Q", x))

    def i64(self, x):
        self.parts.append(struct.pack("<q", x))

    def f64(self, x):
        self.parts.append(struct.pack("<d", x))

    def f64s(self, arr):
        self.parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    def blob(self, b: bytes):
        self.u32(len(b))
        self.parts.append(b)

    def net(self, net: QNetwork):
        self.u32(len(net.weights))
        for W, b in zip(net.weights, net.biases):
            self.u32(W.shape[0])
            self.u32(W.shape[1])
            self.f64s(W)
            self.f64s(b)


def save_checkpoint(ck: Checkpoint) -> bytes:
    w = _Writer()
    w.blob(ck.kind.encode("ascii"))
    w.net(ck.main)
    w.net(ck.target)
    dim = len(ck.buffer[0].s) if ck.buffer else 0
    w.u32(ck.buffer_capacity)
    w.u32(len(ck.buffer))
    w.u32(dim)
    for e in ck.buffer:
        w.f64s(e.s)
        w.i64(int(e.a))
        w.f64s(e.s_next)
        w.f64(float(e.r))
        w.u8(1 if e.done else 0)
    w.f64(ck.epsilon)
    w.u64(ck.episode)
    w.blob(json.dumps(ck.rng_state, sort_keys=True).encode())
    if len(ck.config_digest) != 32:
        raise ValueError("config digest must be 32 bytes")
    w.parts.append(ck.config_digest)
    w.u32(len(ck.optimizer_state))
    for arr in ck.optimizer_state:
        arr = np.asarray(arr, dtype=np.float64)
        w.u32(arr.ndim)
        for d in arr.shape:
            w.u32(d)
        w.f64s(arr)
    w.blob(json.dumps(ck.curve, sort_keys=True).encode())
    payload = b"".join(w.parts)
    head = _HEADER.pack(MAGIC, VERSION, len(payload))
    return head + payload + hashlib.sha256(head + payload).digest()


# ------------------------------------------------------------------ reading


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointCorruptError("section runs past the end of the payload")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))[0]

    def f64s(self, n: int, shape=None) -> np.ndarray:
        arr = np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64)
        return arr.reshape(shape) if shape is not None else arr

    def blob(self) -> bytes:
        return self.take(self.unpack("<I"))

    def net(self) -> QNetwork:
        weights, biases = [], []
        for _ in range(self.unpack("<I")):
            rows, cols = self.unpack("<I"), self.unpack("<I")
            weights.append(self.f64s(rows * cols, (rows, cols)))
            biases.append(self.f64s(cols))
        return QNetwork(weights, biases)


def load_checkpoint(data: bytes, expected_digest: bytes | None = None) -> Checkpoint:
    """Parse checkpoint bytes; with ``expected_digest`` refuse a foreign config."""
    if len(data) < _HEADER.size:
        raise CheckpointTruncatedError("file is shorter than the header")
    magic, version, n = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointCorruptError("not a checkpoint file (bad magic)")
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, this build reads {VERSION}")
    end = _HEADER.size + n
    if len(data) < end + _TRAILER:
        raise CheckpointTruncatedError(f"expected {end + _TRAILER} bytes, found {len(data)}")
    if len(data) > end + _TRAILER:
        raise CheckpointCorruptError("trailing bytes after checksum")
    if hashlib.sha256(data[:end]).digest() != data[end:]:
        raise CheckpointCorruptError("checksum mismatch")
    r = _Reader(data[_HEADER.size:end])
    kind = r.blob().decode("ascii")
    main = r.net()
    target = r.net()
    capacity, count, dim = r.unpack("<I"), r.unpack("<I"), r.unpack("<I")
    buffer = []
    for _ in range(count):
        s = r.f64s(dim)
        a = r.unpack("<q")
        s2 = r.f64s(dim)
        rew = r.unpack("<d")
        done = bool(r.unpack("<B"))
        buffer.append(Experience(s, a, s2, rew, done))
    epsilon = r.unpack("<d")
    episode = r.unpack("<Q")
    rng_state = json.loads(r.blob())
    digest = r.take(32)
    opt = []
    for _ in range(r.unpack("<I")):
        shape = tuple(r.unpack("<I") for _ in range(r.unpack("<I")))
        opt.append(r.f64s(int(np.prod(shape)), shape))
    curve = json.loads(r.blob())
    if r.pos != len(r.data):
        raise CheckpointCorruptError("unread bytes at the end of the payload")
    if expected_digest is not None and digest != expected_digest:
        raise CheckpointDigestError("checkpoint was written with a different configuration")
    return Checkpoint(kind, main, target, buffer, capacity, epsilon, episode, rng_state, digest, opt,
                      curve)


def write_checkpoint(path: str | Path, ck: Checkpoint) -> None:
    """Write atomically: a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = save_checkpoint(ck)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_checkpoint(path: str | Path, expected_digest: bytes | None = None) -> Checkpoint:
    return load_checkpoint(Path(path).read_bytes(), expected_digest)
