"""Binary wire format between master and workers.

Every frame is a little-endian ``u32`` payload length followed by the payload.
The payload starts with a 16-byte header::

    magic   4s   b"SHES"
    version u8
    kind    u8
    _pad    u16
    gen     u32   generation the message belongs to
    worker  u32   sending/receiving worker id

Real arrays travel as raw float64 little-endian bytes, so parameters survive a
round trip bit for bit. See ``docs/wire_protocol.md`` for the per-kind bodies.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"SHES"
VERSION = 1

HELLO = 1
CONFIGURE = 2
PARAMS_DOWN = 3
RESULT_UP = 4
SHUTDOWN = 5

MODE_TRAIN = 0
MODE_EVAL = 1

_HEADER = struct.Struct("<4sBBHII")
_LEN = struct.Struct("<I")
_PARAMS = struct.Struct("<IBBHQIII")
_RESULT = struct.Struct("<IBBHdIII")
_F64 = np.dtype("<f8")
_U64 = np.dtype("<u8")


class ProtocolError(ValueError):
    pass


@dataclass
class Hello:
    worker_id: int
    generation: int = 0


@dataclass
class Configure:
    settings: dict
    worker_id: int = 0
    generation: int = 0


@dataclass(eq=False)
class ParamsDown:
    generation: int
    slot: int
    theta: np.ndarray
    seeds: list
    phi: np.ndarray | None = None
    mode: int = MODE_TRAIN
    rng_seed: int = 0
    worker_id: int = 0


@dataclass(eq=False)
class ResultUp:
    generation: int
    slot: int
    reward: float
    theta_star: np.ndarray
    episode_rewards: np.ndarray = field(default_factory=lambda: np.zeros(0))
    trajectory_refs: list = field(default_factory=list)
    valid: bool = True
    mode: int = MODE_TRAIN
    worker_id: int = 0


@dataclass
class Shutdown:
    worker_id: int = 0
    generation: int = 0


def _f64(a) -> bytes:
    return np.ascontiguousarray(a, dtype=_F64).tobytes()


def encode(msg) -> bytes:
    """Serialize a message to a payload (without the length prefix)."""
    if isinstance(msg, Hello):
        kind, body = HELLO, b""
    elif isinstance(msg, Configure):
        raw = json.dumps(msg.settings, sort_keys=True).encode()
        kind, body = CONFIGURE, _LEN.pack(len(raw)) + raw
    elif isinstance(msg, ParamsDown):
        theta = np.asarray(msg.theta, dtype=_F64)
        phi = np.zeros(0) if msg.phi is None else np.asarray(msg.phi, dtype=_F64)
        seeds = np.asarray(msg.seeds, dtype=_U64)
        flags = 1 if msg.phi is not None else 0
        head = _PARAMS.pack(msg.slot, msg.mode, flags, 0, msg.rng_seed, theta.size, phi.size, seeds.size)
        kind, body = PARAMS_DOWN, head + _f64(theta) + _f64(phi) + seeds.tobytes()
    elif isinstance(msg, ResultUp):
        theta = np.asarray(msg.theta_star, dtype=_F64)
        rewards = np.asarray(msg.episode_rewards, dtype=_F64)
        refs = json.dumps(list(msg.trajectory_refs)).encode()
        head = _RESULT.pack(msg.slot, msg.mode, int(bool(msg.valid)), 0, msg.reward, theta.size, rewards.size, len(refs))
        kind, body = RESULT_UP, head + _f64(theta) + _f64(rewards) + refs
    elif isinstance(msg, Shutdown):
        kind, body = SHUTDOWN, b""
    else:
        raise TypeError(f"cannot encode {type(msg).__name__}")
    return _HEADER.pack(MAGIC, VERSION, kind, 0, msg.generation, msg.worker_id) + body


def _take(buf: memoryview, pos: int, count: int, dtype) -> tuple[np.ndarray, int]:
    nbytes = count * np.dtype(dtype).itemsize
    if pos + nbytes > len(buf):
        raise ProtocolError("payload truncated")
    return np.frombuffer(buf[pos : pos + nbytes], dtype=dtype).astype(np.float64 if dtype is _F64 else np.uint64), pos + nbytes


def decode(payload: bytes):
    buf = memoryview(payload)
    if len(buf) < _HEADER.size:
        raise ProtocolError("payload shorter than header")
    magic, version, kind, _, gen, worker = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    try:
        msg, end = _decode_body(buf, kind, gen, worker)
    except struct.error as exc:
        raise ProtocolError(str(exc)) from exc
    if end != len(buf):
        raise ProtocolError(f"{len(buf) - end} trailing bytes after message")
    return msg


def _decode_body(buf, kind, gen, worker):
    pos = _HEADER.size
    if kind == HELLO:
        return Hello(worker_id=worker, generation=gen), pos
    if kind == SHUTDOWN:
        return Shutdown(worker_id=worker, generation=gen), pos
    if kind == CONFIGURE:
        (n,) = _LEN.unpack_from(buf, pos)
        pos += _LEN.size
        if pos + n > len(buf):
            raise ProtocolError("payload truncated")
        try:
            settings = json.loads(bytes(buf[pos : pos + n]))
        except ValueError as exc:
            raise ProtocolError(f"bad settings: {exc}") from exc
        return Configure(settings=settings, worker_id=worker, generation=gen), pos + n
    if kind == PARAMS_DOWN:
        slot, mode, flags, _, rng_seed, n_theta, n_phi, n_seeds = _PARAMS.unpack_from(buf, pos)
        pos += _PARAMS.size
        theta, pos = _take(buf, pos, n_theta, _F64)
        phi, pos = _take(buf, pos, n_phi, _F64)
        seeds, pos = _take(buf, pos, n_seeds, _U64)
        msg = ParamsDown(generation=gen, slot=slot, theta=theta, seeds=[int(s) for s in seeds],
                         phi=phi if flags & 1 else None, mode=mode, rng_seed=rng_seed, worker_id=worker)
        return msg, pos
    if kind == RESULT_UP:
        slot, mode, valid, _, reward, n_theta, n_rew, n_refs = _RESULT.unpack_from(buf, pos)
        pos += _RESULT.size
        theta, pos = _take(buf, pos, n_theta, _F64)
        rewards, pos = _take(buf, pos, n_rew, _F64)
        if pos + n_refs > len(buf):
            raise ProtocolError("payload truncated")
        try:
            refs = json.loads(bytes(buf[pos : pos + n_refs])) if n_refs else []
        except ValueError as exc:
            raise ProtocolError(f"bad trajectory refs: {exc}") from exc
        msg = ResultUp(generation=gen, slot=slot, reward=reward, theta_star=theta, episode_rewards=rewards,
                       trajectory_refs=refs, valid=bool(valid), mode=mode, worker_id=worker)
        return msg, pos + n_refs
    raise ProtocolError(f"unknown message kind {kind}")


def frame(payload: bytes) -> bytes:
    return _LEN.pack(len(payload)) + payload


def read_frame(sock) -> bytes | None:
    """Read one length-prefixed frame from a socket; None on a clean EOF."""
    head = _recv_exact(sock, _LEN.size)
    if head is None:
        return None
    (n,) = _LEN.unpack(head)
    body = _recv_exact(sock, n)
    if body is None:
        raise ConnectionError("connection closed mid-frame")
    return body


def _recv_exact(sock, n: int) -> bytes | None:
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(min(remaining, 1 << 20))
        if not chunk:
            if remaining == n and not chunks:
                return None
            raise ConnectionError("connection closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)
