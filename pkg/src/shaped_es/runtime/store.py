"""Filesystem trajectory store, one self-describing binary file per episode.

Layout: ``<root>/gen_000012/slot_0003_ep_01.trj``. A record is written to a
hidden temporary name in the same directory and renamed into place, so readers
never observe a partial file.

Record format: ``b"TRJ1"``, ``u32`` header length, a UTF-8 JSON header, then
``length`` rows of float64 (little-endian) laid out as
``[state | waypoint | reached | action | reward]``.
"""

from __future__ import annotations

import json
import logging
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from ..envs.base import Trajectory

log = logging.getLogger(__name__)

MAGIC = b"TRJ1"
SUFFIX = ".trj"
_LEN = struct.Struct("<I")


class CorruptRecord(ValueError):
    pass


def encode_record(traj: Trajectory, meta: dict) -> bytes:
    sd, wd, ad = traj.states.shape[1], traj.waypoints.shape[1], traj.actions.shape[1]
    header = dict(meta)
    header.update(
        state_dim=sd, waypoint_dim=wd, action_dim=ad, length=len(traj),
        terminated_by=traj.terminated_by, cumulative_reward=traj.cumulative_reward,
    )
    raw = json.dumps(header, sort_keys=True).encode()
    rows = np.hstack([traj.states, traj.waypoints, traj.reached, traj.actions, traj.rewards[:, None]])
    return MAGIC + _LEN.pack(len(raw)) + raw + np.ascontiguousarray(rows, dtype="<f8").tobytes()


def decode_record(data: bytes) -> Trajectory:
    if len(data) < 8 or data[:4] != MAGIC:
        raise CorruptRecord("bad magic")
    (n,) = _LEN.unpack_from(data, 4)
    try:
        header = json.loads(data[8 : 8 + n])
    except ValueError as exc:
        raise CorruptRecord(f"unreadable header: {exc}") from exc
    sd, wd, ad, length = header["state_dim"], header["waypoint_dim"], header["action_dim"], header["length"]
    stride = sd + 2 * wd + ad + 1
    body = data[8 + n :]
    if len(body) != length * stride * 8:
        raise CorruptRecord(f"expected {length} rows of {stride} values, got {len(body)} bytes")
    rows = np.frombuffer(body, dtype="<f8").astype(np.float64).reshape(length, stride)
    cols = np.cumsum([0, sd, wd, wd, ad, 1])
    parts = [rows[:, cols[i] : cols[i + 1]] for i in range(5)]
    meta = {k: v for k, v in header.items() if k not in ("state_dim", "waypoint_dim", "action_dim", "length", "terminated_by")}
    return Trajectory(states=parts[0], waypoints=parts[1], reached=parts[2], actions=parts[3],
                      rewards=parts[4][:, 0].copy(), terminated_by=header["terminated_by"], meta=meta)


class TrajectoryStore:
    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.corrupt_count = 0

    @staticmethod
    def record_name(generation: int, slot: int, episode: int) -> str:
        return f"gen_{generation:06d}/slot_{slot:04d}_ep_{episode:02d}{SUFFIX}"

    def write(self, traj: Trajectory, generation: int, slot: int, episode: int, **meta) -> str:
        ref = self.record_name(generation, slot, episode)
        path = self.root / ref
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = dict(traj.meta, **meta, generation=generation, slot=slot, episode=episode)
        data = encode_record(traj, meta)
        fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=path.parent)
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return ref

    def refs(self, generation: int | None = None, slot: int | None = None) -> list[str]:
        if generation is None:
            dirs = sorted(p for p in self.root.glob("gen_*") if p.is_dir())
        else:
            dirs = [self.root / f"gen_{generation:06d}"]
        out = []
        for d in dirs:
            if not d.is_dir():
                continue
            pattern = f"slot_{slot:04d}_ep_*{SUFFIX}" if slot is not None else f"slot_*{SUFFIX}"
            out.extend(f"{d.name}/{p.name}" for p in sorted(d.glob(pattern)))
        return out

    def load(self, ref: str) -> Trajectory:
        return decode_record((self.root / ref).read_bytes())

    def read(self, generation: int | None = None, slot: int | None = None) -> list[Trajectory]:
        """Completed records matching the filter, ordered by generation, slot and episode.

        Corrupt records are skipped and counted in ``corrupt_count``.
        """
        out = []
        for ref in self.refs(generation, slot):
            try:
                out.append(self.load(ref))
            except (CorruptRecord, KeyError, OSError) as exc:
                self.corrupt_count += 1
                log.warning("skipping corrupt record %s: %s", ref, exc)
        return out
