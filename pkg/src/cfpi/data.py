"""Transition datasets and their little-endian binary file format.

Layout::

    b"CFPI1"                      magic
    <I state_dim> <I action_dim>
    <Q count> <Q payload_bytes>
    <B has_next_actions>
    <I meta_len> meta JSON (utf-8)
    payload: float32 blocks, row-major, in field order s, a, r, s', a', done
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, DimensionError, TruncatedDatasetError

MAGIC = b"CFPI1"
_HEAD = struct.Struct("<IIQQB")
_F32 = np.dtype("<f4")

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def _f32(x, shape) -> np.ndarray:
    out = np.ascontiguousarray(np.asarray(x, dtype=np.float32)).reshape(shape)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """Columns of (s, a, r, s', a', done); stored as float32 so file round trips are exact."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    next_actions: np.ndarray | None
    dones: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.rewards)
        s = np.asarray(self.states)
        a = np.asarray(self.actions)
        if s.ndim != 2 or a.ndim != 2 or s.shape[0] != n or a.shape[0] != n:
            raise DimensionError("states and actions must be (count, dim) arrays matching the reward count")
        ds, da = s.shape[1], a.shape[1]
        object.__setattr__(self, "states", _f32(s, (n, ds)))
        object.__setattr__(self, "actions", _f32(a, (n, da)))
        object.__setattr__(self, "rewards", _f32(self.rewards, (n,)))
        object.__setattr__(self, "next_states", _f32(self.next_states, (n, ds)))
        if self.next_actions is not None:
            object.__setattr__(self, "next_actions", _f32(self.next_actions, (n, da)))
        object.__setattr__(self, "dones", _f32(self.dones, (n,)))

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def action_dim(self) -> int:
        return self.actions.shape[1]

    def subset(self, idx) -> Dataset:
        pick = lambda x: None if x is None else x[idx]  # noqa: E731
        return Dataset(
            self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx],
            pick(self.next_actions), self.dones[idx], dict(self.metadata),
        )

    def payload(self) -> bytes:
        blocks = [self.states, self.actions, self.rewards, self.next_states]
        if self.next_actions is not None:
            blocks.append(self.next_actions)
        blocks.append(self.dones)
        return b"".join(np.ascontiguousarray(b, dtype=_F32).tobytes() for b in blocks)

    def content_hash(self) -> str:
        return f"{fnv1a64(self.payload()):016x}"


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a over raw bytes."""
    h = FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def _payload_bytes(n: int, ds: int, da: int, has_next: bool) -> int:
    return 4 * n * (2 * ds + (2 if has_next else 1) * da + 2)


def write_dataset(data: Dataset, path) -> None:
    meta = json.dumps(data.metadata, sort_keys=True).encode()
    body = data.payload()
    has_next = data.next_actions is not None
    head = MAGIC + _HEAD.pack(data.state_dim, data.action_dim, len(data), len(body), int(has_next))
    Path(path).write_bytes(head + struct.pack("<I", len(meta)) + meta + body)


def read_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise DataError(f"{path}: bad magic, not a transition dataset")
    off = len(MAGIC)
    if len(raw) < off + _HEAD.size + 4:
        raise TruncatedDatasetError(f"{path}: header is truncated")
    ds, da, n, nbytes, has_next = _HEAD.unpack_from(raw, off)
    off += _HEAD.size
    (meta_len,) = struct.unpack_from("<I", raw, off)
    off += 4
    if len(raw) < off + meta_len:
        raise TruncatedDatasetError(f"{path}: metadata is truncated")
    meta = json.loads(raw[off : off + meta_len].decode()) if meta_len else {}
    off += meta_len
    expected = _payload_bytes(n, ds, da, bool(has_next))
    if nbytes != expected:
        raise DimensionError(
            f"{path}: header declares dims ({ds}, {da}) x {n} rows = {expected} bytes but payload length is {nbytes}"
        )
    body = raw[off:]
    if len(body) < nbytes:
        raise TruncatedDatasetError(f"{path}: payload has {len(body)} of {nbytes} bytes")
    if len(body) > nbytes:
        raise DimensionError(f"{path}: {len(body) - nbytes} trailing bytes after the payload")
    flat = np.frombuffer(body, dtype=_F32)
    fields, i = [], 0
    shapes = [(n, ds), (n, da), (n,), (n, ds)] + ([(n, da)] if has_next else []) + [(n,)]
    for shape in shapes:
        size = int(np.prod(shape))
        fields.append(flat[i : i + size].reshape(shape))
        i += size
    if not has_next:
        fields.insert(4, None)
    return Dataset(*fields, metadata=meta)
