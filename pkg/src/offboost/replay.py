"""FIFO replay buffer shared by the online learner and the offline value pair.

Snapshot file format (little-endian, version 1):

    magic   4 bytes  b"RPB1"
    version u32
    state_dim u32, action_dim u32
    capacity u64, count u64, ptr u64
    then `count` records in storage order, each:
        state f8[state_dim] | action f8[action_dim] | reward f8
        | next_state f8[state_dim] | terminated u8

Floats round-trip bit-exactly, so a reloaded buffer continues a run the same
way the original would have.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, FormatError, StateError

Array = np.ndarray

_MAGIC = b"RPB1"
_VERSION = 1
_HEADER = struct.Struct("<4sIII QQQ")


@dataclass(frozen=True)
class Transition:
    """One environment interaction record; the buffer stores `terminated`
    only (truncation is resolved by the agent at insertion time)."""

    state: Array
    action: Array
    reward: float
    next_state: Array
    terminated: bool


@dataclass
class Batch:
    """Column-oriented minibatch."""

    states: Array       # (B, S)
    actions: Array      # (B, A)
    rewards: Array      # (B, 1)
    next_states: Array  # (B, S)
    terminated: Array   # (B, 1) float mask

    def __len__(self) -> int:
        return self.states.shape[0]


class ReplayBuffer:
    """Ring storage with uniform with-replacement sampling."""

    def __init__(self, state_dim: int, action_dim: int, capacity: int = 1_000_000):
        if capacity < 1 or state_dim < 1 or action_dim < 1:
            raise DimensionError("capacity and dims must be positive")
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.capacity = int(capacity)
        self._states = np.zeros((capacity, state_dim))
        self._actions = np.zeros((capacity, action_dim))
        self._rewards = np.zeros(capacity)
        self._next_states = np.zeros((capacity, state_dim))
        self._terminated = np.zeros(capacity, dtype=np.uint8)
        self._ptr = 0
        self._count = 0

    def __len__(self) -> int:
        return self._count

    def push(self, t: Transition) -> None:
        state = np.asarray(t.state, dtype=np.float64)
        action = np.asarray(t.action, dtype=np.float64)
        next_state = np.asarray(t.next_state, dtype=np.float64)
        if state.shape != (self.state_dim,) or next_state.shape != (self.state_dim,):
            raise DimensionError(f"state dims {state.shape} do not match buffer ({self.state_dim},)")
        if action.shape != (self.action_dim,):
            raise DimensionError(f"action dims {action.shape} do not match buffer ({self.action_dim},)")
        if not (np.isfinite(state).all() and np.isfinite(action).all()
                and np.isfinite(next_state).all() and np.isfinite(t.reward)):
            raise DimensionError("non-finite entries in transition")
        i = self._ptr
        self._states[i] = state
        self._actions[i] = action
        self._rewards[i] = t.reward
        self._next_states[i] = next_state
        self._terminated[i] = 1 if t.terminated else 0
        self._ptr = (i + 1) % self.capacity
        self._count = min(self._count + 1, self.capacity)

    def sample_batch(self, batch_size: int, rng: np.random.Generator | int) -> Batch:
        """Uniform i.i.d. with replacement; deterministic per seed/generator state."""
        if self._count == 0:
            raise StateError("cannot sample from an empty buffer")
        if batch_size < 1:
            raise DimensionError("batch_size must be >= 1")
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        idx = rng.integers(0, self._count, size=batch_size)
        return Batch(
            states=self._states[idx],
            actions=self._actions[idx],
            rewards=self._rewards[idx, None],
            next_states=self._next_states[idx],
            terminated=self._terminated[idx, None].astype(np.float64),
        )

    def transitions(self):
        """All stored transitions in storage order (testing/analysis helper)."""
        for i in range(self._count):
            yield Transition(
                self._states[i].copy(),
                self._actions[i].copy(),
                float(self._rewards[i]),
                self._next_states[i].copy(),
                bool(self._terminated[i]),
            )

    # ------------------------------------------------------------ snapshots

    def save(self, path) -> None:
        rec = np.zeros(
            self._count,
            dtype=self._record_dtype(self.state_dim, self.action_dim),
        )
        n = self._count
        rec["state"] = self._states[:n]
        rec["action"] = self._actions[:n]
        rec["reward"] = self._rewards[:n]
        rec["next_state"] = self._next_states[:n]
        rec["terminated"] = self._terminated[:n]
        header = _HEADER.pack(
            _MAGIC, _VERSION, self.state_dim, self.action_dim,
            self.capacity, self._count, self._ptr,
        )
        with open(path, "wb") as f:
            f.write(header)
            f.write(rec.tobytes())

    @staticmethod
    def _record_dtype(state_dim: int, action_dim: int) -> np.dtype:
        return np.dtype(
            [
                ("state", "<f8", (state_dim,)),
                ("action", "<f8", (action_dim,)),
                ("reward", "<f8"),
                ("next_state", "<f8", (state_dim,)),
                ("terminated", "u1"),
            ]
        )

    @classmethod
    def load(cls, path) -> "ReplayBuffer":
        with open(path, "rb") as f:
            raw = f.read()
        if len(raw) < _HEADER.size:
            raise FormatError(f"{path}: too short for a buffer header")
        magic, version, state_dim, action_dim, capacity, count, ptr = _HEADER.unpack_from(raw)
        if magic != _MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != _VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        dtype = cls._record_dtype(state_dim, action_dim)
        body = raw[_HEADER.size:]
        if len(body) != count * dtype.itemsize:
            raise FormatError(
                f"{path}: expected {count} records ({count * dtype.itemsize} bytes), got {len(body)} bytes"
            )
        rec = np.frombuffer(body, dtype=dtype)
        buf = cls(state_dim, action_dim, capacity)
        n = int(count)
        buf._states[:n] = rec["state"]
        buf._actions[:n] = rec["action"]
        buf._rewards[:n] = rec["reward"]
        buf._next_states[:n] = rec["next_state"]
        buf._terminated[:n] = rec["terminated"]
        buf._count = n
        buf._ptr = int(ptr)
        return buf
