"""Bit-exact dataset and checkpoint file formats.

Both formats are little-endian regardless of host.  Writers publish files
atomically (write to a temp file in the same directory, then rename), so a
concurrent reader never observes a partial file.

Dataset file ("CSAD"):
    magic 4s | version u32 | state_dim u32 | action_dim u32 | count u64
    followed by count records of (s, a, s_n) as float32.

Checkpoint file ("CSAM"):
    magic 4s | version u32 | header_len u32 | header (UTF-8 JSON)
    followed by the named float32 arrays, concatenated in manifest order.
    The JSON header carries: kind, schedule, dims/arch config, the manifest
    [[name, shape], ...] and free-form metadata.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

DATASET_MAGIC = b"CSAD"
CHECKPOINT_MAGIC = b"CSAM"
FORMAT_VERSION = 1

MODEL_KINDS = ("teacher", "student_csa", "student_csa_dagger",
               "forward", "ddpm", "lambda")


class FormatError(ValueError):
    """Raised for wrong magic/version, truncation, or shape mismatches."""


@dataclass
class TransitionDataset:
    """Expert transitions: rows of (state, action, next state)."""

    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float32)
        self.actions = np.asarray(self.actions, dtype=np.float32)
        self.next_states = np.asarray(self.next_states, dtype=np.float32)
        n = len(self.states)
        if len(self.actions) != n or len(self.next_states) != n:
            raise ValueError("states/actions/next_states lengths differ")
        if n and self.states.shape[1] != self.next_states.shape[1]:
            raise ValueError("state and next-state widths differ")

    def __len__(self) -> int:
        return len(self.states)

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def action_dim(self) -> int:
        return self.actions.shape[1]

    def split(self, val_fraction: float, rng: np.random.Generator):
        """Deterministic train/validation split."""
        n = len(self)
        idx = rng.permutation(n)
        n_val = max(1, int(n * val_fraction)) if n > 1 else 0
        val, train = idx[:n_val], idx[n_val:]
        take = lambda ix: TransitionDataset(
            self.states[ix], self.actions[ix], self.next_states[ix])
        return take(train), take(val)


def _atomic_write(path: str, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


_DS_HEADER = struct.Struct("<4sIIIQ")


def write_dataset(path: str, ds: TransitionDataset) -> None:
    if len(ds):
        sdim, adim = ds.state_dim, ds.action_dim
    else:
        sdim = ds.states.shape[1] if ds.states.ndim == 2 else 0
        adim = ds.actions.shape[1] if ds.actions.ndim == 2 else 0
    header = _DS_HEADER.pack(DATASET_MAGIC, FORMAT_VERSION, sdim, adim, len(ds))
    rows = np.concatenate(
        [ds.states.reshape(len(ds), -1),
         ds.actions.reshape(len(ds), -1),
         ds.next_states.reshape(len(ds), -1)],
        axis=1) if len(ds) else np.zeros((0,), dtype=np.float32)
    body = np.ascontiguousarray(rows, dtype="<f4").tobytes()
    _atomic_write(path, header + body)


def read_dataset(path: str) -> TransitionDataset:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _DS_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, sdim, adim, count = _DS_HEADER.unpack_from(raw)
    if magic != DATASET_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    row_width = 2 * sdim + adim
    expected = _DS_HEADER.size + count * row_width * 4
    if len(raw) != expected:
        raise FormatError(f"{path}: length {len(raw)} != expected {expected}")
    flat = np.frombuffer(raw, dtype="<f4", offset=_DS_HEADER.size)
    rows = flat.reshape(count, row_width) if count else np.zeros((0, row_width), "<f4")
    return TransitionDataset(
        states=rows[:, :sdim].copy(),
        actions=rows[:, sdim:sdim + adim].copy(),
        next_states=rows[:, sdim + adim:].copy(),
    )


@dataclass
class Checkpoint:
    """A named-array bundle plus its identifying header fields."""

    kind: str
    arrays: dict
    config: dict
    schedule: dict | None = None
    meta: dict | None = None

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise FormatError(f"unknown model kind {self.kind!r}")


_CKPT_PREFIX = struct.Struct("<4sII")


def write_checkpoint(path: str, ckpt: Checkpoint) -> None:
    manifest = []
    blobs = []
    for name in sorted(ckpt.arrays):
        arr = np.ascontiguousarray(ckpt.arrays[name], dtype="<f4")
        manifest.append([name, list(arr.shape)])
        blobs.append(arr.tobytes())
    header = {
        "kind": ckpt.kind,
        "schedule": ckpt.schedule,
        "config": ckpt.config,
        "manifest": manifest,
        "meta": ckpt.meta or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = _CKPT_PREFIX.pack(CHECKPOINT_MAGIC, FORMAT_VERSION, len(hbytes))
    _atomic_write(path, payload + hbytes + b"".join(blobs))


def read_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _CKPT_PREFIX.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, hlen = _CKPT_PREFIX.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if len(raw) < _CKPT_PREFIX.size + hlen:
        raise FormatError(f"{path}: truncated header block")
    try:
        header = json.loads(raw[_CKPT_PREFIX.size:_CKPT_PREFIX.size + hlen])
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: bad header JSON: {e}") from e
    offset = _CKPT_PREFIX.size + hlen
    arrays = {}
    for name, shape in header["manifest"]:
        n = int(np.prod(shape)) if shape else 1
        end = offset + 4 * n
        if end > len(raw):
            raise FormatError(f"{path}: truncated array {name!r}")
        arrays[name] = np.frombuffer(raw, dtype="<f4", count=n,
                                     offset=offset).reshape(shape).copy()
        offset = end
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return Checkpoint(
        kind=header["kind"],
        arrays=arrays,
        config=header["config"],
        schedule=header.get("schedule"),
        meta=header.get("meta") or {},
    )
