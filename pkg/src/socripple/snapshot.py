"""Persist and restore the live serving state in one checksummed file.

The snapshot holds the engagement buffer, the impression log and the user
index. It is written to a temporary file and renamed into place, so a crash
mid-write leaves the previous snapshot intact. Loading verifies the version
tag and a SHA-256 over every payload array before building anything.
"""
from __future__ import annotations

import hashlib
import io
import os
import tempfile
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .annindex import UserIndex
from .engagement import EngagementBuffer, ImpressionLog

SNAPSHOT_VERSION = "socripple-state-v1"
FILENAME = "state.npz"


class SnapshotError(RuntimeError):
    pass


@dataclass
class ServingState:
    buffer: EngagementBuffer
    log: ImpressionLog
    index: UserIndex | None = None


def _digest(arrays: dict) -> str:
    h = hashlib.sha256()
    for k in sorted(arrays):
        a = np.ascontiguousarray(arrays[k])
        h.update(k.encode())
        h.update(str(a.dtype).encode())
        h.update(repr(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def _payload(state: ServingState) -> dict:
    entries = state.buffer.dump()
    shown = state.log.dump()
    out = {
        "buf_user": np.array([e[0] for e in entries], np.int64),
        "buf_at": np.array([e[1] for e in entries], np.float64),
        "buf_item": np.array([e[2] for e in entries], np.int64),
        "buf_created": np.array([e[3] for e in entries], np.float64),
        "buf_params": np.array([state.buffer.window, state.buffer.max_item_age]),
        "buf_positive": np.array(sorted(int(s) for s in state.buffer.positive), np.int64),
        "log_user": np.array([s[0] for s in shown], np.int64),
        "log_item": np.array([s[1] for s in shown], np.int64),
        "log_at": np.array([s[2] for s in shown], np.float64),
    }
    if state.index is not None:
        raw = io.BytesIO()
        state.index.save(raw)
        out["index"] = np.frombuffer(raw.getvalue(), np.uint8)
    return out


def save(state: ServingState, state_dir) -> Path:
    """Atomically write ``state_dir/state.npz``; returns its path."""
    d = Path(state_dir)
    d.mkdir(parents=True, exist_ok=True)
    arrays = _payload(state)
    target = d / FILENAME
    fd, tmp = tempfile.mkstemp(prefix=".state-", suffix=".npz", dir=d)
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, version=np.array(SNAPSHOT_VERSION), checksum=np.array(_digest(arrays)), **arrays)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return target


def load(state_dir) -> ServingState:
    p = Path(state_dir)
    p = p / FILENAME if p.is_dir() else p
    if not p.exists():
        raise SnapshotError(f"snapshot not found: {p}")
    try:
        with np.load(p, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
    except (zipfile.BadZipFile, OSError, ValueError, EOFError) as exc:
        raise SnapshotError(f"corrupt snapshot {p}: {exc}") from None
    version = str(arrays.pop("version", ""))
    if version != SNAPSHOT_VERSION:
        raise SnapshotError(f"snapshot version mismatch: {version!r} != {SNAPSHOT_VERSION!r}")
    checksum = str(arrays.pop("checksum", ""))
    if checksum != _digest(arrays):
        raise SnapshotError(f"snapshot checksum mismatch in {p}")

    window, max_age = arrays["buf_params"].tolist()
    buf = EngagementBuffer(window, max_age, positive=arrays["buf_positive"].tolist())
    buf.bulk_load(arrays["buf_user"], arrays["buf_item"], arrays["buf_at"], arrays["buf_created"])
    ilog = ImpressionLog()
    ilog.bulk_mark(arrays["log_user"], arrays["log_item"], arrays["log_at"])
    index = None
    if "index" in arrays:
        index = UserIndex.load(io.BytesIO(arrays["index"].tobytes()))
    return ServingState(buf, ilog, index)
