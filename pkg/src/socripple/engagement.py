"""Engagement events, the live recent-engagement buffer and the impression log."""
from __future__ import annotations

import bisect
import enum
import json
import threading
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

HOUR = 3600.0
DAY = 24 * HOUR


class Signal(enum.IntEnum):
    LIKE = 0
    LONG_VIEW = 1
    VIEW = 2
    SKIP = 3

    @classmethod
    def parse(cls, value) -> "Signal":
        if isinstance(value, Signal):
            return value
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                raise ValueError(f"unknown signal {value!r}") from None
        return cls(int(value))

    @property
    def label(self) -> str:
        return self.name.lower()


DEFAULT_POSITIVE = frozenset({Signal.LIKE, Signal.LONG_VIEW})


class EngagementEvent(NamedTuple):
    user: int
    item: int
    at: float
    signal: Signal = Signal.LIKE


class EngagementError(ValueError):
    pass


@dataclass
class EventLog:
    """Column-wise event log, sorted by time (ties by user, item)."""

    user: np.ndarray
    item: np.ndarray
    ts: np.ndarray
    signal: np.ndarray

    def __post_init__(self):
        self.user = np.asarray(self.user, np.int64)
        self.item = np.asarray(self.item, np.int64)
        self.ts = np.asarray(self.ts, np.float64)
        self.signal = np.asarray(self.signal, np.int64)

    def __len__(self) -> int:
        return int(self.user.shape[0])

    def __iter__(self):
        for u, i, t, s in zip(self.user.tolist(), self.item.tolist(), self.ts.tolist(), self.signal.tolist()):
            yield EngagementEvent(u, i, t, Signal(s))

    @classmethod
    def from_events(cls, events: Iterable[EngagementEvent]) -> "EventLog":
        ev = list(events)
        return cls(
            [e.user for e in ev], [e.item for e in ev],
            [e.at for e in ev], [int(Signal.parse(e.signal)) for e in ev],
        ).sorted()

    @classmethod
    def coerce(cls, events) -> "EventLog":
        return events if isinstance(events, EventLog) else cls.from_events(events)

    def sorted(self) -> "EventLog":
        order = np.lexsort((self.item, self.user, self.ts))
        return self.take(order)

    def take(self, idx) -> "EventLog":
        return EventLog(self.user[idx], self.item[idx], self.ts[idx], self.signal[idx])

    def positive_mask(self, positive=DEFAULT_POSITIVE) -> np.ndarray:
        return np.isin(self.signal, [int(s) for s in positive])

    def save_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for e in self:
                fh.write(json.dumps({"user": e.user, "item": e.item, "ts": e.at, "signal": e.signal.label}) + "\n")

    @classmethod
    def load_jsonl(cls, path) -> "EventLog":
        us, its, ts, sg = [], [], [], []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    us.append(int(rec["user"]))
                    its.append(int(rec["item"]))
                    ts.append(float(rec["ts"]))
                    sg.append(int(Signal.parse(rec["signal"])))
                except (KeyError, ValueError, TypeError) as e:
                    raise EngagementError(f"{path}:{lineno}: bad event ({e})") from None
        return cls(us, its, ts, sg)


class EngagementBuffer:
    """Recent positive engagements per user.

    An entry is visible at query time ``now`` when ``at <= now``,
    ``now - at <= window`` and ``now - created <= max_item_age``; both
    boundaries are closed. Writers and readers may run concurrently.
    """

    def __init__(self, window: float = DAY, max_item_age: float = DAY,
                 positive=DEFAULT_POSITIVE):
        if window <= 0 or max_item_age <= 0:
            raise EngagementError("window and max_item_age must be positive")
        self.window = float(window)
        self.max_item_age = float(max_item_age)
        self.positive = frozenset(Signal.parse(s) for s in positive)
        # user -> time-sorted list of (at, item, created)
        self._entries: dict[int, list[tuple[float, int, float]]] = {}
        self._lock = threading.Lock()
        self._count = 0

    def __len__(self) -> int:
        return self._count

    def record(self, event: EngagementEvent, item_created_at: float) -> None:
        sig = Signal.parse(event.signal)
        if sig not in self.positive:
            raise EngagementError(f"non-positive signal {sig.label!r} cannot enter the buffer")
        if event.at < item_created_at:
            raise EngagementError(
                f"engagement at {event.at} precedes item creation {item_created_at}")
        entry = (float(event.at), int(event.item), float(item_created_at))
        with self._lock:
            lst = self._entries.setdefault(int(event.user), [])
            if not lst or lst[-1] <= entry:
                lst.append(entry)
            else:
                bisect.insort(lst, entry)
            self._count += 1

    def bulk_load(self, users, items, ats, created) -> None:
        """Record many positive entries at once (no signal check).

        Equivalent to calling :meth:`record` for each row.
        """
        users = np.asarray(users, np.int64)
        ats = np.asarray(ats, np.float64)
        items = np.asarray(items, np.int64)
        created = np.asarray(created, np.float64)
        if np.any(ats < created):
            raise EngagementError("engagement precedes item creation")
        if users.size == 0:
            return
        order = np.lexsort((created, items, ats, users))
        us = users[order]
        bounds = np.flatnonzero(np.diff(us)) + 1
        starts = np.concatenate([[0], bounds]).tolist()
        ends = np.concatenate([bounds, [us.size]]).tolist()
        rows = list(zip(ats[order].tolist(), items[order].tolist(), created[order].tolist()))
        with self._lock:
            for a, b in zip(starts, ends):
                u = int(us[a])
                lst = self._entries.get(u)
                if lst:
                    lst.extend(rows[a:b])
                    lst.sort()
                else:
                    self._entries[u] = rows[a:b]
            self._count += len(rows)

    def _visible(self, lst, now: float):
        lo = bisect.bisect_left(lst, (now - self.window, -1, -np.inf))
        hi = bisect.bisect_right(lst, (now, np.iinfo(np.int64).max, np.inf))
        oldest = now - self.max_item_age
        return [e for e in lst[lo:hi] if e[2] >= oldest]

    def recent_entries(self, user: int, now: float) -> list[tuple[float, int, float]]:
        """Visible ``(at, item, created)`` entries, oldest first."""
        lst = self._entries.get(int(user))
        if not lst:
            return []
        with self._lock:
            snap = list(lst)
        return self._visible(snap, now)

    def recent_items(self, user: int, now: float) -> set[tuple[int, float]]:
        return {(it, at) for at, it, _ in self.recent_entries(user, now)}

    def prune(self, now: float) -> int:
        """Drop entries that can no longer be visible at any time >= ``now``."""
        oldest_at = now - self.window
        oldest_created = now - self.max_item_age
        evicted = 0
        with self._lock:
            for u in list(self._entries):
                lst = self._entries[u]
                keep = [e for e in lst if e[0] >= oldest_at and e[2] >= oldest_created]
                evicted += len(lst) - len(keep)
                if keep:
                    self._entries[u] = keep
                else:
                    del self._entries[u]
            self._count -= evicted
        return evicted

    def users(self) -> list[int]:
        return sorted(self._entries)

    def dump(self) -> list[tuple[int, float, int, float]]:
        """Every stored entry as ``(user, at, item, created)``."""
        with self._lock:
            return [(u, *e) for u in sorted(self._entries) for e in self._entries[u]]


class ImpressionLog:
    """Append-only record of (user, item) pairs already delivered."""

    def __init__(self):
        self._shown: dict[tuple[int, int], float] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._shown)

    def mark_shown(self, user: int, item: int, at: float) -> None:
        key = (int(user), int(item))
        with self._lock:
            if key not in self._shown:
                self._shown[key] = float(at)

    def bulk_mark(self, users, items, ats) -> None:
        pairs = zip(np.asarray(users, np.int64).tolist(), np.asarray(items, np.int64).tolist())
        with self._lock:
            for key, t in zip(pairs, np.asarray(ats, np.float64).tolist()):
                self._shown.setdefault(key, t)

    def was_shown(self, user: int, item: int) -> bool:
        return (int(user), int(item)) in self._shown

    def first_shown(self, user: int, item: int) -> float | None:
        return self._shown.get((int(user), int(item)))

    def dump(self) -> list[tuple[int, int, float]]:
        with self._lock:
            return sorted((u, i, t) for (u, i), t in self._shown.items())
