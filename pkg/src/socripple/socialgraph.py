"""Directed follower graph: ``follower -> creator`` edges."""
from __future__ import annotations

import threading
from pathlib import Path

import numpy as np


class GraphError(ValueError):
    pass


class SocialGraph:
    """Follower graph with adjacency kept in both directions.

    ``num_users`` optionally fixes the ID population; IDs outside
    ``0..num_users-1`` are then rejected. Once :meth:`freeze` is called the
    graph is read-only and safe to share between threads.
    """

    def __init__(self, num_users: int | None = None):
        self.num_users = num_users
        self._followers: dict[int, set[int]] = {}
        self._following: dict[int, set[int]] = {}
        self._n_edges = 0
        self._frozen = False
        self._lock = threading.Lock()

    def _check_id(self, uid: int) -> None:
        if uid < 0 or (self.num_users is not None and uid >= self.num_users):
            raise GraphError(f"unknown user id {uid}")

    def add_edge(self, follower: int, creator: int) -> None:
        follower, creator = int(follower), int(creator)
        if follower == creator:
            raise GraphError(f"self-edge {follower}->{creator} rejected")
        self._check_id(follower)
        self._check_id(creator)
        if self._frozen:
            raise GraphError("graph is frozen")
        with self._lock:
            fs = self._followers.setdefault(creator, set())
            if follower in fs:
                return
            fs.add(follower)
            self._following.setdefault(follower, set()).add(creator)
            self._n_edges += 1

    def freeze(self) -> "SocialGraph":
        self._frozen = True
        return self

    @property
    def frozen(self) -> bool:
        return self._frozen

    def followers(self, creator: int) -> list[int]:
        """Users following ``creator``, ascending. Unknown creator -> []."""
        return sorted(self._followers.get(int(creator), ()))

    def following(self, user: int) -> list[int]:
        return sorted(self._following.get(int(user), ()))

    def is_follower(self, user: int, creator: int) -> bool:
        return int(user) in self._followers.get(int(creator), ())

    def num_edges(self) -> int:
        return self._n_edges

    def edges(self) -> list[tuple[int, int]]:
        """All edges sorted by (follower, creator)."""
        return sorted((f, c) for c, fs in self._followers.items() for f in fs)

    def follower_csr(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """CSR arrays (ptr, idx) of followers per creator for IDs ``0..n-1``."""
        counts = np.zeros(n + 1, np.int64)
        for c, fs in self._followers.items():
            counts[c + 1] = len(fs)
        ptr = np.cumsum(counts)
        idx = np.empty(ptr[-1], np.int64)
        for c, fs in self._followers.items():
            idx[ptr[c]:ptr[c + 1]] = sorted(fs)
        return ptr, idx

    @classmethod
    def from_edges(cls, edges, num_users: int | None = None) -> "SocialGraph":
        g = cls(num_users)
        for f, c in edges:
            g.add_edge(f, c)
        return g.freeze()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# follower creator\n")
            for f, c in self.edges():
                fh.write(f"{f} {c}\n")


def load_edges(path, num_users: int | None = None) -> SocialGraph:
    """Read a whitespace-separated ``follower creator`` edge list.

    Lines starting with ``#`` and blank lines are skipped; duplicates
    collapse to one edge.
    """
    g = SocialGraph(num_users)
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        parts = s.split()
        if len(parts) != 2:
            raise GraphError(f"{path}:{lineno}: expected 2 columns, got {len(parts)}")
        try:
            f, c = int(parts[0]), int(parts[1])
        except ValueError:
            raise GraphError(f"{path}:{lineno}: non-integer id in {s!r}") from None
        try:
            g.add_edge(f, c)
        except GraphError as e:
            raise GraphError(f"{path}:{lineno}: {e}") from None
    return g.freeze()
