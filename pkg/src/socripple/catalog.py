"""Item catalog: creator and creation time per item, plus optional content vectors."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class ColdItem(NamedTuple):
    item: int
    creator: int
    created_at: float


@dataclass
class Catalog:
    creator: np.ndarray
    created: np.ndarray
    content: np.ndarray | None = None

    def __post_init__(self):
        self.creator = np.asarray(self.creator, np.int64)
        self.created = np.asarray(self.created, np.float64)
        self._by_creator = None

    def __len__(self) -> int:
        return int(self.creator.shape[0])

    def __contains__(self, item) -> bool:
        return 0 <= int(item) < len(self)

    def get(self, item: int) -> ColdItem:
        if item not in self:
            raise KeyError(f"unknown item {item}")
        return ColdItem(int(item), int(self.creator[item]), float(self.created[item]))

    def by_creator(self) -> dict[int, list[int]]:
        """Items per creator, ascending creation time (ties by item id)."""
        if self._by_creator is None:
            order = np.lexsort((np.arange(len(self)), self.created))
            groups: dict[int, list[int]] = {}
            for i in order.tolist():
                groups.setdefault(int(self.creator[i]), []).append(i)
            self._by_creator = groups
        return self._by_creator

    def fresh_items(self, now: float, max_age: float) -> np.ndarray:
        """Items with ``0 <= now - created <= max_age``, ascending id."""
        age = now - self.created
        return np.flatnonzero((age >= 0) & (age <= max_age))

    def save_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i in range(len(self)):
                fh.write(json.dumps({"item": i, "creator": int(self.creator[i]),
                                     "created_ts": float(self.created[i])}) + "\n")

    @classmethod
    def load_jsonl(cls, path) -> "Catalog":
        rows = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    r = json.loads(line)
                    rows[int(r["item"])] = (int(r["creator"]), float(r["created_ts"]))
                except (KeyError, ValueError, TypeError) as e:
                    raise ValueError(f"{path}:{lineno}: bad catalog row ({e})") from None
        n = len(rows)
        if sorted(rows) != list(range(n)):
            raise ValueError(f"{path}: item ids must be dense 0..{n - 1}")
        return cls([rows[i][0] for i in range(n)], [rows[i][1] for i in range(n)])
