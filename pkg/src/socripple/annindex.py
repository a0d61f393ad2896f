"""K-nearest-neighbour search over exported user embeddings.

Vectors are L2-normalised at build time, so similarity is cosine. ``exact``
mode scans every stored vector; ``approximate`` mode walks a navigable
small-world graph with a bounded beam (``ef_search``).
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from . import kernels

INDEX_VERSION = "socripple-index-v1"


class UnknownUserError(KeyError):
    pass


@dataclass(frozen=True)
class BuildParams:
    m: int = 16
    max_degree: int = 32
    ef_construction: int = 100
    ef_search: int = 200
    seed: int = 0


@dataclass
class UserIndex:
    ids: np.ndarray
    vectors: np.ndarray
    mode: str = "exact"
    params: BuildParams = field(default_factory=BuildParams)
    adj: np.ndarray | None = None
    deg: np.ndarray | None = None
    entry: int = 0

    def __post_init__(self):
        self._pos = {int(u): r for r, u in enumerate(self.ids.tolist())}
        self._visited = threading.local()

    def _scratch(self) -> list:
        # per-thread visit stamps so concurrent queries never share state
        st = getattr(self._visited, "v", None)
        if st is None:
            st = self._visited.v = [np.zeros(len(self), np.int64), 0]
        st[1] += 1
        return st

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    def __contains__(self, user) -> bool:
        return int(user) in self._pos

    def row(self, user: int) -> int:
        try:
            return self._pos[int(user)]
        except KeyError:
            raise UnknownUserError(f"user {user} not in index") from None

    def vector(self, user: int) -> np.ndarray:
        return self.vectors[self.row(user)]

    def similarity(self, a: int, b: int) -> float:
        return float(kernels.dot_scan(self.vectors[self.row(a)][None], self.vectors[self.row(b)][None])[0, 0])

    def save(self, path) -> None:
        extra = {}
        if self.mode == "approximate":
            extra = dict(adj=self.adj, deg=self.deg, entry=np.int64(self.entry))
        p = self.params
        np.savez(path, version=np.array(INDEX_VERSION), mode=np.array(self.mode), ids=self.ids,
                 vectors=self.vectors,
                 build=np.array([p.m, p.max_degree, p.ef_construction, p.ef_search, p.seed], np.int64),
                 **extra)

    @classmethod
    def load(cls, path) -> "UserIndex":
        with np.load(path, allow_pickle=False) as z:
            version = str(z["version"])
            if version != INDEX_VERSION:
                raise ValueError(f"index version mismatch: {version!r} != {INDEX_VERSION!r}")
            mode = str(z["mode"])
            bp = BuildParams(*[int(x) for x in z["build"]])
            kw = {}
            if mode == "approximate":
                kw = dict(adj=z["adj"], deg=z["deg"], entry=int(z["entry"]))
            return cls(z["ids"], z["vectors"], mode, bp, **kw)


def _normalize(embeddings) -> tuple[np.ndarray, np.ndarray]:
    if not embeddings:
        raise ValueError("cannot build an index from zero embeddings")
    ids = np.array(sorted(int(k) for k in embeddings), np.int64)
    dims = {np.asarray(embeddings[k]).shape for k in ids.tolist()}
    if len(dims) != 1:
        raise ValueError(f"embedding dimension mismatch: {sorted(dims)}")
    vecs = np.array([np.asarray(embeddings[k], np.float64) for k in ids.tolist()])
    if vecs.ndim != 2 or vecs.shape[1] < 1:
        raise ValueError("embeddings must be non-empty 1-d vectors")
    norms = np.linalg.norm(vecs, axis=1)
    bad = np.flatnonzero(~(norms > 0) | ~np.isfinite(norms))
    if bad.size:
        raise ValueError(f"zero or non-finite embedding for user {ids[bad[0]]}")
    return ids, vecs / norms[:, None]


def build(embeddings: dict, mode: str = "exact", params: BuildParams = BuildParams()) -> UserIndex:
    """Normalise ``embeddings`` (user -> vector) and index them."""
    ids, vecs = _normalize(embeddings)
    if mode == "exact":
        return UserIndex(ids, vecs, mode, params)
    if mode != "approximate":
        raise ValueError(f"unknown index mode {mode!r}")
    if params.m < 1 or params.max_degree < params.m:
        raise ValueError("need 1 <= m <= max_degree")
    order = np.random.default_rng(params.seed).permutation(ids.shape[0])
    adj, deg, entry = kernels.nsw_build(vecs, order, params.m, params.max_degree, params.ef_construction)
    return UserIndex(ids, vecs, mode, params, adj, deg, int(entry))


def _select(ids: np.ndarray, sims: np.ndarray, k: int) -> list[tuple[int, float]]:
    if ids.shape[0] > k:
        thr = np.partition(sims, -k)[-k]
        keep = sims >= thr
        ids, sims = ids[keep], sims[keep]
    order = np.lexsort((ids, -sims))[:k]
    return list(zip(ids[order].tolist(), sims[order].tolist()))


def knn_batch(index: UserIndex, queries, K: int) -> list[list[tuple[int, float]]]:
    """Top-``K`` most similar users for each query, excluding the query itself.

    Each result is a list of ``(user, similarity)`` pairs, similarity
    descending, ties broken by ascending user id.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    rows = [index.row(q) for q in queries]
    out = []
    for start in range(0, len(rows), 256):
        chunk = rows[start:start + 256]
        if index.mode == "exact":
            sims = kernels.dot_scan(index.vectors, index.vectors[chunk])
            for j, r in enumerate(chunk):
                mask = np.ones(len(index), bool)
                mask[r] = False
                out.append(_select(index.ids[mask], sims[j][mask], K))
        else:
            for r in chunk:
                visited, stamp = index._scratch()
                ef = max(index.params.ef_search, K + 1)
                rows_, sims_ = kernels.nsw_search(index.vectors, index.adj, index.deg,
                                                  index.vectors[r], index.entry, ef, visited, stamp)
                keep = rows_ != r
                out.append(_select(index.ids[rows_[keep]], sims_[keep], K))
    return out


def knn(index: UserIndex, query: int, K: int) -> list[tuple[int, float]]:
    return knn_batch(index, [query], K)[0]
