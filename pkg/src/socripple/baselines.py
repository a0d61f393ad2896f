"""Comparison retrievers: Item-KNN, Content-KNN, DropoutNet, and the social
ablations (Stage 1 only, Stage 1 + social-graph expansion)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import kernels
from .catalog import Catalog
from .engagement import DAY, DEFAULT_POSITIVE, EngagementBuffer, EventLog, ImpressionLog
from .ripple import stage1_items
from .socialgraph import SocialGraph
from .twotower import ModelParams, TrainingError


def _top_n(items: np.ndarray, scores: np.ndarray, n: int) -> list[int]:
    """Best ``n`` items by score, ties broken by ascending item id."""
    if items.size == 0 or n < 1:
        return []
    if items.size > n:
        thr = np.partition(scores, -n)[-n]
        keep = scores >= thr
        items, scores = items[keep], scores[keep]
    order = np.lexsort((items, -scores))[:n]
    return items[order].tolist()


def _eligible(pool, exclude) -> np.ndarray:
    pool = np.asarray(pool, np.int64)
    if exclude:
        pool = pool[~np.isin(pool, np.fromiter(exclude, np.int64, len(exclude)))]
    return pool


# -------------------------------------------------------------- Item-KNN --


@dataclass
class ItemCoMatrix:
    """Item-item co-engagement counts and their cosine similarities."""

    counts: sp.csr_matrix
    sim: sp.csr_matrix

    @classmethod
    def build(cls, events, num_users: int, num_items: int, binary: bool = True,
              positive=DEFAULT_POSITIVE) -> "ItemCoMatrix":
        log = EventLog.coerce(events)
        mask = log.positive_mask(positive)
        x = sp.csr_matrix((np.ones(int(mask.sum())), (log.user[mask], log.item[mask])),
                          shape=(num_users, num_items))
        x.sum_duplicates()
        if binary:
            x.data[:] = 1.0
        co = (x.T @ x).tocsr()
        norms = np.sqrt(np.asarray(x.multiply(x).sum(axis=0)).ravel())
        co.setdiag(0.0)
        co.eliminate_zeros()
        inv = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
        sim = sp.diags(inv) @ co @ sp.diags(inv)
        sim = sp.csr_matrix(sim)
        sim.data = np.clip(sim.data, 0.0, 1.0)
        return cls(co, sim)

    def cosine(self, a: int, b: int) -> float:
        return float(self.sim[a, b])


def item_knn_retrieve(history, co: ItemCoMatrix, n: int, pool=None, exclude=()) -> list[int]:
    """Score each candidate by its summed cosine to the user's history.

    Only items with a positive score are returned; an empty history yields
    nothing. ``pool`` restricts the candidates (default: every item).
    """
    hist = np.unique(np.asarray(list(history), np.int64))
    if hist.size == 0:
        return []
    # sums of equal cosines can differ in the last ulp depending on order;
    # round so that such ties fall through to the id tie-break
    scores = np.round(np.asarray(co.sim[hist].sum(axis=0)).ravel(), 12)
    cand = np.arange(scores.size) if pool is None else np.asarray(pool, np.int64)
    cand = _eligible(cand, set(exclude) | set(hist.tolist()))
    cand = cand[scores[cand] > 0]
    return _top_n(cand, scores[cand], n)


# ----------------------------------------------------------- Content-KNN --


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)


def content_profile(history, content: np.ndarray) -> np.ndarray | None:
    hist = np.unique(np.asarray(list(history), np.int64))
    if hist.size == 0:
        return None
    return content[hist].mean(axis=0)


def content_knn_retrieve(profile, content: np.ndarray, n: int, pool=None, exclude=()) -> list[int]:
    """Top ``n`` items by cosine(profile, content vector)."""
    if profile is None:
        return []
    cand = np.arange(content.shape[0]) if pool is None else np.asarray(pool, np.int64)
    cand = _eligible(cand, set(exclude))
    if cand.size == 0:
        return []
    q = _unit_rows(np.asarray(profile, np.float64))
    sims = _unit_rows(content[cand]) @ q
    return _top_n(cand, sims, n)


# ------------------------------------------------------------ DropoutNet --


@dataclass(frozen=True)
class DropoutNetConfig:
    epochs: int = 5
    batch_size: int = 128
    learning_rate: float = 0.02
    cf_dropout_p: float = 0.5
    fusion_init: str = "identity"  # or "random"
    fusion_noise: float = 0.05
    seed: int = 0

    def validate(self) -> None:
        if not 0 <= self.cf_dropout_p <= 1:
            raise ValueError("cf_dropout_p must lie in [0, 1]")
        if self.epochs < 1 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ValueError("epochs, batch_size and learning_rate must be positive")
        if self.fusion_init not in ("identity", "random"):
            raise ValueError(f"unknown fusion_init {self.fusion_init!r}")


@dataclass
class DropoutNetParams:
    """User table, CF item table, fixed content inputs and a one-hidden-layer fusion MLP.

    fused(i) = W2 relu(W1 [cf_i; content_i] + b1) + b2, hidden width 2d.
    """

    user_table: np.ndarray
    cf_table: np.ndarray
    content: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    cf_dropout_p: float = 0.5
    warm: np.ndarray | None = None  # items seen in training

    @property
    def d(self) -> int:
        return int(self.user_table.shape[1])

    @classmethod
    def init(cls, base: ModelParams, content: np.ndarray, config: DropoutNetConfig) -> "DropoutNetParams":
        d = base.d
        dc = content.shape[1]
        rng = np.random.default_rng([config.seed, 3])
        if config.fusion_init == "identity":
            # relu(x) - relu(-x) = x reproduces the CF vector exactly
            W1 = np.zeros((2 * d, d + dc))
            W1[:d, :d] = np.eye(d)
            W1[d:, :d] = -np.eye(d)
            W2 = np.hstack([np.eye(d), -np.eye(d)])
            if config.fusion_noise > 0:
                W1 = W1 + config.fusion_noise * rng.normal(size=W1.shape) / np.sqrt(d + dc)
                W2 = W2 + config.fusion_noise * rng.normal(size=W2.shape) / np.sqrt(2 * d)
        else:
            W1 = rng.normal(size=(2 * d, d + dc)) / np.sqrt(d + dc)
            W2 = rng.normal(size=(d, 2 * d)) / np.sqrt(2 * d)
        return cls(base.user_table.copy(), base.item_table.copy(), np.asarray(content, np.float64),
                   W1, np.zeros(2 * d), W2, np.zeros(d), config.cf_dropout_p)

    def fuse(self, items, cf_mask) -> tuple[np.ndarray, tuple]:
        """Fused item vectors; ``cf_mask`` (0/1 per row) zeroes the CF part."""
        x = np.hstack([self.cf_table[items] * np.asarray(cf_mask, np.float64)[:, None], self.content[items]])
        pre = x @ self.W1.T + self.b1
        h = np.maximum(pre, 0.0)
        return h @ self.W2.T + self.b2, (x, pre, h)

    def item_vectors(self) -> np.ndarray:
        """Inference vectors; items without training interactions get CF zeroed."""
        items = np.arange(self.cf_table.shape[0])
        mask = np.ones(items.size) if self.warm is None else self.warm.astype(np.float64)
        return self.fuse(items, mask)[0]

    def save(self, path) -> None:
        np.savez(path, user_table=self.user_table, cf_table=self.cf_table, content=self.content,
                 W1=self.W1, b1=self.b1, W2=self.W2, b2=self.b2,
                 cf_dropout_p=np.float64(self.cf_dropout_p),
                 warm=self.warm if self.warm is not None else np.ones(0, bool))

    @classmethod
    def load(cls, path) -> "DropoutNetParams":
        with np.load(path) as z:
            warm = z["warm"]
            return cls(z["user_table"], z["cf_table"], z["content"], z["W1"], z["b1"], z["W2"], z["b2"],
                       float(z["cf_dropout_p"]), warm if warm.size else None)


def dropoutnet_loss_grad(params: DropoutNetParams, users, items, cf_mask) -> tuple[float, dict]:
    """In-batch softmax loss over fused item vectors and its gradient.

    Returns dense gradients for the fusion weights and per-row gradients
    (``user_rows``, ``cf_rows``) aligned with ``users`` / ``items``.
    """
    users = np.asarray(users, np.int64)
    items = np.asarray(items, np.int64)
    mask = np.asarray(cf_mask, np.float64)
    v, (x, pre, h) = params.fuse(items, mask)
    loss, gu, gv = kernels.inbatch_loss_grad(params.user_table[users], v)
    d = params.d
    dh = gv @ params.W2
    dpre = dh * (pre > 0)
    dx = dpre @ params.W1
    grads = {
        "W2": gv.T @ h,
        "b2": gv.sum(axis=0),
        "W1": dpre.T @ x,
        "b1": dpre.sum(axis=0),
        "user_rows": gu,
        "cf_rows": dx[:, :d] * mask[:, None],
    }
    return float(loss), grads


def dropoutnet_train(events, content: np.ndarray, base: ModelParams,
                     config: DropoutNetConfig = DropoutNetConfig(), positive=DEFAULT_POSITIVE) -> DropoutNetParams:
    """Train the fusion MLP (and fine-tune user/CF tables) with CF dropout."""
    config.validate()
    log = EventLog.coerce(events)
    log = log.take(np.flatnonzero(log.positive_mask(positive)))
    if len(log) == 0:
        raise TrainingError("no positive training events")
    content = np.asarray(content, np.float64)
    if content.ndim != 2 or content.shape[0] < base.num_items or not np.isfinite(content).all():
        raise ValueError("content features missing or malformed for some items")
    params = DropoutNetParams.init(base, content[: base.num_items], config)
    rng = np.random.default_rng([config.seed, 5])
    lr = config.learning_rate
    n = len(log)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, config.batch_size):
            sel = order[lo:lo + config.batch_size]
            u, it = log.user[sel], log.item[sel]
            uniq, inv = np.unique(it, return_inverse=True)
            keep = (rng.uniform(size=uniq.size) >= config.cf_dropout_p).astype(np.float64)
            _, g = dropoutnet_loss_grad(params, u, it, keep[inv])
            params.W1 -= lr * g["W1"]
            params.b1 -= lr * g["b1"]
            params.W2 -= lr * g["W2"]
            params.b2 -= lr * g["b2"]
            np.add.at(params.user_table, u, -lr * g["user_rows"])
            np.add.at(params.cf_table, it, -lr * g["cf_rows"])
    warm = np.zeros(params.cf_table.shape[0], bool)
    warm[np.unique(log.item)] = True
    params.warm = warm
    return params


def dropoutnet_retrieve(params: DropoutNetParams, user: int, n: int, pool=None, exclude=(),
                        item_vectors: np.ndarray | None = None) -> list[int]:
    """Top ``n`` items by affinity between the user and fused item vectors."""
    vecs = params.item_vectors() if item_vectors is None else item_vectors
    cand = np.arange(vecs.shape[0]) if pool is None else np.asarray(pool, np.int64)
    cand = _eligible(cand, set(exclude))
    if cand.size == 0:
        return []
    return _top_n(cand, vecs[cand] @ params.user_table[user], n)


# ------------------------------------------------------ social ablations --


def social_neighbors(user: int, graph: SocialGraph, hops: int = 1) -> list[int]:
    """Users reachable over ``following`` edges within ``hops`` steps, ascending."""
    if hops < 1:
        raise ValueError("hops must be >= 1")
    seen = {user}
    frontier = [user]
    for _ in range(hops):
        nxt = []
        for u in frontier:
            for v in graph.following(u):
                if v not in seen:
                    seen.add(v)
                    nxt.append(v)
        frontier = nxt
    seen.discard(user)
    return sorted(seen)


def sge_retrieve(user: int, graph: SocialGraph, buffer: EngagementBuffer, log: ImpressionLog,
                 now: float, catalog: Catalog, hops: int = 1, n: int = 200,
                 max_item_age: float = DAY) -> list[int]:
    """Expand over the viewer's social graph instead of embedding neighbours.

    Candidates are the recent items of followed users; ranked by support
    count, then newest creation time, then item id.
    """
    support: dict[int, int] = {}
    for v in social_neighbors(user, graph, hops):
        for it in {it for _, it, _ in buffer.recent_entries(v, now)}:
            support[it] = support.get(it, 0) + 1
    out = []
    for it, s in support.items():
        age = now - catalog.created[it]
        if catalog.creator[it] == user or log.was_shown(user, it) or age < 0 or age > max_item_age:
            continue
        out.append((it, s))
    out.sort(key=lambda p: (-p[1], -catalog.created[p[0]], p[0]))
    return [it for it, _ in out[:n]]


def stage1_only_retrieve(user: int, catalog: Catalog, graph: SocialGraph, log: ImpressionLog,
                         now: float, n: int = 200, max_item_age: float = DAY) -> list[int]:
    return stage1_items(user, now, graph, catalog, log, max_item_age)[:n]
