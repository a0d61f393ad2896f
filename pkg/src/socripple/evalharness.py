"""Offline recall@K evaluation: item-age buckets, ablation rows, K/M sweep.

Protocol: each test user is evaluated once, at the time of their first
test-period positive. The world is replayed strictly before that instant,
every retriever returns ``k`` items, and recall is measured against the
user's test positives on items that already existed at evaluation time and
were at most ``bucket`` hours old when engaged. Users with no such
positives are skipped for that bucket; the reported value is the mean over
the remaining users.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import annindex, baselines, ripple, simgen
from .engagement import DAY, HOUR, EngagementBuffer, EventLog, ImpressionLog
from .twotower import ModelParams, TrainConfig, export_user_embeddings, train

log = logging.getLogger(__name__)

BUCKETS = (6, 12, 24)
TABLE1_VARIANTS = ("dropoutnet", "content_knn", "item_knn", "socripple")
TABLE2_VARIANTS = ("stage1_only", "stage1_sge", "socripple")
VARIANTS = ("socripple", "stage1_only", "stage1_sge", "dropoutnet", "content_knn", "item_knn")


def recall_at_k(retrieved, relevant, k: int) -> float | None:
    """|top-k ∩ relevant| / |relevant|; ``None`` when ``relevant`` is empty."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rel = set(relevant)
    if not rel:
        return None
    return len(set(list(retrieved)[:k]) & rel) / len(rel)


@dataclass
class EvalContext:
    """A world plus every trained artifact the retrievers need."""

    world: simgen.World
    train_events: EventLog
    test_events: EventLog
    model: ModelParams
    index: annindex.UserIndex
    dropoutnet: baselines.DropoutNetParams | None = None
    comatrix: baselines.ItemCoMatrix | None = None
    ripple_config: ripple.RippleConfig = field(default_factory=ripple.RippleConfig)
    sge_hops: int = 1
    cold_age: float = DAY
    seed: int = 0

    def __post_init__(self):
        self._dn_vectors = None

    @property
    def dn_vectors(self):
        if self._dn_vectors is None and self.dropoutnet is not None:
            self._dn_vectors = self.dropoutnet.item_vectors()
        return self._dn_vectors


@dataclass
class UserState:
    """Replayed state visible to a retriever at one evaluation instant."""

    buffer: EngagementBuffer
    log: ImpressionLog
    history: dict


def prepare(world: simgen.World, train_config: TrainConfig = TrainConfig(), index_mode: str = "exact",
            model: ModelParams | None = None, index: annindex.UserIndex | None = None,
            dropoutnet=None, dropoutnet_config: baselines.DropoutNetConfig | None = None,
            ripple_config: ripple.RippleConfig = ripple.RippleConfig(), with_baselines: bool = True,
            sge_hops: int = 1) -> EvalContext:
    """Split the world, then train/build whatever was not supplied."""
    tr, te = simgen.split(world)
    pos = tr.take(np.flatnonzero(tr.positive_mask()))
    cat = world.catalog
    if model is None:
        t0 = time.perf_counter()
        model = train(pos, train_config, num_users=world.num_users, num_items=len(cat))
        log.info("two-tower trained in %.1fs, epoch losses %s", time.perf_counter() - t0,
                 [round(x, 3) for x in model.history])
    if index is None:
        index = annindex.build(export_user_embeddings(model), index_mode)
    co = None
    if with_baselines:
        co = baselines.ItemCoMatrix.build(pos, world.num_users, len(cat))
        if dropoutnet is None:
            cfg = dropoutnet_config or baselines.DropoutNetConfig(seed=train_config.seed)
            dropoutnet = baselines.dropoutnet_train(pos, cat.content, model, cfg)
    return EvalContext(world, tr, te, model, index, dropoutnet, co, ripple_config, sge_hops,
                       seed=world.config.seed)


# --------------------------------------------------------------- variants --

Retriever = Callable[[EvalContext, UserState, int, float, int], list]


def _pool(ctx: EvalContext, state: UserState, user: int, now: float) -> np.ndarray:
    cat = ctx.world.catalog
    fresh = cat.fresh_items(now, ctx.cold_age)
    keep = [it for it in fresh.tolist() if cat.creator[it] != user and not state.log.was_shown(user, it)]
    return np.asarray(keep, np.int64)


def _socripple(ctx, state, user, now, n):
    cfg = replace(ctx.ripple_config, N_out=n)
    w = ctx.world
    return ripple.retrieve(user, now, w.graph, w.catalog, ctx.index, state.buffer, state.log, cfg)


def _stage1_only(ctx, state, user, now, n):
    w = ctx.world
    return baselines.stage1_only_retrieve(user, w.catalog, w.graph, state.log, now, n, ctx.cold_age)


def _stage1_sge(ctx, state, user, now, n):
    w = ctx.world
    s1 = ripple.stage1_items(user, now, w.graph, w.catalog, state.log, ctx.cold_age)
    s2 = baselines.sge_retrieve(user, w.graph, state.buffer, state.log, now, w.catalog, ctx.sge_hops, n,
                                ctx.cold_age)
    return [c.item for c in ripple.merge(s1, [(it, 0.0) for it in s2], n)]


def _dropoutnet(ctx, state, user, now, n):
    return baselines.dropoutnet_retrieve(ctx.dropoutnet, user, n, _pool(ctx, state, user, now),
                                         item_vectors=ctx.dn_vectors)


def _content_knn(ctx, state, user, now, n):
    prof = baselines.content_profile(state.history.get(user, ()), ctx.world.catalog.content)
    return baselines.content_knn_retrieve(prof, ctx.world.catalog.content, n, _pool(ctx, state, user, now))


def _item_knn(ctx, state, user, now, n):
    return baselines.item_knn_retrieve(state.history.get(user, ()), ctx.comatrix, n,
                                       _pool(ctx, state, user, now))


RETRIEVERS: dict[str, Retriever] = {
    "socripple": _socripple,
    "stage1_only": _stage1_only,
    "stage1_sge": _stage1_sge,
    "dropoutnet": _dropoutnet,
    "content_knn": _content_knn,
    "item_knn": _item_knn,
}


# ----------------------------------------------------------------- plan --


@dataclass
class EvalPlan:
    users: list[int]
    times: list[float]
    relevant: list[dict[int, set[int]]]  # bucket hours -> item set, per user


def make_plan(ctx: EvalContext, buckets=BUCKETS, max_users: int | None = None) -> EvalPlan:
    te = ctx.test_events
    created = ctx.world.catalog.created
    first: dict[int, float] = {}
    for u, t in zip(te.user.tolist(), te.ts.tolist()):
        if u not in first:
            first[u] = t
    rel: dict[int, dict[int, set[int]]] = {u: {b: set() for b in buckets} for u in first}
    for u, it, t in zip(te.user.tolist(), te.item.tolist(), te.ts.tolist()):
        if created[it] > first[u]:
            continue
        age = t - created[it]
        for b in buckets:
            if age <= b * HOUR:
                rel[u][b].add(it)
    users = sorted(first, key=lambda u: (first[u], u))
    if max_users is not None and len(users) > max_users:
        rng = np.random.default_rng([ctx.seed, 13])
        pick = set(rng.choice(len(users), size=max_users, replace=False).tolist())
        users = [u for j, u in enumerate(users) if j in pick]
    return EvalPlan(users, [first[u] for u in users], [rel[u] for u in users])


def _walk(ctx: EvalContext, plan: EvalPlan):
    buf = EngagementBuffer(ctx.ripple_config.max_item_age, ctx.cold_age)
    ilog = ImpressionLog()
    hist: dict = {}
    rep = simgen.Replayer(ctx.world, buf, ilog, hist)
    state = UserState(buf, ilog, hist)
    for u, t, rel in zip(plan.users, plan.times, plan.relevant):
        rep.advance(t)
        yield u, t, rel, state


def run(ctx: EvalContext, variants, buckets=BUCKETS, k: int = 200,
        max_users: int | None = None) -> dict:
    """Single replay pass; returns ``{(variant, bucket): (mean recall, n_users)}``."""
    fns = {}
    for v in variants:
        if callable(v):
            fns[getattr(v, "__name__", repr(v))] = v
        elif v in RETRIEVERS:
            fns[v] = RETRIEVERS[v]
        else:
            raise ValueError(f"unknown variant {v!r}")
    plan = make_plan(ctx, buckets, max_users)
    acc = {(v, b): [0.0, 0] for v in fns for b in buckets}
    for u, t, rel, state in _walk(ctx, plan):
        for name, fn in fns.items():
            got = fn(ctx, state, u, t, k)
            for b in buckets:
                r = recall_at_k(got, rel[b], k)
                if r is not None:
                    a = acc[(name, b)]
                    a[0] += r
                    a[1] += 1
    return {key: ((s / n) if n else 0.0, n) for key, (s, n) in acc.items()}


def evaluate(variant, ctx: EvalContext, bucket: int, k: int = 200, max_users: int | None = None) -> dict:
    """One report row: mean recall@k of ``variant`` for one age bucket."""
    res = run(ctx, [variant], (bucket,), k, max_users)
    (name, b), (rec, n) = next(iter(res.items()))
    return {"variant": name, "bucket_hours": b, "recall_at_k": rec, "k": k, "num_users": n, "seed": ctx.seed}


# -------------------------------------------------------------- reports --

REPORT_HEADER = ("variant", "bucket_hours", "recall_at_k", "k", "num_users", "seed")
SWEEP_HEADER = ("K", "M", "recall_at_k", "seed")


@dataclass
class RecallReport:
    rows: list[dict]

    def value(self, variant: str, bucket: int) -> float:
        for r in self.rows:
            if r["variant"] == variant and r["bucket_hours"] == bucket:
                return r["recall_at_k"]
        raise KeyError((variant, bucket))

    def to_csv(self, path) -> None:
        _write_csv(path, REPORT_HEADER, self.rows)

    @classmethod
    def from_csv(cls, path) -> "RecallReport":
        with open(path, newline="") as fh:
            rows = [{"variant": r["variant"], "bucket_hours": int(r["bucket_hours"]),
                     "recall_at_k": float(r["recall_at_k"]), "k": int(r["k"]),
                     "num_users": int(r["num_users"]), "seed": int(r["seed"])} for r in csv.DictReader(fh)]
        return cls(rows)


def _write_csv(path, header, rows) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(r[h]) if isinstance(r[h], float) else r[h] for h in header])


def _report(ctx, res, k) -> RecallReport:
    rows = [{"variant": v, "bucket_hours": b, "recall_at_k": rec, "k": k, "num_users": n, "seed": ctx.seed}
            for (v, b), (rec, n) in res.items()]
    return RecallReport(rows)


def run_table1(ctx: EvalContext, k: int = 200, out=None, max_users: int | None = None,
               buckets=BUCKETS) -> RecallReport:
    """Baselines vs SocRipple across item-age buckets (6/12/24h by default)."""
    rep = _report(ctx, run(ctx, TABLE1_VARIANTS, tuple(buckets), k, max_users), k)
    if out:
        rep.to_csv(out)
    return rep


def run_table2(ctx: EvalContext, k: int = 200, out=None, max_users: int | None = None) -> RecallReport:
    """Neighbour-expansion ablation on the 24h bucket."""
    rep = _report(ctx, run(ctx, TABLE2_VARIANTS, (24,), k, max_users), k)
    if out:
        rep.to_csv(out)
    return rep


@dataclass
class SweepGrid:
    Ks: list[int]
    Ms: list[int]
    recall: dict  # (K, M) -> recall
    seed: int = 0

    def to_csv(self, path) -> None:
        rows = [{"K": K, "M": M, "recall_at_k": self.recall[(K, M)], "seed": self.seed}
                for K in self.Ks for M in self.Ms]
        _write_csv(path, SWEEP_HEADER, rows)

    @classmethod
    def from_csv(cls, path) -> "SweepGrid":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        rec = {(int(r["K"]), int(r["M"])): float(r["recall_at_k"]) for r in rows}
        Ks = sorted({K for K, _ in rec})
        Ms = sorted({M for _, M in rec})
        return cls(Ks, Ms, rec, int(rows[0]["seed"]) if rows else 0)

    def heatmap(self) -> str:
        """Plain-text rendering: rows K, columns M."""
        lines = ["K\\M " + " ".join(f"{M:>7d}" for M in self.Ms)]
        for K in self.Ks:
            lines.append(f"{K:>3d} " + " ".join(f"{self.recall[(K, M)]:7.4f}" for M in self.Ms))
        return "\n".join(lines)


def run_sweep(ctx: EvalContext, Ks=tuple(range(10, 101, 10)), Ms=tuple(range(5, 41, 5)), k: int = 200,
              bucket: int = 24, out=None, max_users: int | None = None) -> SweepGrid:
    """SocRipple recall@k for every (K, M) pair.

    Neighbours and their recent items are fetched once per user at the
    largest K and M; each cell ranks the matching prefixes.
    """
    Ks, Ms = sorted(Ks), sorted(Ms)
    plan = make_plan(ctx, (bucket,), max_users)
    w = ctx.world
    base = replace(ctx.ripple_config, N_out=k)
    acc = {(K, M): [0.0, 0] for K in Ks for M in Ms}
    for u, t, rel, state in _walk(ctx, plan):
        if not rel[bucket]:
            continue
        s1 = ripple.stage1_items(u, t, w.graph, w.catalog, state.log, base.max_item_age)
        nbrs = annindex.knn(ctx.index, u, Ks[-1])
        per = [ripple.neighbor_items(state.buffer, v, t, Ms[-1]) for v, _ in nbrs]
        for K in Ks:
            for M in Ms:
                cfg = replace(base, K=K, M=M)
                s2 = ripple.rank_from_neighbors(u, t, nbrs[:K], [x[:M] for x in per[:K]], state.log,
                                                w.catalog, cfg)
                got = [c.item for c in ripple.merge(s1, s2, k, cfg.stage1_first)]
                a = acc[(K, M)]
                a[0] += recall_at_k(got, rel[bucket], k)
                a[1] += 1
    grid = SweepGrid(list(Ks), list(Ms), {key: (s / n if n else 0.0) for key, (s, n) in acc.items()}, ctx.seed)
    if out:
        grid.to_csv(out)
    return grid
