"""Synthetic world: follower graph, latent interests, timed uploads, engagements.

Users live around a handful of interest clusters. Creators are a subset of
users; each user follows creators by preferential attachment tilted toward
latent similarity (homophily). Items inherit their creator's latent plus
noise. Engagement is simulated per item as organic exposure through three
channels (followers of the creator shortly after upload, a few random
users, and latent neighbours of each positive engager) with a positive
outcome probability ``base_rate * sigmoid(scale * cos(user, item))``.
No retrieval policy under evaluation feeds back into exposure.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import kernels
from .catalog import Catalog
from .engagement import DAY, HOUR, DEFAULT_POSITIVE, EngagementBuffer, EngagementEvent, EventLog, \
    ImpressionLog, Signal
from .socialgraph import SocialGraph, load_edges
from .twotower import load_embeddings, save_embeddings


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class WorldConfig:
    num_users: int = 10_000
    num_creators: int = 500
    num_items: int = 5_000
    d_latent: int = 16
    num_clusters: int = 20
    cluster_spread: float = 0.6
    follows_per_user: int = 5
    attachment_exponent: float = 1.0
    homophily: float = 4.0
    item_noise: float = 0.5
    content_noise: float = 1.0
    p_follow: float = 0.8
    follow_delay_hours: float = 2.0
    random_exposures: int = 20
    random_window_hours: float = 24.0
    ripple_fanout: int = 1
    ripple_delay_hours: float = 3.0
    neighbor_pool: int = 30
    max_exposures: int = 1000
    base_rate: float = 0.6
    affinity_scale: float = 4.0
    horizon_days: float = 7.0
    split_days: float = 6.0
    seed: int = 0

    @property
    def horizon(self) -> float:
        return self.horizon_days * DAY

    @property
    def split_time(self) -> float:
        return self.split_days * DAY

    def validate(self) -> None:
        for name in ("num_users", "num_creators", "num_items", "d_latent", "num_clusters",
                     "follows_per_user", "neighbor_pool", "max_exposures"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.num_creators > self.num_users:
            raise ConfigError("num_creators cannot exceed num_users")
        if not 0 < self.horizon_days:
            raise ConfigError("horizon must be positive")
        if not 0 <= self.split_days <= self.horizon_days:
            raise ConfigError("split time must lie within the horizon")
        if not (0 <= self.p_follow <= 1 and 0 <= self.base_rate <= 1):
            raise ConfigError("probabilities must lie in [0, 1]")
        for name in ("homophily", "attachment_exponent", "random_exposures", "ripple_fanout",
                     "item_noise", "content_noise", "cluster_spread"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        for name in ("follow_delay_hours", "random_window_hours", "ripple_delay_hours"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "WorldConfig":
        known = {f.name: f.type for f in fields(cls)}
        bad = set(d) - set(known)
        if bad:
            raise ConfigError(f"unknown world config keys: {sorted(bad)}")
        base = cls()
        return cls(**{k: type(getattr(base, k))(v) for k, v in d.items()})


@dataclass
class World:
    config: WorldConfig
    graph: SocialGraph
    user_latents: np.ndarray
    creators: np.ndarray
    catalog: Catalog
    item_latents: np.ndarray
    events: EventLog
    source: np.ndarray | None = None  # exposure channel per event, diagnostics only

    @property
    def num_users(self) -> int:
        return int(self.user_latents.shape[0])

    def save(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "world.json").write_text(json.dumps(asdict(self.config), indent=1, sort_keys=True) + "\n")
        self.graph.save(out / "edges.txt")
        self.catalog.save_jsonl(out / "catalog.jsonl")
        self.events.save_jsonl(out / "events.jsonl")
        save_embeddings(out / "content.txt", dict(enumerate(self.catalog.content)))
        save_embeddings(out / "user_latents.txt", dict(enumerate(self.user_latents)))
        save_embeddings(out / "item_latents.txt", dict(enumerate(self.item_latents)))
        np.savetxt(out / "creators.txt", self.creators, fmt="%d")
        return out

    @classmethod
    def load(cls, world_dir) -> "World":
        p = Path(world_dir)
        if not (p / "world.json").exists():
            raise FileNotFoundError(f"world not found in {p}")
        cfg = WorldConfig.from_dict(json.loads((p / "world.json").read_text()))
        graph = load_edges(p / "edges.txt", cfg.num_users)
        cat = Catalog.load_jsonl(p / "catalog.jsonl")
        content = load_embeddings(p / "content.txt")
        cat.content = np.array([content[i] for i in range(len(cat))])
        ul = load_embeddings(p / "user_latents.txt")
        il = load_embeddings(p / "item_latents.txt")
        creators = np.atleast_1d(np.loadtxt(p / "creators.txt", dtype=np.int64))
        events = EventLog.load_jsonl(p / "events.jsonl")
        return cls(cfg, graph, np.array([ul[i] for i in range(len(ul))]), creators, cat,
                   np.array([il[i] for i in range(len(il))]), events)


def _unit(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def _latent_neighbors(latents: np.ndarray, k: int) -> np.ndarray:
    n = latents.shape[0]
    k = min(k, n - 1) if n > 1 else 1
    out = np.empty((n, k), np.int64)
    for lo in range(0, n, 1024):
        sims = latents[lo:lo + 1024] @ latents.T
        rows = np.arange(sims.shape[0])
        sims[rows, lo + rows] = -np.inf
        if n == 1:
            out[lo:lo + 1] = 0
            continue
        part = np.argpartition(-sims, k - 1, axis=1)[:, :k]
        ps = np.take_along_axis(sims, part, axis=1)
        order = np.lexsort((part, -ps), axis=1)
        out[lo:lo + 1024] = np.take_along_axis(part, order, axis=1)
    return out


def _stream_transforms(uniforms: np.ndarray, base_rate: float) -> tuple[np.ndarray, np.ndarray]:
    expo = -np.log1p(-uniforms)
    with np.errstate(divide="ignore", invalid="ignore"):
        logit = np.log(base_rate / uniforms - 1.0)
    # u >= base_rate can never fall under base_rate * sigmoid(.)
    logit[uniforms >= base_rate] = -np.inf
    return expo, logit


def _gen_graph(cfg: WorldConfig, rng, user_latents, creators) -> SocialGraph:
    g = SocialGraph(cfg.num_users)
    indeg = np.zeros(creators.shape[0])
    cos = user_latents @ user_latents[creators].T
    for u in rng.permutation(cfg.num_users).tolist():
        w = (indeg + 1.0) ** cfg.attachment_exponent * np.exp(cfg.homophily * (cos[u] - 1.0))
        w[creators == u] = 0.0
        m = min(cfg.follows_per_user, int(np.count_nonzero(w)))
        if m == 0:
            continue
        picks = rng.choice(creators.shape[0], size=m, replace=False, p=w / w.sum())
        for j in picks.tolist():
            g.add_edge(u, int(creators[j]))
        indeg[picks] += 1
    return g.freeze()


def gen_world(config: WorldConfig = WorldConfig()) -> World:
    """Generate a world; identical configs give bit-identical worlds."""
    config.validate()
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    d = cfg.d_latent
    centers = _unit(rng.normal(size=(cfg.num_clusters, d)))
    membership = rng.integers(0, cfg.num_clusters, cfg.num_users)
    user_latents = _unit(centers[membership] + cfg.cluster_spread * rng.normal(size=(cfg.num_users, d)) / np.sqrt(d))
    creators = np.sort(rng.choice(cfg.num_users, size=cfg.num_creators, replace=False)).astype(np.int64)
    graph = _gen_graph(cfg, rng, user_latents, creators)

    item_creator = creators[rng.integers(0, cfg.num_creators, cfg.num_items)]
    item_created = np.sort(rng.uniform(0.0, cfg.horizon, cfg.num_items))
    base = user_latents[item_creator]
    item_latents = _unit(base + cfg.item_noise * rng.normal(size=(cfg.num_items, d)) / np.sqrt(d))
    content = base + cfg.content_noise * rng.normal(size=(cfg.num_items, d)) / np.sqrt(d)
    catalog = Catalog(item_creator, item_created, content)

    fol_ptr, fol_idx = graph.follower_csr(cfg.num_users)
    nbrs = _latent_neighbors(user_latents, cfg.neighbor_pool)
    n_uni = max(1 << 16, int(cfg.num_items * (2 * fol_idx.size / max(cfg.num_creators, 1)
                                               + 2 * cfg.random_exposures + 200)))
    capacity = max(1024, n_uni // 4)
    sim_rng = np.random.default_rng([cfg.seed, 7])
    while True:
        uniforms = sim_rng.uniform(size=n_uni)
        expo, logit = _stream_transforms(uniforms, cfg.base_rate)
        res = kernels.diffuse(
            item_created, item_creator, item_latents, user_latents, fol_ptr, fol_idx, nbrs,
            float(cfg.horizon), float(cfg.p_follow), float(cfg.follow_delay_hours * HOUR),
            int(cfg.random_exposures), float(cfg.random_window_hours * HOUR),
            int(cfg.ripple_fanout), float(cfg.ripple_delay_hours * HOUR),
            float(cfg.affinity_scale), int(cfg.max_exposures),
            uniforms, expo, logit, capacity,
        )
        n_out = res[5]
        if n_out == -1:
            n_uni *= 2
        elif n_out == -2:
            capacity *= 2
        else:
            break
        sim_rng = np.random.default_rng([cfg.seed, 7])
    users, items, times, pos, src = (a[:n_out] for a in res[:5])
    sig_u = np.random.default_rng([cfg.seed, 11]).uniform(size=n_out)
    signal = np.where(pos == 1,
                      np.where(sig_u < 0.5, int(Signal.LIKE), int(Signal.LONG_VIEW)),
                      np.where(sig_u < 0.6, int(Signal.VIEW), int(Signal.SKIP)))
    order = np.lexsort((items, users, times))
    events = EventLog(users[order], items[order], times[order], signal[order])
    return World(cfg, graph, user_latents, creators, catalog, item_latents, events, src[order])


def split(world: World, split_time: float | None = None, cold_age: float = DAY,
          positive=DEFAULT_POSITIVE) -> tuple[EventLog, EventLog]:
    """Temporal holdout.

    Train is every event strictly before ``split_time``. Test is every
    positive event at or after it whose item was at most ``cold_age`` old
    when engaged.
    """
    t = world.config.split_time if split_time is None else float(split_time)
    ev = world.events
    train = ev.take(np.flatnonzero(ev.ts < t))
    age = ev.ts - world.catalog.created[ev.item]
    test = ev.take(np.flatnonzero((ev.ts >= t) & ev.positive_mask(positive) & (age <= cold_age)))
    return train, test


class Replayer:
    """Feeds the event log into a buffer and impression log in time order.

    ``advance(until)`` applies every event with ``ts < until``; ``until`` must
    not decrease between calls. With ``prune`` set, large catch-up steps skip
    buffer entries that are already invisible at ``until``, which leaves every
    query answer at ``now >= until`` unchanged.
    """

    def __init__(self, world: World, buffer: EngagementBuffer, log: ImpressionLog,
                 history: dict | None = None, prune: bool = True):
        self.world = world
        self.prune = prune
        self.buffer = buffer
        self.log = log
        self.history = history
        self._pos = 0
        self._until = -np.inf
        ev = world.events
        self._users = ev.user.tolist()
        self._items = ev.item.tolist()
        self._ts = ev.ts.tolist()
        self._sig = ev.signal.tolist()
        self._positive = {int(s) for s in buffer.positive}
        self._created = world.catalog.created.tolist()

    def advance(self, until: float) -> None:
        if until < self._until:
            raise ValueError("replay cannot move backwards")
        self._until = until
        end = int(np.searchsorted(self.world.events.ts, until, side="left"))
        if end - self._pos > 4096:
            self._bulk(end)
            return
        for j in range(self._pos, end):
            u, i, t = self._users[j], self._items[j], self._ts[j]
            self.log.mark_shown(u, i, t)
            if self._sig[j] in self._positive:
                self.buffer.record(EngagementEvent(u, i, t, Signal(self._sig[j])), self._created[i])
                if self.history is not None:
                    self.history.setdefault(u, []).append(i)
        self._pos = max(self._pos, end)

    def _bulk(self, end: int) -> None:
        # entries already outside the buffer window at ``until`` can never be
        # visible again, so they are skipped exactly as prune would drop them
        ev = self.world.events
        sl = slice(self._pos, end)
        self.log.bulk_mark(ev.user[sl], ev.item[sl], ev.ts[sl])
        pos = np.isin(ev.signal[sl], list(self._positive))
        users, items, ts = ev.user[sl][pos], ev.item[sl][pos], ev.ts[sl][pos]
        if self.history is not None:
            for u, i in zip(users.tolist(), items.tolist()):
                self.history.setdefault(u, []).append(i)
        created = self.world.catalog.created[items]
        b = self.buffer
        live = np.ones(ts.shape, bool)
        if self.prune:
            live = (ts >= self._until - b.window) & (created >= self._until - b.max_item_age)
        b.bulk_load(users[live], items[live], ts[live], created[live])
        self._pos = end


def replay(world: World, until: float, buffer: EngagementBuffer, log: ImpressionLog) -> None:
    """Load every event with ``ts < until`` into ``buffer`` (positives) and ``log`` (all)."""
    Replayer(world, buffer, log, prune=False).advance(until)
