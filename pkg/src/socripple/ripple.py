"""Two-stage cold-start retrieval.

Stage 1 pushes a fresh item to its creator's followers. Stage 2 serves a
requesting user the fresh items that their embedding-space neighbours
engaged with recently, ranked by a weighted score of neighbour support,
neighbour similarity and freshness.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

from . import annindex
from .catalog import Catalog, ColdItem
from .engagement import DAY, HOUR, EngagementBuffer, ImpressionLog
from .socialgraph import SocialGraph


@dataclass(frozen=True)
class ScoreWeights:
    w_support: float = 1.0
    w_similarity: float = 1.0
    w_freshness: float = 0.5
    tau: float = 12.0  # hours

    def validate(self) -> None:
        ws = (self.w_support, self.w_similarity, self.w_freshness)
        if min(ws) < 0 or max(ws) <= 0:
            raise ValueError("weights must be non-negative with at least one positive")
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    def scaled(self, c: float) -> "ScoreWeights":
        return ScoreWeights(self.w_support * c, self.w_similarity * c, self.w_freshness * c, self.tau)


@dataclass(frozen=True)
class RippleConfig:
    K: int = 70
    M: int = 20
    N_out: int = 200
    weights: ScoreWeights = field(default_factory=ScoreWeights)
    max_item_age: float = DAY
    similarity_agg: str = "mean"  # or "max"
    stage1_first: bool = True

    def validate(self) -> None:
        if min(self.K, self.M, self.N_out) < 1:
            raise ValueError("K, M and N_out must be >= 1")
        if self.similarity_agg not in ("mean", "max"):
            raise ValueError(f"unknown similarity_agg {self.similarity_agg!r}")
        self.weights.validate()


@dataclass(frozen=True)
class CandidateFeatures:
    item: int
    support: int
    mean_similarity: float
    age_hours: float

    def freshness(self, tau: float) -> float:
        return math.exp(-self.age_hours / tau)


class Candidate(NamedTuple):
    item: int
    score: float | None
    source: str  # "stage1" | "stage2"


def stage1_targets(item: ColdItem, graph: SocialGraph) -> list[int]:
    """Users who should see ``item`` first: its creator's followers."""
    return graph.followers(item.creator)


def score_candidate(features: CandidateFeatures, K: int, weights: ScoreWeights) -> float:
    if features.support > K:
        raise ValueError(f"support {features.support} exceeds K={K}")
    return (weights.w_support * features.support / K
            + weights.w_similarity * features.mean_similarity
            + weights.w_freshness * features.freshness(weights.tau))


def neighbor_items(buffer: EngagementBuffer, neighbor: int, now: float, M: int) -> list[int]:
    """Up to ``M`` distinct items the neighbour engaged with, most recent first."""
    out: list[int] = []
    seen = set()
    for at, item, _ in reversed(buffer.recent_entries(neighbor, now)):
        if item not in seen:
            seen.add(item)
            out.append(item)
            if len(out) == M:
                break
    return out


def rank_from_neighbors(user: int, now: float, neighbors, items_per_neighbor, log: ImpressionLog,
                        catalog: Catalog, config: RippleConfig) -> list[tuple[int, float]]:
    """Aggregate, filter and score; ``neighbors`` are ``(user, sim)`` pairs
    aligned with ``items_per_neighbor``."""
    support: dict[int, int] = {}
    sim_acc: dict[int, float] = {}
    use_max = config.similarity_agg == "max"
    for (_, sim), items in zip(neighbors, items_per_neighbor):
        for it in items:
            if it in support:
                support[it] += 1
                sim_acc[it] = max(sim_acc[it], sim) if use_max else sim_acc[it] + sim
            else:
                support[it] = 1
                sim_acc[it] = sim
    created = catalog.created
    creator = catalog.creator
    w = config.weights
    scored = []
    for it, n in support.items():
        if creator[it] == user or log.was_shown(user, it):
            continue
        age = now - created[it]
        if age < 0 or age > config.max_item_age:
            continue
        feats = CandidateFeatures(it, n, sim_acc[it] if use_max else sim_acc[it] / n, age / HOUR)
        scored.append((it, score_candidate(feats, config.K, w)))
    scored.sort(key=lambda p: (-p[1], p[0]))
    return scored[: config.N_out]


def stage2_candidates(user: int, now: float, index: annindex.UserIndex, buffer: EngagementBuffer,
                      log: ImpressionLog, catalog: Catalog,
                      config: RippleConfig = RippleConfig()) -> list[tuple[int, float]]:
    """Neighbour expansion for one feed request; ``(item, score)`` best first."""
    nbrs = annindex.knn(index, user, config.K)
    per = [neighbor_items(buffer, v, now, config.M) for v, _ in nbrs]
    return rank_from_neighbors(user, now, nbrs, per, log, catalog, config)


def stage1_items(user: int, now: float, graph: SocialGraph, catalog: Catalog, log: ImpressionLog,
                 max_item_age: float = DAY) -> list[int]:
    """Fresh unseen items from creators ``user`` follows, newest first."""
    by_creator = catalog.by_creator()
    out = []
    for c in graph.following(user):
        for it in by_creator.get(c, ()):
            age = now - catalog.created[it]
            if 0 <= age <= max_item_age and not log.was_shown(user, it):
                out.append(it)
    out.sort(key=lambda it: (-catalog.created[it], it))
    return out


def merge(stage1: list[int], stage2: list[tuple[int, float]], n: int,
          stage1_first: bool = True) -> list[Candidate]:
    s1 = [Candidate(it, None, "stage1") for it in stage1]
    s2 = [Candidate(it, sc, "stage2") for it, sc in stage2]
    ordered = s1 + s2 if stage1_first else s2 + s1
    out, seen = [], set()
    for c in ordered:
        if c.item not in seen:
            seen.add(c.item)
            out.append(c)
            if len(out) == n:
                break
    return out


def retrieve_scored(user: int, now: float, graph: SocialGraph, catalog: Catalog,
                    index: annindex.UserIndex, buffer: EngagementBuffer, log: ImpressionLog,
                    config: RippleConfig = RippleConfig()) -> list[Candidate]:
    s1 = stage1_items(user, now, graph, catalog, log, config.max_item_age)
    s2 = stage2_candidates(user, now, index, buffer, log, catalog, config) if user in index else []
    return merge(s1, s2, config.N_out, config.stage1_first)


def retrieve(user: int, now: float, graph: SocialGraph, catalog: Catalog, index: annindex.UserIndex,
             buffer: EngagementBuffer, log: ImpressionLog, config: RippleConfig = RippleConfig()) -> list[int]:
    """Merged cold-start candidate list: Stage 1 items first, then Stage 2."""
    return [c.item for c in retrieve_scored(user, now, graph, catalog, index, buffer, log, config)]
