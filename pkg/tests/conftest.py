import numpy as np
import pytest

from socripple.simgen import WorldConfig, gen_world

MICRO = dict(num_users=200, num_creators=20, num_items=150, d_latent=8, num_clusters=4,
             follows_per_user=3, random_exposures=5, neighbor_pool=10, max_exposures=200)


def micro_config(seed=0, **kw):
    return WorldConfig(seed=seed, **{**MICRO, **kw})


@pytest.fixture(scope="session")
def micro_world():
    return gen_world(micro_config(seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


class ServingFixture:
    """Hand-built serving world: 120 users (100..119 create), 100 items,
    clustered embeddings so each user's nearest neighbours share a cluster."""

    def __init__(self, seed=0):
        from socripple.annindex import build
        from socripple.catalog import Catalog
        from socripple.engagement import HOUR
        from socripple.socialgraph import SocialGraph

        rng = np.random.default_rng(seed)
        self.num_users = 120
        creators = np.arange(100, 120)
        edges = set()
        for u in range(self.num_users):
            for c in rng.choice(creators, 3, replace=False).tolist():
                if c != u:
                    edges.add((u, c))
        g = SocialGraph(self.num_users)
        for f, c in sorted(edges):
            g.add_edge(f, c)
        self.graph = g.freeze()
        self.now = 100 * HOUR
        created = self.now - rng.uniform(0, 30, 100) * HOUR
        self.catalog = Catalog(rng.choice(creators, 100), created, rng.normal(size=(100, 4)))
        centers = rng.normal(size=(6, 8))
        emb = centers[np.arange(self.num_users) % 6] + 0.3 * rng.normal(size=(self.num_users, 8))
        self.index = build({u: emb[u] for u in range(self.num_users)}, "exact")
        self.alt_index = build({u: rng.normal(size=8) for u in range(self.num_users)}, "exact")

    def service(self, **kw):
        from socripple.service import RetrievalService
        return RetrievalService(self.graph, self.catalog, self.index, **kw)

    def fresh_unfollowed_item(self, user, now):
        """An item 3-20h old whose creator ``user`` does not follow."""
        follows = set(self.graph.following(user))
        for it in np.argsort(-self.catalog.created).tolist():
            if self.catalog.creator[it] not in follows and self.catalog.creator[it] != user \
                    and 3 * 3600 < now - self.catalog.created[it] < 20 * 3600:
                return it
        raise AssertionError("fixture has no suitable item")


@pytest.fixture
def serving():
    return ServingFixture()
