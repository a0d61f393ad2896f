import numpy as np
import pytest

from socripple.engagement import DAY, DEFAULT_POSITIVE, EngagementBuffer, ImpressionLog
from socripple.simgen import ConfigError, Replayer, World, WorldConfig, gen_world, replay, split

from conftest import micro_config


def perm_pvalue(a, b, rng, n_perm=2000):
    pooled = np.concatenate([a, b])
    obs = abs(a.mean() - b.mean())
    hits = 0
    for _ in range(n_perm):
        rng.shuffle(pooled)
        hits += abs(pooled[:a.size].mean() - pooled[a.size:].mean()) >= obs
    return (hits + 1) / (n_perm + 1)


def follower_and_random_cos(world, rng):
    lat = world.user_latents
    edges = np.array(world.graph.edges())
    fol = np.einsum("ij,ij->i", lat[edges[:, 0]], lat[edges[:, 1]])
    u = rng.integers(0, world.num_users, edges.shape[0])
    c = world.creators[rng.integers(0, world.creators.size, edges.shape[0])]
    keep = u != c
    rnd = np.einsum("ij,ij->i", lat[u[keep]], lat[c[keep]])
    return fol, rnd


def test_tiny_world_referential_integrity():
    w = gen_world(WorldConfig(num_users=2, num_creators=1, num_items=1, num_clusters=1,
                              follows_per_user=1, neighbor_pool=1, random_exposures=3, seed=1))
    assert set(w.events.user.tolist()) <= {0, 1}
    assert set(w.events.item.tolist()) <= {0}


def test_referential_integrity(micro_world):
    w = micro_world
    ev = w.events
    assert ev.user.min() >= 0 and ev.user.max() < w.num_users
    assert ev.item.min() >= 0 and ev.item.max() < len(w.catalog)
    assert np.all(np.isin(w.catalog.creator, w.creators))
    assert np.all((ev.ts >= 0) & (ev.ts <= w.config.horizon))
    assert np.all(ev.ts >= w.catalog.created[ev.item])
    assert np.all(np.diff(ev.ts) >= 0)
    for f, c in w.graph.edges():
        assert c in set(w.creators.tolist()) and f != c


def test_deterministic():
    a, b = gen_world(micro_config(seed=9)), gen_world(micro_config(seed=9))
    assert a.graph.edges() == b.graph.edges()
    for x, y in [(a.events.user, b.events.user), (a.events.ts, b.events.ts), (a.events.signal, b.events.signal),
                 (a.user_latents, b.user_latents), (a.catalog.content, b.catalog.content)]:
        assert x.tobytes() == y.tobytes()
    c = gen_world(micro_config(seed=10))
    assert c.events.ts.tobytes() != a.events.ts.tobytes()


def test_save_load_roundtrip(tmp_path, micro_world):
    micro_world.save(tmp_path / "w")
    back = World.load(tmp_path / "w")
    assert back.config == micro_world.config
    assert back.graph.edges() == micro_world.graph.edges()
    np.testing.assert_array_equal(back.events.ts, micro_world.events.ts)
    np.testing.assert_array_equal(back.catalog.content, micro_world.catalog.content)
    np.testing.assert_array_equal(back.user_latents, micro_world.user_latents)
    with pytest.raises(FileNotFoundError):
        World.load(tmp_path / "missing")


@pytest.mark.parametrize("bad", [dict(num_users=0), dict(num_creators=10_001), dict(split_days=8.0),
                                 dict(base_rate=1.5), dict(homophily=-1.0)])
def test_invalid_config(bad):
    with pytest.raises(ConfigError):
        gen_world(WorldConfig(**bad))


def test_from_dict_rejects_unknown():
    with pytest.raises(ConfigError):
        WorldConfig.from_dict({"nope": 1})
    assert WorldConfig.from_dict({"num_users": "50"}).num_users == 50


def test_homophily_zero_indistinguishable():
    pvals = []
    for seed in range(10):
        w = gen_world(micro_config(seed=seed, homophily=0.0, num_items=10, random_exposures=1))
        rng = np.random.default_rng([seed, 99])
        fol, rnd = follower_and_random_cos(w, rng)
        pvals.append(perm_pvalue(fol, rnd, rng))
    assert min(pvals) > 0.01, pvals


def test_homophily_plants_structure():
    for seed in range(3):
        w = gen_world(micro_config(seed=seed, num_items=10, random_exposures=1))
        fol, rnd = follower_and_random_cos(w, np.random.default_rng(seed))
        assert fol.mean() > rnd.mean() + 0.1


def test_positive_rate_monotone(micro_world):
    w = micro_world
    ev = w.events
    cos = np.einsum("ij,ij->i", w.user_latents[ev.user], w.item_latents[ev.item])
    pos = ev.positive_mask(DEFAULT_POSITIVE)
    edges = np.quantile(cos, [0, 0.25, 0.5, 0.75, 1.0])
    rates = [pos[(cos >= lo) & (cos <= hi)].mean() for lo, hi in zip(edges[:-1], edges[1:])]
    assert all(a < b for a, b in zip(rates, rates[1:])), rates


def test_split_partition(micro_world):
    w = micro_world
    t = w.config.split_time
    train, test = split(w)
    ev = w.events
    assert len(train) == int((ev.ts < t).sum())
    assert np.all(train.ts < t) and np.all(test.ts >= t)
    age = ev.ts - w.catalog.created[ev.item]
    want = (ev.ts >= t) & ev.positive_mask(DEFAULT_POSITIVE) & (age <= DAY)
    assert len(test) == int(want.sum())
    # positives at/after the split are exactly the test set plus the over-age ones
    n_pos_after = int(((ev.ts >= t) & ev.positive_mask(DEFAULT_POSITIVE)).sum())
    assert len(test) + int(((ev.ts >= t) & ev.positive_mask(DEFAULT_POSITIVE) & (age > DAY)).sum()) == n_pos_after
    assert len(train) + int((ev.ts >= t).sum()) == len(ev)


def test_split_extremes(micro_world):
    train, test = split(micro_world, split_time=micro_world.config.horizon + 1)
    assert len(test) == 0 and len(train) == len(micro_world.events)
    train, test = split(micro_world, split_time=0.0)
    assert len(train) == 0


def test_replay_zero_is_empty(micro_world):
    buf, log = EngagementBuffer(), ImpressionLog()
    replay(micro_world, 0.0, buf, log)
    assert buf.users() == [] and log.dump() == []


def _window_oracle(world, until, now):
    ev = world.events
    pos = ev.positive_mask(DEFAULT_POSITIVE)
    out = {}
    for u, i, t in zip(ev.user[pos].tolist(), ev.item[pos].tolist(), ev.ts[pos].tolist()):
        if t < until and now - t <= DAY and now - world.catalog.created[i] <= DAY and t <= now:
            out.setdefault(u, set()).add((i, t))
    return out


@pytest.mark.parametrize("prune", [False, True])
def test_replay_horizon_matches_filter(micro_world, prune):
    w = micro_world
    until = w.config.horizon + 1.0
    buf, log = EngagementBuffer(), ImpressionLog()
    Replayer(w, buf, log, prune=prune).advance(until)
    # pruned catch-up only promises answers at or after ``until``
    probes = (until, until + 0.3 * DAY) if prune else (until, until - 0.5 * DAY, until + 0.3 * DAY)
    for now in probes:
        want = _window_oracle(w, until, now)
        got = {u: buf.recent_items(u, now) for u in range(w.num_users)}
        got = {u: s for u, s in got.items() if s}
        assert got == want
    shown = {(u, i) for u, i in zip(w.events.user.tolist(), w.events.item.tolist())}
    assert {(u, i) for u, i, _ in log.dump()} == shown


def test_replay_incremental_equals_bulk(micro_world):
    w = micro_world
    cuts = np.linspace(0, w.config.horizon, 13)[1:]
    a_buf, a_log, b_buf, b_log = EngagementBuffer(), ImpressionLog(), EngagementBuffer(), ImpressionLog()
    ra = Replayer(w, a_buf, a_log)
    for t in cuts:
        ra.advance(float(t))
        b_buf, b_log = EngagementBuffer(), ImpressionLog()
        replay(w, float(t), b_buf, b_log)
        for u in range(w.num_users):
            assert a_buf.recent_items(u, float(t)) == b_buf.recent_items(u, float(t))
        assert a_log.dump() == b_log.dump()
    with pytest.raises(ValueError):
        ra.advance(0.0)


def test_replay_deterministic(micro_world):
    states = []
    for _ in range(2):
        buf, log = EngagementBuffer(), ImpressionLog()
        replay(micro_world, micro_world.config.split_time, buf, log)
        states.append((buf.dump(), log.dump()))
    assert states[0] == states[1]
