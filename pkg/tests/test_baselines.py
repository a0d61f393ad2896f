import numpy as np
import pytest

from socripple import baselines
from socripple.baselines import (DropoutNetConfig, DropoutNetParams, ItemCoMatrix, content_knn_retrieve,
                                 dropoutnet_loss_grad, dropoutnet_retrieve, dropoutnet_train,
                                 item_knn_retrieve, sge_retrieve, social_neighbors, stage1_only_retrieve)
from socripple.catalog import Catalog
from socripple.engagement import DAY, HOUR, EngagementBuffer, EngagementEvent, EventLog, ImpressionLog, Signal
from socripple.socialgraph import SocialGraph
from socripple.twotower import ModelParams, batch_loss


def events_from(pairs):
    return EventLog.from_events([EngagementEvent(u, i, float(t), Signal.LIKE) for t, (u, i) in enumerate(pairs)])


# --------------------------------------------------------------- Item-KNN


def dense_oracle(pairs, n_users, n_items, history, n):
    x = np.zeros((n_users, n_items))
    for u, i in pairs:
        x[u, i] = 1.0
    norms = np.linalg.norm(x, axis=0)
    cos = np.zeros((n_items, n_items))
    for a in range(n_items):
        for b in range(n_items):
            if a != b and norms[a] > 0 and norms[b] > 0:
                cos[a, b] = x[:, a] @ x[:, b] / (norms[a] * norms[b])
    scores = {c: round(sum(cos[c, h] for h in set(history)), 12) for c in range(n_items) if c not in set(history)}
    ranked = sorted((c for c in scores if scores[c] > 0), key=lambda c: (-scores[c], c))
    return ranked[:n], cos


def test_item_knn_empty_history():
    co = ItemCoMatrix.build(events_from([(0, 0), (0, 1)]), 2, 3)
    assert item_knn_retrieve([], co, 10) == []


def test_identical_columns_cosine_one():
    co = ItemCoMatrix.build(events_from([(0, 0), (0, 1), (1, 0), (1, 1), (2, 2)]), 3, 3)
    assert co.cosine(0, 1) == pytest.approx(1.0)
    assert co.cosine(0, 0) == 0.0


def test_item_knn_matches_dense(rng):
    for trial in range(10):
        pairs = list({(int(u), int(i)) for u, i in zip(rng.integers(0, 20, 120), rng.integers(0, 30, 120))})
        co = ItemCoMatrix.build(events_from(pairs), 20, 30)
        hist = rng.choice(30, 4, replace=False).tolist()
        want, cos = dense_oracle(pairs, 20, 30, hist, 10)
        assert item_knn_retrieve(hist, co, 10) == want
        sim = co.sim.toarray()
        np.testing.assert_allclose(sim, cos, atol=1e-12)
        np.testing.assert_allclose(sim, sim.T)
        assert sim.min() >= 0 and sim.max() <= 1


def test_item_knn_excludes_history_and_shown():
    pairs = [(0, 0), (0, 1), (0, 2), (1, 0), (1, 2)]
    co = ItemCoMatrix.build(events_from(pairs), 2, 3)
    got = item_knn_retrieve([0], co, 5, exclude={2})
    assert 0 not in got and 2 not in got


# ------------------------------------------------------------ Content-KNN


def test_content_knn_profile_match(rng):
    content = rng.normal(size=(10, 4))
    got = content_knn_retrieve(content[3], content, 10, exclude={7})
    assert got[0] == 3 and 7 not in got


def test_content_knn_orthogonal_ties():
    content = np.eye(4)[[1, 2, 3]]
    got = content_knn_retrieve(np.array([1.0, 0, 0, 0]), content, 3)
    assert got == [0, 1, 2]


def test_content_knn_matches_scan(rng):
    content = rng.normal(size=(50, 6))
    prof = baselines.content_profile([1, 5, 9], content)
    np.testing.assert_allclose(prof, content[[1, 5, 9]].mean(axis=0))
    sims = [(float(prof @ c / np.linalg.norm(prof) / np.linalg.norm(c)), i) for i, c in enumerate(content)]
    want = [i for _, i in sorted(sims, key=lambda p: (-p[0], p[1]))][:12]
    assert content_knn_retrieve(prof, content, 12) == want
    assert content_knn_retrieve(None, content, 12) == []


# ------------------------------------------------------------- DropoutNet


def _dn_setup(rng, nu=6, ni=8, d=4, dc=3, **cfg):
    base = ModelParams(rng.normal(size=(nu, d)) * 0.5, rng.normal(size=(ni, d)) * 0.5)
    content = rng.normal(size=(ni, dc))
    return base, content, DropoutNetParams.init(base, content, DropoutNetConfig(**cfg))


def test_identity_fusion_reproduces_twotower(rng):
    base, content, p = _dn_setup(rng, cf_dropout_p=0.0, fusion_noise=0.0)
    users, items = np.array([0, 3, 5, 1]), np.array([2, 7, 2, 0])
    loss, _ = dropoutnet_loss_grad(p, users, items, np.ones(4))
    assert abs(loss - batch_loss(base, list(zip(users, items)))) < 1e-6
    v, _ = p.fuse(items, np.ones(4))
    np.testing.assert_allclose(v, base.item_table[items], atol=1e-12)


def test_full_dropout_zero_cf_gradient(rng):
    _, _, p = _dn_setup(rng, cf_dropout_p=1.0)
    _, g = dropoutnet_loss_grad(p, [0, 1, 2], [3, 4, 5], np.zeros(3))
    assert np.all(g["cf_rows"] == 0)
    base, content, _ = _dn_setup(rng)
    trained = dropoutnet_train(events_from([(0, 1), (2, 3), (4, 5), (1, 1)] * 5), content, base,
                               DropoutNetConfig(cf_dropout_p=1.0, epochs=2, batch_size=4))
    np.testing.assert_array_equal(trained.cf_table, base.item_table)


def _fd(fn, arr, h=1e-5):
    g = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + h
        up = fn()
        arr[idx] = old - h
        dn = fn()
        arr[idx] = old
        g[idx] = (up - dn) / (2 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_fusion_gradients_finite_differences(seed):
    rng = np.random.default_rng(seed)
    _, _, p = _dn_setup(rng, fusion_init="random")
    users = rng.integers(0, 6, 5)
    items = rng.integers(0, 8, 5)
    mask = (rng.uniform(size=5) > 0.4).astype(float)
    _, g = dropoutnet_loss_grad(p, users, items, mask)

    def loss():
        return dropoutnet_loss_grad(p, users, items, mask)[0]

    for name in ("W1", "b1", "W2", "b2"):
        fd = _fd(loss, getattr(p, name))
        if name == "b2":
            # a shared item-side offset cancels inside every softmax row
            np.testing.assert_allclose(g[name], 0.0, atol=1e-12)
            np.testing.assert_allclose(fd, 0.0, atol=1e-8)
        else:
            assert rel_err(g[name], fd) < 1e-4, name
    gu = np.zeros_like(p.user_table)
    np.add.at(gu, users, g["user_rows"])
    assert rel_err(gu, _fd(loss, p.user_table)) < 1e-4
    gc = np.zeros_like(p.cf_table)
    np.add.at(gc, items, g["cf_rows"])
    assert rel_err(gc, _fd(loss, p.cf_table)) < 1e-4


def test_dropoutnet_train_requires_content(rng):
    base, content, _ = _dn_setup(rng)
    with pytest.raises(ValueError):
        dropoutnet_train(events_from([(0, 1)]), content[:3], base)


def test_dropoutnet_deterministic(rng):
    base, content, _ = _dn_setup(rng)
    ev = events_from([(0, 1), (2, 3), (4, 5), (1, 1), (3, 2)] * 4)
    a = dropoutnet_train(ev, content, base, DropoutNetConfig(epochs=2, batch_size=4, seed=4))
    b = dropoutnet_train(ev, content, base, DropoutNetConfig(epochs=2, batch_size=4, seed=4))
    assert a.W1.tobytes() == b.W1.tobytes() and a.user_table.tobytes() == b.user_table.tobytes()


def test_dropoutnet_retrieve_bruteforce(rng):
    _, _, p = _dn_setup(rng, ni=12)
    p.warm = np.arange(12) < 6
    vecs = p.item_vectors()
    cold_vecs, _ = p.fuse(np.arange(6, 12), np.zeros(6))
    np.testing.assert_allclose(vecs[6:], cold_vecs)
    scores = vecs @ p.user_table[2]
    want = sorted(range(12), key=lambda i: (-scores[i], i))
    assert dropoutnet_retrieve(p, 2, 50) == want
    assert dropoutnet_retrieve(p, 2, 3, pool=[1, 4, 9]) == sorted([1, 4, 9], key=lambda i: (-scores[i], i))


def test_dropoutnet_planted_content_match():
    # group A items/users vs group B; cold item 8 has group-A content, cold item 9 group-B content
    rng = np.random.default_rng(0)
    d, dc = 4, 4
    a_dir, b_dir = np.eye(dc)[0] * 3, np.eye(dc)[1] * 3
    content = np.array([a_dir] * 4 + [b_dir] * 4 + [a_dir, b_dir]) + 0.05 * rng.normal(size=(10, dc))
    pairs = [(u, i) for u in range(4) for i in range(4)] + [(u, i) for u in range(4, 8) for i in range(4, 8)]
    base = ModelParams.init(8, 10, d, seed=1)
    p = dropoutnet_train(events_from(pairs * 10), content, base,
                         DropoutNetConfig(epochs=30, batch_size=8, learning_rate=0.05, seed=2))
    assert not p.warm[8] and not p.warm[9]
    ranked = dropoutnet_retrieve(p, 0, 10, pool=[8, 9])
    assert ranked == [8, 9]
    assert dropoutnet_retrieve(p, 5, 10, pool=[8, 9]) == [9, 8]


# ------------------------------------------------------- social ablations


def _social_fixture(rng, n_users=25, n_items=40):
    now = 2 * DAY
    edges = {(int(a), int(b)) for a, b in rng.integers(0, n_users, (70, 2)) if a != b}
    g = SocialGraph.from_edges(edges)
    created = now - rng.integers(0, 36, n_items) * HOUR
    cat = Catalog(rng.integers(0, n_users, n_items), created)
    buf = EngagementBuffer()
    raw = []
    for _ in range(200):
        u, it = int(rng.integers(n_users)), int(rng.integers(n_items))
        at = float(min(now, created[it] + rng.integers(0, 30) * HOUR))
        buf.record(EngagementEvent(u, it, at), float(created[it]))
        raw.append((u, it, at))
    log = ImpressionLog()
    shown = {(int(u), int(i)) for u, i in zip(rng.integers(0, n_users, 60), rng.integers(0, n_items, 60))}
    for u, i in shown:
        log.mark_shown(u, i, 0.0)
    return now, g, cat, buf, raw, log, shown


def bfs_oracle(edges, user, hops):
    dist = {user: 0}
    frontier = [user]
    while frontier:
        nxt = []
        for u in frontier:
            for f, c in edges:
                if f == u and c not in dist and dist[u] < hops:
                    dist[c] = dist[u] + 1
                    nxt.append(c)
        frontier = nxt
    return sorted(v for v in dist if v != user)


@pytest.mark.parametrize("seed", range(8))
def test_sge_matches_bfs_oracle(seed):
    rng = np.random.default_rng(seed)
    now, g, cat, buf, raw, log, shown = _social_fixture(rng)
    for hops in (1, 2):
        for user in range(25):
            nbrs = bfs_oracle(g.edges(), user, hops)
            assert social_neighbors(user, g, hops) == nbrs
            sup = {}
            for v in nbrs:
                for it in {it for u, it, at in raw if u == v and now - at <= DAY and now - cat.created[it] <= DAY}:
                    sup[it] = sup.get(it, 0) + 1
            want = [it for it in sup if (user, it) not in shown and cat.creator[it] != user]
            want.sort(key=lambda it: (-sup[it], -cat.created[it], it))
            assert sge_retrieve(user, g, buf, log, now, cat, hops, 200) == want


def test_sge_trivial():
    g = SocialGraph.from_edges([(0, 1)])
    cat = Catalog([2], [100.0])
    buf = EngagementBuffer()
    assert sge_retrieve(5, g, buf, ImpressionLog(), 200.0, cat) == []
    buf.record(EngagementEvent(1, 0, 150.0), 100.0)
    assert sge_retrieve(0, g, buf, ImpressionLog(), 200.0, cat) == [0]
    with pytest.raises(ValueError):
        social_neighbors(0, g, 0)


def test_stage1_only():
    g = SocialGraph.from_edges([(0, 1), (0, 2)])
    cat = Catalog([1, 1, 3, 1], [10.0, 20.0, 30.0, -2 * DAY])
    assert stage1_only_retrieve(5, cat, g, ImpressionLog(), 40.0) == []
    assert stage1_only_retrieve(0, cat, g, ImpressionLog(), 40.0) == [1, 0]


@pytest.mark.parametrize("seed", range(5))
def test_stage1_only_matches_filter(seed):
    rng = np.random.default_rng(seed)
    now, g, cat, buf, raw, log, shown = _social_fixture(rng)
    for user in range(25):
        follows = set(g.following(user))
        want = [it for it in range(len(cat)) if cat.creator[it] in follows
                and 0 <= now - cat.created[it] <= DAY and (user, it) not in shown]
        want.sort(key=lambda it: (-cat.created[it], it))
        assert stage1_only_retrieve(user, cat, g, log, now, 200) == want
