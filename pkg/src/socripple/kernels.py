"""Hot numeric kernels.

Each kernel exists twice: a compiled loop version (``*_loop``, jitted with
numba unless ``SOCRIPPLE_DISABLE_NUMBA`` is set) and a vectorised numpy
version (``*_numpy``). The public name dispatches to whichever path is
active. Both paths consume identical inputs and random streams, so they
agree up to floating-point summation order.
"""
import heapq

import numpy as np

from ._accel import HAVE_NUMBA, njit

# --------------------------------------------------------------------------
# In-batch sampled softmax: loss and gradient for one mini-batch.
# scores[r, c] = e_u[r] . e_i[c]; row r's positive sits on the diagonal.
# --------------------------------------------------------------------------


def inbatch_loss_grad_numpy(eu, ei):
    scores = eu @ ei.T
    m = scores.max(axis=1, keepdims=True)
    ex = np.exp(scores - m)
    z = ex.sum(axis=1, keepdims=True)
    p = ex / z
    loss = float(np.sum(np.log(z[:, 0]) + m[:, 0] - np.diag(scores)))
    coef = p
    coef[np.diag_indices_from(coef)] -= 1.0
    return loss, coef @ ei, coef.T @ eu


@njit(cache=True)
def inbatch_loss_grad_loop(eu, ei):
    b = eu.shape[0]
    scores = eu @ ei.T
    coef = np.empty((b, b))
    loss = 0.0
    for r in range(b):
        m = -np.inf
        for c in range(b):
            if scores[r, c] > m:
                m = scores[r, c]
        z = 0.0
        for c in range(b):
            coef[r, c] = np.exp(scores[r, c] - m)
            z += coef[r, c]
        loss += np.log(z) + m - scores[r, r]
        for c in range(b):
            coef[r, c] /= z
        coef[r, r] -= 1.0
    return loss, coef @ ei, coef.T @ eu


def _epoch_numpy(user_table, item_table, users, items, order, batch_size, lr):
    n = order.shape[0]
    nb = (n + batch_size - 1) // batch_size
    losses = np.empty(nb)
    for b in range(nb):
        sel = order[b * batch_size:(b + 1) * batch_size]
        u = users[sel]
        i = items[sel]
        loss, gu, gi = inbatch_loss_grad_numpy(user_table[u], item_table[i])
        np.add.at(user_table, u, -lr * gu)
        np.add.at(item_table, i, -lr * gi)
        losses[b] = loss
    return losses


@njit(cache=True)
def _epoch_loop(user_table, item_table, users, items, order, batch_size, lr):
    n = order.shape[0]
    d = user_table.shape[1]
    nb = (n + batch_size - 1) // batch_size
    losses = np.empty(nb)
    for b in range(nb):
        lo = b * batch_size
        hi = min(n, lo + batch_size)
        m = hi - lo
        eu = np.empty((m, d))
        ei = np.empty((m, d))
        for r in range(m):
            eu[r] = user_table[users[order[lo + r]]]
            ei[r] = item_table[items[order[lo + r]]]
        loss, gu, gi = inbatch_loss_grad_loop(eu, ei)
        for r in range(m):
            u = users[order[lo + r]]
            it = items[order[lo + r]]
            for k in range(d):
                user_table[u, k] -= lr * gu[r, k]
                item_table[it, k] -= lr * gi[r, k]
        losses[b] = loss
    return losses


def sgd_epoch(user_table, item_table, users, items, order, batch_size, lr):
    """One SGD pass in place over ``order``; returns the per-batch losses."""
    fn = _epoch_loop if HAVE_NUMBA else _epoch_numpy
    return fn(user_table, item_table, users, items, order, batch_size, lr)


def inbatch_loss_grad(eu, ei):
    fn = inbatch_loss_grad_loop if HAVE_NUMBA else inbatch_loss_grad_numpy
    return fn(np.ascontiguousarray(eu, dtype=np.float64), np.ascontiguousarray(ei, dtype=np.float64))


# --------------------------------------------------------------------------
# Engagement diffusion for the synthetic world.
#
# Every item spreads independently through three exposure channels:
# followers of its creator, random users, and interest neighbours of each
# positive engager. Randomness comes from a pre-drawn uniform stream u.
# Its transcendental transforms are precomputed by the caller so that the
# jitted and interpreted paths produce bit-identical traces:
#   expo[j]  = -log(1 - u[j])               (unit exponential delay)
#   logit[j] = log(base_rate / u[j] - 1)    (u < base_rate * sigmoid(x)
#                                            iff -x < logit)
# --------------------------------------------------------------------------

SRC_FOLLOW = 0
SRC_RANDOM = 1
SRC_RIPPLE = 2


def _diffuse(
    item_created, item_creator, item_latent, user_latent,
    fol_ptr, fol_idx, nbr_idx,
    horizon, p_follow, follow_delay, rand_count, rand_window,
    ripple_fanout, ripple_delay, scale, max_exposures,
    uniforms, expo, logit, capacity,
):
    n_items = item_created.shape[0]
    n_users = user_latent.shape[0]
    d = user_latent.shape[1]
    n_nbr = nbr_idx.shape[1]
    out_user = np.empty(capacity, np.int64)
    out_item = np.empty(capacity, np.int64)
    out_time = np.empty(capacity, np.float64)
    out_pos = np.empty(capacity, np.int64)
    out_sig = np.empty(capacity, np.int64)
    seen = np.full(n_users, -1, np.int64)
    n_out = 0
    cur = 0
    n_uni = uniforms.shape[0]
    for it in range(n_items):
        t0 = item_created[it]
        c = item_creator[it]
        heap = [(0.0, 0, 0)]
        heap.pop()
        for j in range(fol_ptr[c], fol_ptr[c + 1]):
            if cur + 2 > n_uni:
                return out_user, out_item, out_time, out_pos, out_sig, -1, cur
            u1 = uniforms[cur]
            cur += 2
            if u1 < p_follow:
                heapq.heappush(heap, (t0 + follow_delay * expo[cur - 1], fol_idx[j], SRC_FOLLOW))
        for _ in range(rand_count):
            if cur + 2 > n_uni:
                return out_user, out_item, out_time, out_pos, out_sig, -1, cur
            u = min(int(uniforms[cur] * n_users), n_users - 1)
            tt = t0 + uniforms[cur + 1] * rand_window
            cur += 2
            heapq.heappush(heap, (tt, u, SRC_RANDOM))
        exposures = 0
        while len(heap) > 0 and exposures < max_exposures:
            t, u, src = heapq.heappop(heap)
            if t >= horizon:
                break
            if seen[u] == it or u == c:
                continue
            seen[u] = it
            exposures += 1
            if cur + 1 + 2 * ripple_fanout > n_uni:
                return out_user, out_item, out_time, out_pos, out_sig, -1, cur
            dot = 0.0
            for k in range(d):
                dot += user_latent[u, k] * item_latent[it, k]
            positive = -scale * dot < logit[cur]
            cur += 1
            if n_out >= capacity:
                return out_user, out_item, out_time, out_pos, out_sig, -2, cur
            out_user[n_out] = u
            out_item[n_out] = it
            out_time[n_out] = t
            out_pos[n_out] = 1 if positive else 0
            out_sig[n_out] = src
            n_out += 1
            if positive:
                for _ in range(ripple_fanout):
                    v = nbr_idx[u, min(int(uniforms[cur] * n_nbr), n_nbr - 1)]
                    tt = t + ripple_delay * expo[cur + 1]
                    cur += 2
                    heapq.heappush(heap, (tt, v, SRC_RIPPLE))
    return out_user, out_item, out_time, out_pos, out_sig, n_out, cur


_diffuse_loop = njit(cache=True)(_diffuse)


def diffuse(*args):
    """Run the diffusion simulation; see ``simgen.gen_world`` for the arguments."""
    fn = _diffuse_loop if HAVE_NUMBA else _diffuse
    return fn(*args)


# --------------------------------------------------------------------------
# Cosine scan: similarity of each query vector against every stored vector.
# Rows are computed independently, so a query's scores do not depend on
# which other queries share the batch.
# --------------------------------------------------------------------------


def dot_scan_numpy(vectors, queries):
    out = np.empty((queries.shape[0], vectors.shape[0]))
    for q in range(queries.shape[0]):
        out[q] = (vectors * queries[q]).sum(axis=1)
    return out


@njit(cache=True)
def dot_scan_loop(vectors, queries):
    nq = queries.shape[0]
    n, d = vectors.shape
    out = np.empty((nq, n))
    for q in range(nq):
        for j in range(n):
            s = 0.0
            for k in range(d):
                s += vectors[j, k] * queries[q, k]
            out[q, j] = s
    return out


def dot_scan(vectors, queries):
    fn = dot_scan_loop if HAVE_NUMBA else dot_scan_numpy
    return fn(np.ascontiguousarray(vectors, dtype=np.float64),
              np.ascontiguousarray(queries, dtype=np.float64))


# --------------------------------------------------------------------------
# Navigable small-world graph: incremental build and beam search.
# adj is an (n, max_degree) table; deg holds the live neighbour count.
# --------------------------------------------------------------------------


def _make_search(dot_block):
    def search(vectors, adj, deg, q, entry, ef, visited, stamp):
        s0 = dot_block(vectors, adj[entry:entry + 1, :1] * 0 + entry, 1, q)[0]
        visited[entry] = stamp
        cand = [(-s0, entry)]
        best = [(s0, entry)]
        while len(cand) > 0:
            negs, c = heapq.heappop(cand)
            if len(best) >= ef and -negs < best[0][0]:
                break
            nbrs = adj[c:c + 1, :deg[c]]
            sims = dot_block(vectors, nbrs, deg[c], q)
            for j in range(deg[c]):
                nb = nbrs[0, j]
                if visited[nb] == stamp:
                    continue
                visited[nb] = stamp
                s = sims[j]
                if len(best) < ef or s > best[0][0]:
                    heapq.heappush(cand, (-s, nb))
                    heapq.heappush(best, (s, nb))
                    if len(best) > ef:
                        heapq.heappop(best)
        m = len(best)
        ids = np.empty(m, np.int64)
        out = np.empty(m)
        for j in range(m):
            out[j], ids[j] = best[j]
        return ids, out
    return search


def _dot_block_numpy(vectors, rows, count, q):
    return vectors[rows[0, :count]] @ q


def _dot_block_loop(vectors, rows, count, q):
    d = vectors.shape[1]
    out = np.empty(count)
    for j in range(count):
        r = rows[0, j]
        s = 0.0
        for k in range(d):
            s += vectors[r, k] * q[k]
        out[j] = s
    return out


def _make_build(search, dot_block):
    def build(vectors, order, m, max_degree, ef_construction):
        n = vectors.shape[0]
        adj = np.zeros((n, max_degree), np.int64)
        deg = np.zeros(n, np.int64)
        visited = np.zeros(n, np.int64)
        entry = order[0]
        for t in range(1, n):
            i = order[t]
            ids, sims = search(vectors, adj, deg, vectors[i], entry, ef_construction, visited, t)
            sel = np.argsort(-sims, kind="mergesort")[:m]
            for j in sel:
                nb = ids[j]
                adj[i, deg[i]] = nb
                deg[i] += 1
                if deg[nb] < max_degree:
                    adj[nb, deg[nb]] = i
                    deg[nb] += 1
                else:
                    # replace nb's weakest link if i is closer
                    own = dot_block(vectors, adj[nb:nb + 1], max_degree, vectors[nb])
                    w = np.argmin(own)
                    if sims[j] > own[w]:
                        adj[nb, w] = i
        return adj, deg, entry
    return build


_dot_block_jit = njit(cache=True)(_dot_block_loop)
nsw_search_numpy = _make_search(_dot_block_numpy)
nsw_build_numpy = _make_build(nsw_search_numpy, _dot_block_numpy)
if HAVE_NUMBA:
    nsw_search_loop = njit(_make_search(_dot_block_jit))
    nsw_build_loop = njit(_make_build(nsw_search_loop, _dot_block_jit))
else:
    nsw_search_loop = nsw_search_numpy
    nsw_build_loop = nsw_build_numpy


def nsw_build(vectors, order, m, max_degree, ef_construction):
    fn = nsw_build_loop if HAVE_NUMBA else nsw_build_numpy
    return fn(np.ascontiguousarray(vectors, dtype=np.float64), np.asarray(order, np.int64),
              int(m), int(max_degree), int(ef_construction))


def nsw_search(vectors, adj, deg, q, entry, ef, visited, stamp):
    fn = nsw_search_loop if HAVE_NUMBA else nsw_search_numpy
    return fn(vectors, adj, deg, np.ascontiguousarray(q, dtype=np.float64), int(entry), int(ef),
              visited, int(stamp))
