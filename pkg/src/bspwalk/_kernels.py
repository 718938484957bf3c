"""Compiled inner loops: alias construction/draws and the on-demand second-order step."""
import numpy as np
from numba import njit


@njit(cache=True)
def build_alias(weights):
    n = weights.shape[0]
    prob = np.empty(n, dtype=np.float64)
    alias = np.empty(n, dtype=np.int64)
    total = 0.0
    for i in range(n):
        total += weights[i]
    scaled = np.empty(n, dtype=np.float64)
    small = np.empty(n, dtype=np.int64)
    large = np.empty(n, dtype=np.int64)
    ns = 0
    nl = 0
    for i in range(n):
        scaled[i] = weights[i] * n / total
        if scaled[i] < 1.0:
            small[ns] = i
            ns += 1
        else:
            large[nl] = i
            nl += 1
    while ns > 0 and nl > 0:
        ns -= 1
        s = small[ns]
        nl -= 1
        g = large[nl]
        prob[s] = scaled[s]
        alias[s] = g
        scaled[g] = (scaled[g] + scaled[s]) - 1.0
        if scaled[g] < 1.0:
            small[ns] = g
            ns += 1
        else:
            large[nl] = g
            nl += 1
    # leftovers are 1 up to rounding
    while nl > 0:
        nl -= 1
        g = large[nl]
        prob[g] = 1.0
        alias[g] = g
    while ns > 0:
        ns -= 1
        s = small[ns]
        prob[s] = 1.0
        alias[s] = s
    return prob, alias


@njit(cache=True)
def alias_draw(prob, alias, u1, u2):
    n = prob.shape[0]
    slot = int(u1 * n)
    if slot >= n:
        slot = n - 1
    if u2 < prob[slot]:
        return slot
    return alias[slot]


@njit(cache=True)
def build_static_tables(indptr, weights):
    prob = np.empty(weights.shape[0], dtype=np.float64)
    alias = np.empty(weights.shape[0], dtype=np.int64)
    for v in range(indptr.shape[0] - 1):
        a = indptr[v]
        b = indptr[v + 1]
        if b > a:
            p, al = build_alias(weights[a:b])
            prob[a:b] = p
            alias[a:b] = al
    return prob, alias


@njit(cache=True)
def static_draw(indptr, indices, sprob, salias, v, u1, u2):
    """First-order draw from ``v``'s precomputed edge-weight table."""
    a = indptr[v]
    d = indptr[v + 1] - a
    slot = int(u1 * d)
    if slot >= d:
        slot = d - 1
    if u2 < sprob[a + slot]:
        return indices[a + slot]
    return indices[a + salias[a + slot]]


@njit(cache=True)
def _is_member(sorted_ids, x):
    lo = 0
    hi = sorted_ids.shape[0]
    while lo < hi:
        mid = (lo + hi) >> 1
        if sorted_ids[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo < sorted_ids.shape[0] and sorted_ids[lo] == x


@njit(cache=True)
def second_order_weights(nbrs, wts, prev, prev_nbrs, inv_p, inv_q):
    d = nbrs.shape[0]
    pi = np.empty(d, dtype=np.float64)
    for i in range(d):
        x = nbrs[i]
        if x == prev:
            pi[i] = wts[i] * inv_p
        elif _is_member(prev_nbrs, x):
            pi[i] = wts[i]
        else:
            pi[i] = wts[i] * inv_q
    return pi


@njit(cache=True)
def second_order_sample(nbrs, wts, prev, prev_nbrs, inv_p, inv_q, u1, u2):
    """Next vertex from ``nbrs`` given the walk came from ``prev``.

    ``prev_nbrs`` must be sorted ascending.
    """
    pi = second_order_weights(nbrs, wts, prev, prev_nbrs, inv_p, inv_q)
    prob, alias = build_alias(pi)
    return nbrs[alias_draw(prob, alias, u1, u2)]


_FIB = np.uint64(11400714819323198485)


@njit(cache=True)
def build_hash(ids):
    """Open-addressing membership table over ``ids`` (``-1`` marks empty)."""
    bits = 1
    while (1 << bits) < 2 * ids.shape[0]:
        bits += 1
    table = np.full(1 << bits, -1, dtype=np.int64)
    mask = (1 << bits) - 1
    shift = np.uint64(64 - bits)
    for i in range(ids.shape[0]):
        x = ids[i]
        h = np.int64((np.uint64(x) * _FIB) >> shift)
        while table[h] != -1 and table[h] != x:
            h = (h + 1) & mask
        table[h] = x
    return table


@njit(cache=True)
def hash_contains(table, x):
    size = table.shape[0]
    bits = 0
    while (1 << bits) < size:
        bits += 1
    mask = size - 1
    h = np.int64((np.uint64(x) * _FIB) >> np.uint64(64 - bits))
    while True:
        y = table[h]
        if y == x:
            return True
        if y == -1:
            return False
        h = (h + 1) & mask


@njit(cache=True)
def _step_with_table(indptr, indices, weights, v, prev, table, inv_p, inv_q, u1, u2):
    a = indptr[v]
    d = indptr[v + 1] - a
    size = table.shape[0]
    bits = 0
    while (1 << bits) < size:
        bits += 1
    mask = size - 1
    shift = np.uint64(64 - bits)
    pi = np.empty(d, dtype=np.float64)
    for i in range(d):
        x = indices[a + i]
        if x == prev:
            pi[i] = weights[a + i] * inv_p
            continue
        h = np.int64((np.uint64(x) * _FIB) >> shift)
        found = False
        while True:
            y = table[h]
            if y == x:
                found = True
                break
            if y == -1:
                break
            h = (h + 1) & mask
        if found:
            pi[i] = weights[a + i]
        else:
            pi[i] = weights[a + i] * inv_q
    prob, alias = build_alias(pi)
    return indices[a + alias_draw(prob, alias, u1, u2)]


@njit(cache=True)
def walk_step(indptr, indices, weights, v, prev, prev_nbrs, inv_p, inv_q, uniforms, row):
    """Second-order step at ``v``: hash ``prev``'s neighbours, weight, alias-sample."""
    table = build_hash(prev_nbrs)
    return _step_with_table(indptr, indices, weights, v, prev, table, inv_p, inv_q,
                            uniforms[row, 0], uniforms[row, 1])


@njit(cache=True)
def walk_step_hashed(indptr, indices, weights, v, prev, table, inv_p, inv_q, uniforms, row):
    """As :func:`walk_step` with an already-built membership table."""
    return _step_with_table(indptr, indices, weights, v, prev, table, inv_p, inv_q,
                            uniforms[row, 0], uniforms[row, 1])


@njit(cache=True)
def walk_step_static(indptr, indices, sprob, salias, v, uniforms, row):
    return static_draw(indptr, indices, sprob, salias, v, uniforms[row, 0], uniforms[row, 1])


@njit(cache=True)
def walk_step_on_list(nbrs, wts, prev, table, inv_p, inv_q, uniforms, row):
    """Second-order step over an explicit (neighbour, weight) list, ``table``
    being the membership table of ``prev``'s neighbours."""
    d = nbrs.shape[0]
    pi = np.empty(d, dtype=np.float64)
    for i in range(d):
        x = nbrs[i]
        if x == prev:
            pi[i] = wts[i] * inv_p
        elif hash_contains(table, x):
            pi[i] = wts[i]
        else:
            pi[i] = wts[i] * inv_q
    prob, alias = build_alias(pi)
    return nbrs[alias_draw(prob, alias, uniforms[row, 0], uniforms[row, 1])]
