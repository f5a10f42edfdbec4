"""Pure-Python Leiden kernels.

Reference twin of ``_leiden_core.pyx``: same RNG stream, same visiting order
and same floating-point expression order, so both produce identical labels.

Graphs arrive as CSR arrays (``indptr``, ``indices``, ``data``); self-loops
may be present and are skipped when accumulating edge weight to communities.
Gains are in edge-weight units: ``w(v, C) - gamma * k_v * K_C / (2m)``.
"""
from collections import deque
from math import exp

import numpy as np

MASK = (1 << 64) - 1
_TO_UNIT = 1.0 / 9007199254740992.0


def splitmix64(state):
    state = (state + 0x9E3779B97F4A7C15) & MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return state, z ^ (z >> 31)


def _uniform(state):
    state, z = splitmix64(state)
    return state, (z >> 11) * _TO_UNIT


def permutation(n, state):
    perm = list(range(n))
    for i in range(n - 1, 0, -1):
        state, u = _uniform(state)
        j = int(u * (i + 1))
        perm[i], perm[j] = perm[j], perm[i]
    return perm, state


def move_nodes(indptr, indices, data, node_w, memb, gamma, inv2m, state):
    """Queue-based local moving. Updates ``memb`` in place; returns (moves, state)."""
    n = len(node_w)
    indptr = indptr.tolist()
    indices = indices.tolist()
    data = data.tolist()
    kw = node_w.tolist()
    m = memb.tolist()

    comm_w = [0.0] * n
    size = [0] * n
    for v in range(n):
        comm_w[m[v]] += kw[v]
        size[m[v]] += 1
    empty = [c for c in range(n - 1, -1, -1) if size[c] == 0]

    perm, state = permutation(n, state)
    queue = deque(perm)
    in_q = [True] * n
    neigh = [0.0] * n
    seen = [False] * n
    moves = 0
    while queue:
        v = queue.popleft()
        in_q[v] = False
        cv = m[v]
        kv = kw[v]
        touched = []
        for e in range(indptr[v], indptr[v + 1]):
            u = indices[e]
            if u == v:
                continue
            c = m[u]
            if not seen[c]:
                seen[c] = True
                touched.append(c)
            neigh[c] += data[e]

        comm_w[cv] -= kv
        best = cv
        best_gain = neigh[cv] - gamma * kv * comm_w[cv] * inv2m
        for c in touched:
            g = neigh[c] - gamma * kv * comm_w[c] * inv2m
            if g > best_gain:
                best = c
                best_gain = g
        if best_gain < 0.0 and size[cv] > 1:
            best = empty.pop()
            best_gain = 0.0
        comm_w[best] += kv

        if best != cv:
            size[cv] -= 1
            if size[cv] == 0:
                empty.append(cv)
            size[best] += 1
            m[v] = best
            moves += 1
            for e in range(indptr[v], indptr[v + 1]):
                u = indices[e]
                if u != v and not in_q[u] and m[u] != best:
                    in_q[u] = True
                    queue.append(u)
        for c in touched:
            neigh[c] = 0.0
            seen[c] = False
    memb[:] = m
    return moves, state


def refine(indptr, indices, data, node_w, memb, gamma, inv2m, theta, state):
    """Refinement phase: merge singletons within each community, randomized-greedy.

    Returns (refined membership as int64 array, state).
    """
    n = len(node_w)
    indptr = indptr.tolist()
    indices = indices.tolist()
    data = data.tolist()
    kw = node_w.tolist()
    m = memb.tolist()

    S_w = [0.0] * n
    for v in range(n):
        S_w[m[v]] += kw[v]
    ext = [0.0] * n
    for v in range(n):
        mv = m[v]
        acc = 0.0
        for e in range(indptr[v], indptr[v + 1]):
            u = indices[e]
            if u != v and m[u] == mv:
                acc += data[e]
        ext[v] = acc

    ref = list(range(n))
    r_w = list(kw)
    r_size = [1] * n
    neigh = [0.0] * n
    seen = [False] * n

    perm, state = permutation(n, state)
    for v in perm:
        cv = ref[v]
        if r_size[cv] != 1:
            continue
        s = m[v]
        kv = kw[v]
        if ext[cv] < gamma * kv * (S_w[s] - kv) * inv2m:
            continue
        touched = []
        for e in range(indptr[v], indptr[v + 1]):
            u = indices[e]
            if u == v or m[u] != s:
                continue
            c = ref[u]
            if not seen[c]:
                seen[c] = True
                touched.append(c)
            neigh[c] += data[e]

        r_w[cv] = 0.0
        cands = [cv]
        gains = [0.0]
        max_g = 0.0
        for c in touched:
            rc = r_w[c]
            if ext[c] < gamma * rc * (S_w[s] - rc) * inv2m:
                continue
            g = neigh[c] - gamma * kv * rc * inv2m
            if g >= 0.0:
                cands.append(c)
                gains.append(g)
                if g > max_g:
                    max_g = g

        chosen = cv
        if len(cands) > 1:
            weights = [exp((g - max_g) / theta) for g in gains]
            total = 0.0
            for w in weights:
                total += w
            state, u = _uniform(state)
            target = u * total
            acc = 0.0
            chosen = cands[-1]
            for i in range(len(cands)):
                acc += weights[i]
                if target < acc:
                    chosen = cands[i]
                    break

        if chosen == cv:
            r_w[cv] = kv
        else:
            r_w[chosen] += kv
            ext[chosen] = ext[chosen] + ext[cv] - 2.0 * neigh[chosen]
            r_size[chosen] += 1
            r_size[cv] = 0
            ref[v] = chosen
        for c in touched:
            neigh[c] = 0.0
            seen[c] = False
    return np.asarray(ref, dtype=np.int64), state
