# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Leiden kernels; mirror ``_leiden_py`` operation for operation."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp
from libc.stdint cimport uint64_t, int64_t
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef double _TO_UNIT = 1.0 / 9007199254740992.0


cdef inline uint64_t _next(uint64_t* state) noexcept nogil:
    cdef uint64_t z
    state[0] = state[0] + <uint64_t>0x9E3779B97F4A7C15
    z = state[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EB
    return z ^ (z >> 31)


cdef inline double _uniform(uint64_t* state) noexcept nogil:
    return <double>(_next(state) >> 11) * _TO_UNIT


cdef void _permutation(int64_t* perm, Py_ssize_t n, uint64_t* state) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef int64_t tmp
    cdef double u
    for i in range(n):
        perm[i] = i
    i = n - 1
    while i > 0:
        u = _uniform(state)
        j = <Py_ssize_t>(u * <double>(i + 1))
        tmp = perm[i]
        perm[i] = perm[j]
        perm[j] = tmp
        i -= 1


def permutation(Py_ssize_t n, state):
    cdef uint64_t st = <uint64_t>state
    out = np.empty(n, dtype=np.int64)
    cdef int64_t[::1] view = out
    if n > 0:
        _permutation(&view[0], n, &st)
    return out, int(st)


def move_nodes(const int64_t[::1] indptr, const int64_t[::1] indices, const double[::1] data,
               const double[::1] node_w, int64_t[::1] memb, double gamma, double inv2m, state):
    cdef Py_ssize_t n = node_w.shape[0]
    cdef uint64_t st = <uint64_t>state
    cdef Py_ssize_t moves = 0
    cdef Py_ssize_t v, u, c, cv, best, e, i, n_touched, n_empty
    cdef Py_ssize_t head, tail, qlen
    cdef double kv, g, best_gain

    cdef double* comm_w = <double*>malloc(n * sizeof(double))
    cdef double* neigh = <double*>malloc(n * sizeof(double))
    cdef int64_t* size = <int64_t*>malloc(n * sizeof(int64_t))
    cdef int64_t* empty = <int64_t*>malloc(n * sizeof(int64_t))
    cdef int64_t* queue = <int64_t*>malloc(n * sizeof(int64_t))
    cdef char* in_q = <char*>malloc(n * sizeof(char))
    cdef char* seen = <char*>malloc(n * sizeof(char))
    cdef int64_t* touched = <int64_t*>malloc(n * sizeof(int64_t))
    if (comm_w == NULL or neigh == NULL or size == NULL or empty == NULL or queue == NULL
            or in_q == NULL or seen == NULL or touched == NULL):
        free(comm_w); free(neigh); free(size); free(empty); free(queue); free(in_q); free(seen); free(touched)
        raise MemoryError()

    with nogil:
        for v in range(n):
            comm_w[v] = 0.0
            neigh[v] = 0.0
            size[v] = 0
            in_q[v] = 1
            seen[v] = 0
        for v in range(n):
            comm_w[memb[v]] += node_w[v]
            size[memb[v]] += 1
        n_empty = 0
        c = n - 1
        while c >= 0:
            if size[c] == 0:
                empty[n_empty] = c
                n_empty += 1
            c -= 1

        # circular queue holding at most n distinct nodes
        if n > 0:
            _permutation(queue, n, &st)
        head = 0
        tail = 0
        qlen = n
        while qlen > 0:
            v = queue[head]
            head += 1
            if head == n:
                head = 0
            qlen -= 1
            in_q[v] = 0
            cv = memb[v]
            kv = node_w[v]
            n_touched = 0
            for e in range(indptr[v], indptr[v + 1]):
                u = indices[e]
                if u == v:
                    continue
                c = memb[u]
                if not seen[c]:
                    seen[c] = 1
                    touched[n_touched] = c
                    n_touched += 1
                neigh[c] += data[e]

            comm_w[cv] -= kv
            best = cv
            best_gain = neigh[cv] - gamma * kv * comm_w[cv] * inv2m
            for i in range(n_touched):
                c = touched[i]
                g = neigh[c] - gamma * kv * comm_w[c] * inv2m
                if g > best_gain:
                    best = c
                    best_gain = g
            if best_gain < 0.0 and size[cv] > 1:
                n_empty -= 1
                best = empty[n_empty]
                best_gain = 0.0
            comm_w[best] += kv

            if best != cv:
                size[cv] -= 1
                if size[cv] == 0:
                    empty[n_empty] = cv
                    n_empty += 1
                size[best] += 1
                memb[v] = best
                moves += 1
                for e in range(indptr[v], indptr[v + 1]):
                    u = indices[e]
                    if u != v and not in_q[u] and memb[u] != best:
                        in_q[u] = 1
                        queue[tail] = u
                        tail += 1
                        if tail == n:
                            tail = 0
                        qlen += 1
            for i in range(n_touched):
                c = touched[i]
                neigh[c] = 0.0
                seen[c] = 0

    free(comm_w); free(neigh); free(size); free(empty); free(queue); free(in_q); free(seen); free(touched)
    return moves, int(st)


def refine(const int64_t[::1] indptr, const int64_t[::1] indices, const double[::1] data,
           const double[::1] node_w, const int64_t[::1] memb, double gamma, double inv2m,
           double theta, state):
    cdef Py_ssize_t n = node_w.shape[0]
    cdef uint64_t st = <uint64_t>state
    cdef Py_ssize_t v, u, c, cv, s, e, i, n_touched, n_cands, chosen, t
    cdef double kv, g, max_g, acc, total, target, rc

    ref_arr = np.arange(n, dtype=np.int64)
    cdef int64_t[::1] ref = ref_arr
    cdef double* S_w = <double*>malloc(n * sizeof(double))
    cdef double* ext = <double*>malloc(n * sizeof(double))
    cdef double* r_w = <double*>malloc(n * sizeof(double))
    cdef int64_t* r_size = <int64_t*>malloc(n * sizeof(int64_t))
    cdef double* neigh = <double*>malloc(n * sizeof(double))
    cdef char* seen = <char*>malloc(n * sizeof(char))
    cdef int64_t* touched = <int64_t*>malloc(n * sizeof(int64_t))
    cdef int64_t* perm = <int64_t*>malloc(n * sizeof(int64_t))
    cdef int64_t* cands = <int64_t*>malloc((n + 1) * sizeof(int64_t))
    cdef double* gains = <double*>malloc((n + 1) * sizeof(double))
    if (S_w == NULL or ext == NULL or r_w == NULL or r_size == NULL or neigh == NULL or seen == NULL
            or touched == NULL or perm == NULL or cands == NULL or gains == NULL):
        free(S_w); free(ext); free(r_w); free(r_size); free(neigh); free(seen); free(touched)
        free(perm); free(cands); free(gains)
        raise MemoryError()

    with nogil:
        for v in range(n):
            S_w[v] = 0.0
            neigh[v] = 0.0
            seen[v] = 0
            r_w[v] = node_w[v]
            r_size[v] = 1
        for v in range(n):
            S_w[memb[v]] += node_w[v]
        for v in range(n):
            acc = 0.0
            for e in range(indptr[v], indptr[v + 1]):
                u = indices[e]
                if u != v and memb[u] == memb[v]:
                    acc += data[e]
            ext[v] = acc

        if n > 0:
            _permutation(perm, n, &st)
        for t in range(n):
            v = perm[t]
            cv = ref[v]
            if r_size[cv] != 1:
                continue
            s = memb[v]
            kv = node_w[v]
            if ext[cv] < gamma * kv * (S_w[s] - kv) * inv2m:
                continue
            n_touched = 0
            for e in range(indptr[v], indptr[v + 1]):
                u = indices[e]
                if u == v or memb[u] != s:
                    continue
                c = ref[u]
                if not seen[c]:
                    seen[c] = 1
                    touched[n_touched] = c
                    n_touched += 1
                neigh[c] += data[e]

            r_w[cv] = 0.0
            cands[0] = cv
            gains[0] = 0.0
            n_cands = 1
            max_g = 0.0
            for i in range(n_touched):
                c = touched[i]
                rc = r_w[c]
                if ext[c] < gamma * rc * (S_w[s] - rc) * inv2m:
                    continue
                g = neigh[c] - gamma * kv * rc * inv2m
                if g >= 0.0:
                    cands[n_cands] = c
                    gains[n_cands] = g
                    n_cands += 1
                    if g > max_g:
                        max_g = g

            chosen = cv
            if n_cands > 1:
                total = 0.0
                for i in range(n_cands):
                    gains[i] = exp((gains[i] - max_g) / theta)
                    total += gains[i]
                target = _uniform(&st) * total
                acc = 0.0
                chosen = cands[n_cands - 1]
                for i in range(n_cands):
                    acc += gains[i]
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
            for i in range(n_touched):
                c = touched[i]
                neigh[c] = 0.0
                seen[c] = 0

    free(S_w); free(ext); free(r_w); free(r_size); free(neigh); free(seen); free(touched)
    free(perm); free(cands); free(gains)
    return ref_arr, int(st)
