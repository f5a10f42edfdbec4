"""Leiden community detection under resolution-parameterized modularity.

The local-moving and refinement kernels come from the compiled
``_leiden_core`` extension when it is importable, otherwise from the
pure-Python ``_leiden_py`` twin. Set ``SPATIALNMF_PURE_PYTHON=1`` to force the
fallback. Both kernels consume the same splitmix64 stream, so labels do not
depend on which one is active.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from . import _leiden_py
from .errors import GraphError

logger = logging.getLogger(__name__)

if os.environ.get("SPATIALNMF_PURE_PYTHON", "") not in ("", "0"):
    _core = _leiden_py
else:
    try:
        from . import _leiden_core as _core
    except ImportError:  # pragma: no cover - depends on the build
        _core = _leiden_py
BACKEND = "cython" if _core is not _leiden_py else "python"

THETA = 0.01


def get_kernels(backend: str | None = None):
    if backend is None:
        return _core
    if backend == "python":
        return _leiden_py
    if backend == "cython":
        if _core is _leiden_py:
            from . import _leiden_core
            return _leiden_core
        return _core
    raise ValueError(f"unknown backend {backend!r}")


@dataclass(frozen=True, eq=False)
class ClusterLabeling:
    labels: np.ndarray
    resolution: float
    seed: int
    n_clusters: int
    quality: float = float("nan")
    quality_trace: tuple[float, ...] = field(default=())


def _as_graph(A):
    if hasattr(A, "adjacency"):
        A = A.adjacency
    A = sp.csr_matrix(A, dtype=np.float64)
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    return A


def modularity(A, labels, resolution: float = 1.0) -> float:
    """``Q = (1/2m) sum_ij [A_ij - gamma k_i k_j / 2m] delta(c_i, c_j)``.

    Self-loops count once in ``A_ij`` and in the degrees. Returns 0 for a
    graph without edges.
    """
    A = _as_graph(A)
    labels = np.asarray(labels)
    if labels.shape != (A.shape[0],):
        raise ValueError("labels must cover every node")
    two_m = float(A.sum())
    if two_m <= 0:
        return 0.0
    _, lab = np.unique(labels, return_inverse=True)
    deg = np.asarray(A.sum(axis=1)).ravel()
    coo = A.tocoo()
    inside = float(coo.data[lab[coo.row] == lab[coo.col]].sum())
    K = np.bincount(lab, weights=deg)
    return (inside - resolution * float(np.dot(K, K)) / two_m) / two_m


def _aggregate(A, node_w, refined, memb):
    _, ref = np.unique(refined, return_inverse=True)
    n_new = int(ref.max()) + 1
    coo = A.tocoo()
    B = sp.csr_matrix((coo.data, (ref[coo.row], ref[coo.col])), shape=(n_new, n_new))
    B.sum_duplicates()
    B.sort_indices()
    w = np.bincount(ref, weights=node_w, minlength=n_new)
    first = np.full(n_new, -1, dtype=np.int64)
    first[ref[::-1]] = np.arange(len(ref) - 1, -1, -1)
    _, new_memb = np.unique(memb[first], return_inverse=True)
    return B, w, new_memb.astype(np.int64), ref


def _one_pass(A, deg, memb0, gamma, inv2m, state, kernels):
    G = A
    w = deg
    memb = memb0.copy()
    to_level = np.arange(A.shape[0], dtype=np.int64)
    while True:
        indptr = G.indptr.astype(np.int64)
        indices = G.indices.astype(np.int64)
        _, state = kernels.move_nodes(indptr, indices, G.data, w, memb, gamma, inv2m, state)
        n_comm = np.unique(memb).size
        if n_comm == G.shape[0]:
            break
        refined, state = kernels.refine(indptr, indices, G.data, w, memb, gamma, inv2m, THETA, state)
        if np.unique(refined).size == G.shape[0]:
            break
        G, w, memb, ref = _aggregate(G, w, refined, memb)
        to_level = ref[to_level]
    return memb[to_level], state


def split_disconnected(A, labels) -> np.ndarray:
    """Split every community into its connected components (never lowers Q)."""
    A = _as_graph(A)
    coo = A.tocoo()
    keep = labels[coo.row] == labels[coo.col]
    intra = sp.csr_matrix((coo.data[keep], (coo.row[keep], coo.col[keep])), shape=A.shape)
    _, comp = connected_components(intra, directed=False)
    return comp


def canonical_labels(labels) -> np.ndarray:
    """Relabel 0..c-1 by decreasing size, ties broken by the smallest member index."""
    labels = np.asarray(labels)
    uniq, first, inv, counts = np.unique(labels, return_index=True, return_inverse=True,
                                         return_counts=True)
    order = np.lexsort((first, -counts))
    rank = np.empty(uniq.size, dtype=np.int64)
    rank[order] = np.arange(uniq.size)
    return rank[inv]


def _climb(A, deg, memb, gamma, inv2m, state, kernels, max_passes, patience):
    best_q = modularity(A, memb, gamma)
    trace = [best_q]
    stale = 0
    for pass_no in range(max_passes):
        new, state = _one_pass(A, deg, memb, gamma, inv2m, state, kernels)
        q = modularity(A, new, gamma)
        if q <= best_q + 1e-12 * max(1.0, abs(best_q)):
            stale += 1
            if stale >= patience:
                break
            continue
        stale = 0
        memb, best_q = new.astype(np.int64), q
        trace.append(q)
        logger.debug("leiden pass %d: Q=%.10f, %d communities", pass_no + 1, q, np.unique(memb).size)
    return memb, best_q, trace, state


def leiden(A, resolution: float = 1.0, seed: int = 0, max_passes: int = 10,
           initial=None, backend: str | None = None, patience: int = 2,
           n_starts: int = 4) -> ClusterLabeling:
    """Leiden clustering of a symmetric nonnegative weighted graph.

    Repeats full multilevel passes (local moving, refinement, aggregation),
    each starting from the best partition so far, until ``patience``
    consecutive passes fail to raise Q or ``max_passes`` passes have run.
    This climb is done ``n_starts`` times on one continuing random stream
    and the best result is kept, which rescues most runs that stall in a
    local optimum needing a joint move of several nodes. Disconnected
    communities are then split, so every returned community is connected in ``A``.
    """
    A = _as_graph(A)
    n = A.shape[0]
    if A.nnz and A.data.min() < 0:
        raise GraphError("negative edge weights")
    if A.diagonal().any():
        raise GraphError("input graph must not contain self-loops")
    if n and abs(A - A.T).max() > 1e-12 * max(1.0, float(abs(A).max())):
        raise GraphError("input graph must be symmetric")
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    if n_starts < 1:
        raise ValueError("n_starts must be at least 1")
    kernels = get_kernels(backend)

    two_m = float(A.sum())
    if two_m <= 0 or n == 0:
        labels = np.arange(n, dtype=np.int64)
        return ClusterLabeling(labels, resolution, seed, n, 0.0, (0.0,))

    deg = np.asarray(A.sum(axis=1)).ravel()
    inv2m = 1.0 / two_m
    _, state = _leiden_py.splitmix64(int(seed) & _leiden_py.MASK)

    start = np.arange(n, dtype=np.int64) if initial is None else \
        np.unique(np.asarray(initial), return_inverse=True)[1].astype(np.int64)
    best = None
    for _ in range(n_starts):
        memb, q, trace, state = _climb(A, deg, start, resolution, inv2m, state, kernels, max_passes, patience)
        if best is None or q > best[1] + 1e-12 * max(1.0, abs(best[1])):
            best = (memb, q, trace)
    memb, _, trace = best

    labels = canonical_labels(split_disconnected(A, memb))
    q = modularity(A, labels, resolution)
    if q > trace[-1]:
        trace.append(q)
    return ClusterLabeling(labels, float(resolution), int(seed), int(labels.max()) + 1, q, tuple(trace))
