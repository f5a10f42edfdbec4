"""Spatial and latent-space neighbour graphs, and the diffusion operator built on them.

All neighbour searches are exact. The k-d tree only proposes candidates;
membership is decided on distances recomputed here as
``sqrt(dx**2 + dy**2 + ...)``, so radius boundaries (closed balls) and kNN
ties (lower index wins) are resolved identically everywhere.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .errors import GraphError

KINDS = ("contact", "radius", "hybrid", "spatial_knn", "feature_knn", "mixed")


@dataclass(frozen=True, eq=False)
class SpatialGraph:
    adjacency: sp.csr_matrix
    kind: str
    is_row_stochastic: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GraphError(f"unknown graph kind {self.kind!r}")
        A = sp.csr_matrix(self.adjacency, dtype=np.float64)
        A.eliminate_zeros()
        A.sort_indices()
        if A.shape[0] != A.shape[1]:
            raise GraphError(f"adjacency must be square, got {A.shape}")
        if A.nnz and A.data.min() < 0:
            raise GraphError("negative edge weight")
        object.__setattr__(self, "adjacency", A)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    def neighbors(self, i: int) -> np.ndarray:
        A = self.adjacency
        return A.indices[A.indptr[i]:A.indptr[i + 1]]


@dataclass(frozen=True, eq=False)
class DiffusionOperator:
    P: sp.csr_matrix


def _distances(a, b):
    diff = a - b
    return np.sqrt((diff * diff).sum(axis=-1))


def radius_pairs(coords, r: float):
    """All pairs ``i < j`` with distance <= r, plus their distances."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape[0] < 2:
        return np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0)
    tree = cKDTree(coords)
    pairs = tree.query_pairs(r * (1 + 1e-9) + 1e-300, output_type="ndarray")
    if pairs.size == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0)
    i, j = pairs[:, 0].astype(np.int64), pairs[:, 1].astype(np.int64)
    d = _distances(coords[i], coords[j])
    keep = d <= r
    return i[keep], j[keep], d[keep]


def _symmetric(n, i, j, w):
    rows = np.concatenate([i, j])
    cols = np.concatenate([j, i])
    vals = np.concatenate([w, w])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def radius_graph(coords, r: float, weight: str = "gaussian", kind: str = "radius") -> SpatialGraph:
    """Edges between distinct cells at distance <= r.

    ``weight='unit'`` gives 1.0 per edge; ``'gaussian'`` gives exp(-(d/r)^2).
    """
    if not r > 0:
        raise GraphError("radius must be positive")
    n = np.asarray(coords).shape[0]
    i, j, d = radius_pairs(coords, r)
    if weight == "unit":
        w = np.ones_like(d)
    elif weight == "gaussian":
        w = np.exp(-((d / r) ** 2))
    else:
        raise GraphError(f"unknown weight scheme {weight!r}")
    return SpatialGraph(_symmetric(n, i, j, w), kind)


def contact_graph(coords, r_c: float = 20.0) -> SpatialGraph:
    return radius_graph(coords, r_c, weight="unit", kind="contact")


def hybrid_merge(a: SpatialGraph, b: SpatialGraph) -> SpatialGraph:
    """Elementwise maximum of two spatial graphs over the same cells."""
    if a.adjacency.shape != b.adjacency.shape:
        raise GraphError(f"node sets differ: {a.adjacency.shape} vs {b.adjacency.shape}")
    return SpatialGraph(a.adjacency.maximum(b.adjacency), "hybrid")


def hybrid_graph(coords, r_contact: float = 20.0, r_radius: float = 80.0) -> SpatialGraph:
    return hybrid_merge(contact_graph(coords, r_contact), radius_graph(coords, r_radius))


def knn_indices(points, k: int, workers: int = 1) -> np.ndarray:
    """Exact k nearest neighbours of every point, excluding itself.

    Returns an ``(n, k)`` index array ordered by (distance, index).
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    n = points.shape[0]
    if not 1 <= k < n:
        raise GraphError(f"k={k} must satisfy 1 <= k < n={n}")
    tree = cKDTree(points)
    m = min(n, k + 2)
    _, cand = tree.query(points, k=m, workers=workers)
    cand = cand.reshape(n, m).astype(np.int64)

    out = np.empty((n, k), dtype=np.int64)
    d = _distances(points[cand], points[:, None, :])
    d[cand == np.arange(n)[:, None]] = np.inf
    order = np.lexsort((cand, d), axis=-1)
    cand = np.take_along_axis(cand, order, axis=1)
    d = np.take_along_axis(d, order, axis=1)
    out[:] = cand[:, :k]

    # rows where the k-th distance might be tied with a point the tree did not return
    kth = d[:, k - 1]
    nxt = d[:, k] if m > k + 1 else np.full(n, np.inf)
    if m >= n:
        unsafe = np.zeros(n, dtype=bool)
    else:
        unsafe = ~(nxt > kth * (1 + 1e-12) + 1e-300)
    for i in np.flatnonzero(unsafe):
        ball = np.asarray(tree.query_ball_point(points[i], kth[i] * (1 + 1e-9) + 1e-300), dtype=np.int64)
        ball = ball[ball != i]
        db = _distances(points[ball], points[i])
        sel = np.lexsort((ball, db))[:k]
        out[i] = ball[sel]
    return out


def _knn_adjacency(points, k, workers):
    n = np.asarray(points).shape[0]
    nbr = knn_indices(points, k, workers)
    rows = np.repeat(np.arange(n), k)
    return sp.csr_matrix((np.ones(n * k), (rows, nbr.ravel())), shape=(n, n))


def spatial_knn_graph(coords, k: int = 15, workers: int = 1) -> SpatialGraph:
    """Directed kNN graph on coordinates, unit weights (row i lists i's neighbours)."""
    return SpatialGraph(_knn_adjacency(coords, k, workers), "spatial_knn")


def feature_knn_graph(embedding, k_nn: int = 15, workers: int = 1) -> SpatialGraph:
    """kNN graph in latent space, symmetrized by elementwise max."""
    A = _knn_adjacency(embedding, k_nn, workers)
    return SpatialGraph(A.maximum(A.T), "feature_knn")


def diffusion_operator(graph: SpatialGraph) -> DiffusionOperator:
    """Row-stochastic ``P = D^-1 (A + I)`` with D the degree matrix of ``A + I``."""
    A = graph.adjacency
    if A.diagonal().any():
        raise GraphError("diffusion_operator expects a graph without self-loops")
    M = (A + sp.identity(A.shape[0], format="csr")).tocsr()
    deg = np.asarray(M.sum(axis=1)).ravel()
    P = sp.diags(1.0 / deg) @ M
    return DiffusionOperator(sp.csr_matrix(P))


def row_normalize(graph: SpatialGraph) -> SpatialGraph:
    """Divide each nonempty row by its sum; empty rows stay empty."""
    A = graph.adjacency
    sums = np.asarray(A.sum(axis=1)).ravel()
    inv = np.zeros_like(sums)
    nz = sums > 0
    inv[nz] = 1.0 / sums[nz]
    return SpatialGraph(sp.diags(inv) @ A, graph.kind, is_row_stochastic=True)


def mix_adjacency(a_s: SpatialGraph, a_f: SpatialGraph, alpha: float = 0.5) -> SpatialGraph:
    """``alpha * A_s + (1 - alpha) * A_f``, symmetrized as ``(M + M^T) / 2``."""
    if not 0.0 <= alpha <= 1.0:
        raise GraphError(f"alpha must lie in [0, 1], got {alpha}")
    if a_s.adjacency.shape != a_f.adjacency.shape:
        raise GraphError("graphs are over different node sets")
    if not (a_s.is_row_stochastic and a_f.is_row_stochastic):
        raise GraphError("mix_adjacency expects row-normalized inputs")
    M = alpha * a_s.adjacency + (1.0 - alpha) * a_f.adjacency
    M = sp.csr_matrix(M)
    M.eliminate_zeros()
    return SpatialGraph((M + M.T) * 0.5, "mixed")


def write_edge_list(graph: SpatialGraph, path, ids=None):
    """Write ``src,dst,weight`` rows sorted by source then destination."""
    A = graph.adjacency.tocoo()
    order = np.lexsort((A.col, A.row))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst", "weight"])
        for t in order:
            s, d = int(A.row[t]), int(A.col[t])
            w.writerow([s if ids is None else ids[s], d if ids is None else ids[d], repr(float(A.data[t]))])
