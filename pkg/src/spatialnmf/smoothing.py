"""Spatial smoothing of per-cell factor loadings."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .graphs import DiffusionOperator, SpatialGraph


@dataclass(frozen=True, eq=False)
class SmoothedFactors:
    W_s: np.ndarray
    method: str
    beta: float = float("nan")
    steps: int = 1


def snmf_smooth(W, neighbors: SpatialGraph) -> SmoothedFactors:
    """Replace every row by the unweighted mean of its neighbours' rows.

    The cell itself is not part of its own average. Cells without neighbours
    keep their row and trigger a warning.
    """
    W = np.asarray(W, dtype=np.float64)
    A = neighbors.adjacency
    if A.shape[0] != W.shape[0]:
        raise ValueError(f"graph has {A.shape[0]} nodes, W has {W.shape[0]} rows")
    B = sp.csr_matrix(A, copy=True)
    B.data[:] = 1.0
    B.setdiag(0)
    B.eliminate_zeros()
    deg = np.diff(B.indptr)
    out = np.asarray(B @ W, dtype=np.float64)
    has = deg > 0
    out[has] /= deg[has, None]
    if not has.all():
        warnings.warn(f"{int((~has).sum())} cells have no spatial neighbours; left unsmoothed",
                      RuntimeWarning, stacklevel=2)
        out[~has] = W[~has]
    return SmoothedFactors(out, "snmf_average", beta=1.0, steps=1)


def diffuse_raw(W, P: DiffusionOperator, beta: float = 0.8, steps: int = 2) -> np.ndarray:
    """``W <- (1 - beta) W + beta P W`` applied ``steps`` times, without clipping."""
    W = np.asarray(W, dtype=np.float64)
    M = P.P
    if M.shape[0] != M.shape[1] or M.shape[1] != W.shape[0]:
        raise ValueError(f"operator {M.shape} does not match W {W.shape}")
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    out = W.copy()
    for _ in range(steps):
        out = (1.0 - beta) * out + beta * (M @ out)
    return out


def diffuse(W, P: DiffusionOperator, beta: float = 0.8, steps: int = 2) -> SmoothedFactors:
    """Iterated graph diffusion followed by clipping negatives to zero."""
    out = diffuse_raw(W, P, beta, steps)
    np.maximum(out, 0.0, out=out)
    return SmoothedFactors(out, "hsnmf_diffuse", beta=beta, steps=steps)


def dirichlet_energy(W, graph: SpatialGraph) -> float:
    """``sum_ij A_ij ||w_i - w_j||^2`` over stored edges."""
    W = np.asarray(W, dtype=np.float64)
    A = graph.adjacency.tocoo()
    diff = W[A.row] - W[A.col]
    return float(np.sum(A.data * np.einsum("ij,ij->i", diff, diff)))
