"""Frobenius-norm NMF with NNDSVDa initialization and multiplicative updates."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import svds

logger = logging.getLogger(__name__)

EPS = 1e-12
_DENSE_SVD_MAX = 4_000_000  # n * p above which the truncated SVD goes through ARPACK


@dataclass(frozen=True, eq=False)
class FactorModel:
    W: np.ndarray
    H: np.ndarray
    k: int
    loss_trace: tuple[float, ...]
    n_iter: int
    seed: int
    init_loss: float = float("nan")
    reseeded: tuple[int, ...] = field(default=())

    @property
    def loss(self) -> float:
        return self.loss_trace[-1] if self.loss_trace else self.init_loss


def _check_matrix(X):
    if sp.issparse(X):
        X = sp.csr_matrix(X, dtype=np.float64)
        data = X.data
    else:
        X = np.asarray(X, dtype=np.float64)
        data = X
    if np.isnan(data).any():
        raise ValueError("X contains NaN")
    if data.size and data.min() < 0:
        raise ValueError("X must be nonnegative")
    return X


def frobenius_loss(X, W, H) -> float:
    """Squared Frobenius norm of ``X - W @ H``."""
    W = np.asarray(W, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    n, p = X.shape
    if W.ndim != 2 or H.ndim != 2 or W.shape[0] != n or H.shape[1] != p or W.shape[1] != H.shape[0]:
        raise ValueError(f"shape mismatch: X {X.shape}, W {W.shape}, H {H.shape}")
    total = 0.0
    step = max(1, 2_000_000 // max(p, 1))
    for start in range(0, n, step):
        block = X[start:start + step]
        block = block.toarray() if sp.issparse(block) else np.asarray(block, dtype=np.float64)
        R = block - W[start:start + step] @ H
        total += float(np.einsum("ij,ij->", R, R))
    return total


def _truncated_svd(X, k, seed):
    n, p = X.shape
    if n * p <= _DENSE_SVD_MAX or k >= min(n, p) - 1:
        A = X.toarray() if sp.issparse(X) else X
        U, S, Vt = np.linalg.svd(A, full_matrices=False)
        return U[:, :k], S[:k], Vt[:k]
    rng = np.random.default_rng(seed)
    v0 = rng.uniform(-1.0, 1.0, size=min(n, p))
    U, S, Vt = svds(X, k=k, v0=v0, solver="arpack")
    order = np.argsort(-S, kind="stable")
    return U[:, order], S[order], Vt[order]


def nndsvda_init(X, k: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """NNDSVD initialization with zeros filled by the mean of ``X``.

    Each singular pair (u, v) is split into positive and negative parts and
    the part with the larger norm product is kept, scaled by the square root
    of sigma times that product.
    """
    X = _check_matrix(X)
    n, p = X.shape
    if not 1 <= k <= min(n, p):
        raise ValueError(f"k={k} must be in [1, min(n, p)={min(n, p)}]")
    U, S, Vt = _truncated_svd(X, k, seed)

    W = np.zeros((n, k))
    H = np.zeros((k, p))
    W[:, 0] = np.sqrt(S[0]) * np.abs(U[:, 0])
    H[0, :] = np.sqrt(S[0]) * np.abs(Vt[0, :])
    for j in range(1, k):
        x, y = U[:, j], Vt[j, :]
        xp, yp = np.maximum(x, 0), np.maximum(y, 0)
        xn, yn = np.abs(np.minimum(x, 0)), np.abs(np.minimum(y, 0))
        xp_norm, yp_norm = np.linalg.norm(xp), np.linalg.norm(yp)
        xn_norm, yn_norm = np.linalg.norm(xn), np.linalg.norm(yn)
        m_pos, m_neg = xp_norm * yp_norm, xn_norm * yn_norm
        if m_pos > m_neg:
            u, v, sigma = xp / xp_norm, yp / yp_norm, m_pos
        elif m_neg > 0:
            u, v, sigma = xn / xn_norm, yn / yn_norm, m_neg
        else:
            continue
        scale = np.sqrt(S[j] * sigma)
        W[:, j] = scale * u
        H[j, :] = scale * v

    W[W < EPS] = 0.0
    H[H < EPS] = 0.0
    mean = float(X.sum()) / (n * p)
    W[W == 0] = mean
    H[H == 0] = mean
    return W, H


def _reseed_component(X, W, H, c):
    """Refill a collapsed component with the best rank-one fit of the residual.

    Leaves the loss unchanged or lower: the old contribution of ``c`` was zero.
    """
    W[:, c] = 0.0
    R = (X.toarray() if sp.issparse(X) else X) - W @ H
    Rpos = np.maximum(R, 0.0)
    j = int(np.argmax(np.einsum("ij,ij->j", Rpos, Rpos)))
    w = Rpos[:, j]
    ww = float(w @ w)
    if ww <= 0.0:
        H[c, :] = 0.0
        return
    W[:, c] = w
    H[c, :] = np.maximum(w @ R, 0.0) / ww


def _mu_steps(F, num, gram, inner, delta, left):
    """Repeated multiplicative steps on one factor with the data product cached.

    ``left`` selects ``F <- F * num / (gram @ F)`` (H update); otherwise
    ``F <- F * num / (F @ gram)`` (W update). Each repeat is itself a monotone
    step, so repeating only lowers the loss further.
    """
    first = None
    for _ in range(inner):
        denom = gram @ F if left else F @ gram
        new = F * num / (denom + EPS)
        change = float(np.linalg.norm(new - F))
        F = new
        if first is None:
            first = change
        elif change <= delta * first:
            break
    return F


def nmf_fit(X, k: int, max_iter: int = 500, tol: float = 1e-4, seed: int = 0,
            window: int = 10, inner: int = 10, inner_delta: float = 0.1) -> FactorModel:
    """Fit ``X ~ W H`` by Lee-Seung multiplicative updates.

    Each outer iteration updates H then W. The expensive products ``W^T X``
    and ``X H^T`` are reused for up to ``inner`` multiplicative steps per
    factor, stopping early once a step moves less than ``inner_delta`` times
    the first one (``inner=1`` gives the classic alternation).

    Stops after ``max_iter`` iterations, or earlier when the relative loss
    decrease over the last ``window`` iterations drops below ``tol``
    (``tol=0`` disables early stopping). ``X`` may be sparse; it is never
    densified except when a collapsed component has to be reseeded.
    """
    X = _check_matrix(X)
    W, H = nndsvda_init(X, k, seed)
    Xt = X.T.tocsr() if sp.issparse(X) else X.T
    norm_x = float(X.multiply(X).sum()) if sp.issparse(X) else float(np.einsum("ij,ij->", X, X))

    init_loss = frobenius_loss(X, W, H)
    trace: list[float] = []
    reseeded: list[int] = []
    it = 0
    for it in range(1, max_iter + 1):
        WtX = np.asarray(Xt @ W).T
        H = _mu_steps(H, WtX, W.T @ W, inner, inner_delta, left=True)

        XHt = np.asarray(X @ H.T)
        HHt = H @ H.T
        W = _mu_steps(W, XHt, HHt, inner, inner_delta, left=False)
        assert W.min() >= 0 and H.min() >= 0

        dead = np.flatnonzero(W.max(axis=0) <= 0)
        if dead.size:
            for c in dead:
                _reseed_component(X, W, H, int(c))
                reseeded.append(it)
            loss = frobenius_loss(X, W, H)
        else:
            loss = norm_x - 2.0 * float(np.einsum("ij,ij->", W, XHt)) \
                + float(np.einsum("ij,ij->", W.T @ W, HHt))
            loss = max(loss, 0.0)
        trace.append(loss)

        if tol > 0 and it > window:
            ref = trace[-window - 1]
            if ref <= 0 or (ref - loss) / ref < tol:
                break
    logger.debug("nmf_fit k=%d stopped after %d iterations, loss %.6g", k, it,
                 trace[-1] if trace else init_loss)
    return FactorModel(W, H, k, tuple(trace), it, seed, init_loss, tuple(reseeded))


def write_factors(path, matrix, row_ids=None):
    """Write a factor matrix as CSV with header ``factor_1..factor_k``.

    With ``row_ids`` the first column is ``cell_id``.
    """
    matrix = np.asarray(matrix)
    with open(path, "w", encoding="utf-8") as fh:
        cols = [f"factor_{i + 1}" for i in range(matrix.shape[1])]
        fh.write(",".join((["cell_id"] if row_ids is not None else []) + cols) + "\n")
        for i, row in enumerate(matrix):
            vals = ",".join(repr(float(v)) for v in row)
            fh.write(f"{row_ids[i]},{vals}\n" if row_ids is not None else vals + "\n")
