"""Cluster and embedding quality metrics.

Spatial: CHAOS, Moran's I. Geometric: silhouette, Davies-Bouldin.
Biological, from cluster top genes against curated marker sets: CMC (cluster
marker coherence), MER (marker exclusion rate), marker enrichment. ARI is
provided for validation against synthetic ground truth.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .errors import MetricError

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ("method", "k", "resolution", "clusters", "chaos", "morans_i",
                  "silhouette", "dbi", "cmc", "mer", "enrichment")


def _labels(labels) -> np.ndarray:
    labels = getattr(labels, "labels", labels)
    return np.asarray(labels)


def standardize(coords) -> np.ndarray:
    """Zero mean and unit (population) variance per axis; constant axes are only centred."""
    coords = np.asarray(coords, dtype=np.float64)
    out = coords - coords.mean(axis=0)
    sd = coords.std(axis=0)
    sd[sd == 0] = 1.0
    return out / sd


def chaos(coords, labels) -> float:
    """Mean standardized distance from each cell to its nearest same-cluster cell.

    Singleton clusters add 0 to the sum but still count in the cell total.
    """
    labels = _labels(labels)
    xy = standardize(coords)
    n = xy.shape[0]
    if labels.shape != (n,):
        raise MetricError("labels and coordinates disagree in length")
    _, inv, counts = np.unique(labels, return_inverse=True, return_counts=True)
    if counts.max() < 2:
        raise MetricError("CHAOS is undefined when every cluster is a singleton")
    order = np.argsort(inv, kind="stable")
    bounds = np.concatenate([[0], np.cumsum(counts)])
    total = 0.0
    for c in range(counts.size):
        if counts[c] < 2:
            continue
        pts = xy[order[bounds[c]:bounds[c + 1]]]
        d, _ = cKDTree(pts).query(pts, k=2)
        total += float(d[:, 1].sum())
    return total / n


def morans_i(y, graph) -> float:
    """Global Moran's I of ``y`` under the weights of ``graph``."""
    W = getattr(graph, "adjacency", graph)
    W = sp.csr_matrix(W, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    n = y.size
    if W.shape != (n, n):
        raise MetricError(f"weights {W.shape} do not match {n} values")
    s0 = float(W.sum())
    if s0 == 0:
        raise MetricError("Moran's I needs a graph with positive total weight")
    z = y - y.mean()
    denom = float(z @ z)
    if denom == 0:
        raise MetricError("Moran's I is undefined for a constant feature")
    return n / s0 * float(z @ (W @ z)) / denom


def stratified_subsample(labels, max_sample: int, seed: int = 0) -> np.ndarray:
    """Sorted indices of a per-cluster proportional sample of at most ~``max_sample`` cells."""
    labels = _labels(labels)
    n = labels.size
    if n <= max_sample:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    picks = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        take = max(1, int(round(max_sample * members.size / n)))
        picks.append(rng.choice(members, size=min(take, members.size), replace=False))
    return np.sort(np.concatenate(picks))


def silhouette(embedding, labels, max_sample: int = 10_000, seed: int = 0, chunk: int = 2048) -> float:
    """Mean silhouette coefficient (Euclidean); members of singleton clusters score 0."""
    X = np.asarray(embedding, dtype=np.float64)
    labels = _labels(labels)
    idx = stratified_subsample(labels, max_sample, seed)
    X, labels = X[idx], labels[idx]
    uniq, lab = np.unique(labels, return_inverse=True)
    if uniq.size < 2:
        raise MetricError("silhouette needs at least two clusters")
    n, c = X.shape[0], uniq.size
    sizes = np.bincount(lab, minlength=c).astype(np.float64)
    onehot = sp.csr_matrix((np.ones(n), (np.arange(n), lab)), shape=(n, c))
    scores = np.empty(n)
    for start in range(0, n, chunk):
        rows = slice(start, min(start + chunk, n))
        sums = np.asarray(onehot.T @ cdist(X, X[rows])).T
        own = lab[rows]
        r = np.arange(sums.shape[0])
        own_n = sizes[own]
        a = np.where(own_n > 1, sums[r, own] / np.maximum(own_n - 1, 1), 0.0)
        other = sums / sizes
        other[r, own] = np.inf
        b = other.min(axis=1)
        m = np.maximum(a, b)
        s = np.where(m > 0, (b - a) / np.where(m > 0, m, 1.0), 0.0)
        s[own_n <= 1] = 0.0
        scores[rows] = s
    return float(scores.mean())


def dbi(embedding, labels) -> float:
    """Davies-Bouldin index; ``inf`` when two cluster centroids coincide."""
    X = np.asarray(embedding, dtype=np.float64)
    labels = _labels(labels)
    uniq, lab = np.unique(labels, return_inverse=True)
    c = uniq.size
    if c < 2:
        raise MetricError("DBI needs at least two clusters")
    sizes = np.bincount(lab, minlength=c)
    centroids = np.zeros((c, X.shape[1]))
    np.add.at(centroids, lab, X)
    centroids /= sizes[:, None]
    scatter = np.bincount(lab, weights=np.linalg.norm(X - centroids[lab], axis=1), minlength=c) / sizes
    sep = cdist(centroids, centroids)
    with np.errstate(divide="ignore", invalid="ignore"):
        R = (scatter[:, None] + scatter[None, :]) / sep
    R[sep == 0] = np.inf
    np.fill_diagonal(R, -np.inf)
    return float(R.max(axis=1).mean())


def ari(labels_a, labels_b) -> float:
    """Adjusted Rand index from the pair-counting contingency table."""
    a = _labels(labels_a)
    b = _labels(labels_b)
    if a.shape != b.shape:
        raise MetricError("labelings differ in length")
    n = a.size
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = sp.coo_matrix((np.ones(n), (ia, ib))).tocsr()
    table.sum_duplicates()

    def pairs(x):
        x = np.asarray(x, dtype=np.float64)
        return float((x * (x - 1) / 2).sum())

    index = pairs(table.data)
    sum_a = pairs(np.asarray(table.sum(axis=1)).ravel())
    sum_b = pairs(np.asarray(table.sum(axis=0)).ravel())
    total = n * (n - 1) / 2
    expected = sum_a * sum_b / total if total else 0.0
    max_index = (sum_a + sum_b) / 2
    if max_index == expected:
        return 1.0 if np.array_equal(ia, ib) or (sum_a == sum_b == index) else 0.0
    return (index - expected) / (max_index - expected)


# -- marker-based metrics --------------------------------------------------------------

def load_markers(path) -> dict[str, list[str]]:
    """Read ``cell_type<TAB>gene`` lines into an ordered mapping."""
    markers: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise MetricError(f"{path}:{lineno}: expected 'cell_type<TAB>gene'")
            genes = markers.setdefault(parts[0], [])
            if parts[1] not in genes:
                genes.append(parts[1])
    return markers


def validate_markers(markers: Mapping[str, Sequence[str]], gene_names) -> dict[str, np.ndarray]:
    """Map marker names to gene indices, dropping (with a warning) genes not in the data."""
    pos = {g: j for j, g in enumerate(gene_names)}
    out: dict[str, np.ndarray] = {}
    missing = 0
    for name in sorted(markers):
        idx = [pos[g] for g in markers[name] if g in pos]
        missing += len(markers[name]) - len(idx)
        if idx:
            out[name] = np.asarray(sorted(set(idx)), dtype=np.int64)
    if missing:
        logger.warning("%d marker genes are absent from the dataset and were dropped", missing)
    if not out:
        raise MetricError("no marker gene is present in the dataset")
    return out


def rank_genes(X, labels, top_m: int = 20) -> list[np.ndarray]:
    """Per cluster (in sorted label order), the ``top_m`` genes by mean difference to the rest.

    Ties go to the lower gene index.
    """
    X = getattr(X, "counts", X)
    labels = _labels(labels)
    uniq, lab = np.unique(labels, return_inverse=True)
    n, p = X.shape
    c = uniq.size
    onehot = sp.csr_matrix((np.ones(n), (np.arange(n), lab)), shape=(n, c))
    sums = (onehot.T @ X).toarray() if sp.issparse(X) else onehot.T @ np.asarray(X, dtype=np.float64)
    total = sums.sum(axis=0)
    sizes = np.bincount(lab, minlength=c).astype(np.float64)
    genes = np.arange(p)
    ranked = []
    for i in range(c):
        mean_in = sums[i] / sizes[i]
        rest = n - sizes[i]
        mean_out = (total - sums[i]) / rest if rest > 0 else np.zeros(p)
        diff = mean_in - mean_out
        ranked.append(np.lexsort((genes, -diff))[:top_m])
    return ranked


def _overlaps(top_lists, marker_idx):
    names = list(marker_idx)
    ov = np.zeros((len(top_lists), len(names)))
    for i, top in enumerate(top_lists):
        top = set(int(g) for g in top)
        for j, name in enumerate(names):
            ov[i, j] = len(top.intersection(marker_idx[name].tolist()))
    return names, ov


def cmc(X, labels, markers: Mapping[str, np.ndarray], top_m: int = 20) -> float:
    """Mean over clusters of the best ``|top ∩ markers_t| / min(top_m, |markers_t|)``."""
    top = rank_genes(X, labels, top_m)
    names, ov = _overlaps(top, markers)
    denom = np.array([min(top_m, markers[n].size) for n in names], dtype=np.float64)
    return float((ov / denom).max(axis=1).mean())


def mer(X, labels, markers: Mapping[str, np.ndarray], top_m: int = 20) -> float:
    """Fraction of all marker genes that reach no cluster's top list."""
    top = rank_genes(X, labels, top_m)
    union = set()
    for idx in markers.values():
        union.update(int(g) for g in idx)
    hit = set()
    for t in top:
        hit.update(int(g) for g in t)
    return len(union - hit) / len(union)


def enrichment(X, labels, markers: Mapping[str, np.ndarray], top_m: int = 20) -> float:
    """Mean over clusters of marker fold enrichment for the best-matching cell type.

    The best-matching type is the one maximizing the CMC overlap score (ties to
    the first type in sorted order); fold enrichment is the fraction of the top
    list in that type's markers divided by that type's share of all genes.
    """
    X_ = getattr(X, "counts", X)
    p = X_.shape[1]
    top = rank_genes(X, labels, top_m)
    names, ov = _overlaps(top, markers)
    sizes = np.array([markers[n].size for n in names], dtype=np.float64)
    score = ov / np.minimum(top_m, sizes)
    best = score.argmax(axis=1)
    vals = []
    for i, t in enumerate(top):
        observed = ov[i, best[i]] / len(t)
        expected = sizes[best[i]] / p
        vals.append(observed / expected)
    return float(np.mean(vals))


# -- reports ----------------------------------------------------------------------------

@dataclass
class MetricReport:
    method: str
    k: int
    resolution: float
    clusters: int
    chaos: float
    morans_i: float
    silhouette: float
    dbi: float
    cmc: float = float("nan")
    mer: float = float("nan")
    enrichment: float = float("nan")
    error: str = ""

    def row(self) -> list[str]:
        return [_fmt(getattr(self, name)) for name in REPORT_COLUMNS]

    def to_json(self) -> str:
        d = {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in asdict(self).items()}
        for k, v in d.items():
            if isinstance(v, float) and math.isinf(v):
                d[k] = "inf" if v > 0 else "-inf"
        if not d["error"]:
            d.pop("error")
        return json.dumps(d, sort_keys=False)

    @classmethod
    def from_json(cls, line: str) -> "MetricReport":
        d = json.loads(line)
        kw = {"error": d.get("error", "")}
        for f in fields(cls):
            if f.name == "error":
                continue
            v = d.get(f.name)
            if f.type == "float":
                v = float("nan") if v is None else float(v)
            kw[f.name] = v
        return cls(**kw)

    @property
    def failed(self) -> bool:
        return bool(self.error)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def reports_to_csv(reports: Sequence[MetricReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in reports:
        w.writerow(r.row())
    return buf.getvalue()


def write_reports_csv(reports: Sequence[MetricReport], path) -> None:
    Path(path).write_text(reports_to_csv(reports), encoding="utf-8")


def write_reports_jsonl(reports: Sequence[MetricReport], path) -> None:
    Path(path).write_text("".join(r.to_json() + "\n" for r in reports), encoding="utf-8")


def read_reports_csv(path) -> list[MetricReport]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != REPORT_COLUMNS:
            raise MetricError(f"{path}: unexpected header {header}")
        out = []
        for row in reader:
            d = dict(zip(header, row))
            out.append(MetricReport(
                method=d["method"], k=int(d["k"]), resolution=float(d["resolution"]),
                clusters=int(d["clusters"]),
                **{c: float(d[c]) for c in REPORT_COLUMNS[4:]},
            ))
        return out


def evaluate(method: str, k: int, resolution: float, labels, coords, embedding, moran_graph,
             X=None, markers=None, top_m: int = 20, max_sample: int = 10_000,
             seed: int = 0) -> MetricReport:
    """Compute one full report row for a clustering."""
    labels = _labels(labels)
    emb = np.asarray(embedding, dtype=np.float64)
    n_clusters = int(np.unique(labels).size)
    report = MetricReport(
        method=method, k=int(k), resolution=float(resolution), clusters=n_clusters,
        chaos=chaos(coords, labels),
        morans_i=morans_i(emb[:, 0], moran_graph),
        silhouette=silhouette(emb, labels, max_sample=max_sample, seed=seed) if n_clusters > 1 else float("nan"),
        dbi=dbi(emb, labels) if n_clusters > 1 else float("nan"),
    )
    if markers is not None and X is not None:
        report.cmc = cmc(X, labels, markers, top_m)
        report.mer = mer(X, labels, markers, top_m)
        report.enrichment = enrichment(X, labels, markers, top_m)
    return report
