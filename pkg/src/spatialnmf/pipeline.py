"""End-to-end pipelines: plain NMF, SNMF and hSNMF followed by Leiden clustering.

All three share one clustering stage. The embedding differs:

* ``nmf``   raw NMF loadings W
* ``snmf``  W averaged over each cell's k spatial nearest neighbours
* ``hsnmf`` W diffused over the hybrid contact/radius graph

and hSNMF additionally mixes the spatial graph into the clustering graph
with weight ``alpha`` (the other two cluster on the feature graph alone).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from . import graphs
from .dataset import Dataset
from .errors import DatasetError
from .leiden import ClusterLabeling, leiden
from .metrics import MetricReport, evaluate, morans_i
from .nmf import FactorModel, nmf_fit
from .smoothing import SmoothedFactors, diffuse, snmf_smooth

logger = logging.getLogger(__name__)

METHODS = ("nmf", "snmf", "hsnmf")


@dataclass(frozen=True)
class PipelineConfig:
    r_contact: float = 20.0
    r_radius: float = 80.0
    knn_spatial: int = 15
    knn_feature: int = 15
    alpha: float = 0.5
    beta: float = 0.8
    steps: int = 2
    nmf_max_iter: int = 500
    nmf_tol: float = 1e-4
    seed: int = 0
    target_sum: float = 10_000.0
    top_m: int = 20
    max_passes: int = 10
    leiden_starts: int = 4
    silhouette_sample: int = 10_000
    moran_graph: str = "hybrid"      # or "knn"
    moran_input: str = "embedding"   # or "raw": first factor of unsmoothed W
    metric_embedding: str = "embedding"  # or "raw" for silhouette/DBI
    workers: int = 1


@dataclass(frozen=True, eq=False)
class Embedding:
    method: str
    model: FactorModel
    smoothed: SmoothedFactors
    spatial: graphs.SpatialGraph  # hybrid contact/radius graph

    @property
    def matrix(self) -> np.ndarray:
        return self.smoothed.W_s


@dataclass(frozen=True, eq=False)
class PipelineResult:
    labeling: ClusterLabeling
    smoothed: SmoothedFactors
    graph: graphs.SpatialGraph
    embedding: Embedding

    def __iter__(self):
        return iter((self.labeling, self.smoothed, self.graph))


def embed(ds: Dataset, k: int, method: str = "hsnmf", config: PipelineConfig = PipelineConfig(),
          model: FactorModel | None = None) -> Embedding:
    """Factorize ``ds`` and apply the method's spatial smoothing."""
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    if not ds.is_lognorm:
        raise DatasetError("the pipeline expects a log-normalized dataset; run preprocessing first")
    if model is None:
        model = nmf_fit(ds.counts, k, max_iter=config.nmf_max_iter, tol=config.nmf_tol, seed=config.seed)
    spatial = graphs.hybrid_graph(ds.coords, config.r_contact, config.r_radius)
    if method == "nmf":
        smoothed = SmoothedFactors(model.W, "none", beta=0.0, steps=0)
    elif method == "snmf":
        nbrs = graphs.spatial_knn_graph(ds.coords, config.knn_spatial, workers=config.workers)
        smoothed = snmf_smooth(model.W, nbrs)
    else:
        P = graphs.diffusion_operator(spatial)
        smoothed = diffuse(model.W, P, config.beta, config.steps)
    return Embedding(method, model, smoothed, spatial)


def clustering_graph(matrix, spatial: graphs.SpatialGraph, alpha: float,
                     config: PipelineConfig = PipelineConfig()) -> graphs.SpatialGraph:
    """Row-normalized feature kNN graph mixed with the row-normalized spatial graph."""
    a_f = graphs.row_normalize(graphs.feature_knn_graph(matrix, config.knn_feature, workers=config.workers))
    a_s = graphs.row_normalize(spatial)
    return graphs.mix_adjacency(a_s, a_f, alpha)


def effective_alpha(method: str, alpha: float) -> float:
    return alpha if method == "hsnmf" else 0.0


def cluster_pipeline(ds: Dataset, k: int, resolution: float, alpha: float | None = None,
                     config: PipelineConfig = PipelineConfig(), method: str = "hsnmf",
                     seed: int | None = None) -> PipelineResult:
    """Embed, build the clustering graph and run Leiden; returns every intermediate."""
    alpha = config.alpha if alpha is None else alpha
    emb = embed(ds, k, method, config)
    A = clustering_graph(emb.matrix, emb.spatial, effective_alpha(method, alpha), config)
    labeling = leiden(A, resolution, seed=config.seed if seed is None else seed,
                      max_passes=config.max_passes, n_starts=config.leiden_starts)
    return PipelineResult(labeling, emb.smoothed, A, emb)


def moran_weights(ds: Dataset, emb: Embedding, config: PipelineConfig) -> graphs.SpatialGraph:
    if config.moran_graph == "knn":
        return graphs.spatial_knn_graph(ds.coords, config.knn_spatial, workers=config.workers)
    if config.moran_graph == "hybrid":
        return emb.spatial
    raise ValueError(f"unknown Moran graph {config.moran_graph!r}")


def report_for(ds: Dataset, emb: Embedding, labeling: ClusterLabeling, resolution: float,
               config: PipelineConfig = PipelineConfig(), markers=None,
               moran_graph: graphs.SpatialGraph | None = None) -> MetricReport:
    matrix = emb.model.W if config.metric_embedding == "raw" else emb.matrix
    moran_src = emb.model.W if config.moran_input == "raw" else emb.matrix
    W = moran_graph if moran_graph is not None else moran_weights(ds, emb, config)
    report = evaluate(emb.method, emb.model.k, resolution, labeling.labels, ds.coords, matrix, W,
                      X=ds.counts, markers=markers, top_m=config.top_m,
                      max_sample=config.silhouette_sample, seed=labeling.seed)
    if moran_src is not matrix:
        report = replace(report, morans_i=morans_i(moran_src[:, 0], W))
    return report
