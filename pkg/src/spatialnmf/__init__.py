"""Spatially regularized NMF embeddings and Leiden clustering for spatial transcriptomics."""
__version__ = "0.1.0"

from .dataset import Dataset, QCReport, load_dataset, load_dataset_dir, normalize_and_log, preprocess, write_dataset
from .graphs import (DiffusionOperator, SpatialGraph, contact_graph, diffusion_operator, feature_knn_graph,
                     hybrid_graph, mix_adjacency, radius_graph, row_normalize, spatial_knn_graph)
from .leiden import BACKEND, ClusterLabeling, leiden, modularity
from .metrics import MetricReport, ari, chaos, dbi, morans_i, silhouette
from .nmf import FactorModel, frobenius_loss, nmf_fit, nndsvda_init
from .pipeline import PipelineConfig, cluster_pipeline, embed, report_for
from .smoothing import SmoothedFactors, diffuse, snmf_smooth
from .sweep import SweepConfig, export_table, pareto_front, run_sweep
from .synthetic import SyntheticSpec, generate
