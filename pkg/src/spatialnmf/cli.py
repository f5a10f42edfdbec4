"""Command-line interface: ``spatialnmf {preprocess,run,sweep,synth,metrics}``.

Every subcommand writes into ``--out-dir``. The exit status is 0 only when all
requested files were written; errors go to stderr with status 1 and argument
problems exit with status 2. ``SPATIALNMF_LOG`` sets the log level (default
INFO); logs go to stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (Dataset, drop_genes, load_dataset, load_dataset_dir, normalize_and_log, preprocess,
                      read_scores, write_dataset)
from .errors import SpatialNMFError
from .graphs import hybrid_graph, spatial_knn_graph, write_edge_list
from .leiden import leiden
from .metrics import (ari, evaluate, load_markers, validate_markers, write_reports_csv,
                      write_reports_jsonl)
from .nmf import write_factors
from .pipeline import PipelineConfig, clustering_graph, effective_alpha, embed, moran_weights, report_for
from .sweep import (METHOD_ALIASES, SweepConfig, canonical_method, export_table, load_sweep_config,
                    pareto_front, run_sweep)
from .synthetic import LAYOUTS, SyntheticSpec, write_synthetic

logger = logging.getLogger("spatialnmf")

METHOD_CHOICES = ("nmf", "snmf", "hsnmf") + tuple(METHOD_ALIASES)


def _setup_logging():
    level = os.environ.get("SPATIALNMF_LOG", "INFO").upper()
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("spatialnmf")
    root.handlers[:] = [handler]
    root.setLevel(getattr(logging, level, logging.INFO) if not level.isdigit() else int(level))
    root.propagate = False


# -- shared argument groups --------------------------------------------------------------

def _add_input(p):
    g = p.add_argument_group("input dataset")
    g.add_argument("--dataset", type=Path, help="directory holding matrix.mtx, genes.txt, cells.txt, coords.csv")
    g.add_argument("--matrix", type=Path, help="Matrix Market file, cells as rows")
    g.add_argument("--genes", type=Path, help="gene names, one per line")
    g.add_argument("--cells", type=Path, help="cell ids, one per line")
    g.add_argument("--coords", type=Path, help="CSV with header cell_id,x,y (micrometers)")


def _add_pipeline(p, sweep=False):
    # sweep leaves these unset so a TOML config can supply them
    dflt = (lambda v: None) if sweep else (lambda v: v)
    g = p.add_argument_group("pipeline parameters")
    g.add_argument("--alpha", type=float, default=dflt(0.5), help="weight of the spatial graph in the clustering graph")
    g.add_argument("--beta", type=float, default=dflt(0.8), help="diffusion mixing weight")
    g.add_argument("--steps", type=int, default=dflt(2), help="number of diffusion steps")
    g.add_argument("--r-contact", type=float, default=20.0, help="contact radius in micrometers")
    g.add_argument("--r-radius", type=float, default=80.0, help="long-range radius in micrometers")
    g.add_argument("--knn", type=int, default=15, help="neighbours in the spatial and feature kNN graphs")
    g.add_argument("--max-iter", type=int, default=500, help="NMF iteration cap")
    g.add_argument("--leiden-starts", type=int, default=4, help="independent Leiden climbs, best kept")
    g.add_argument("--top-m", type=int, default=20, help="top genes per cluster for marker metrics")
    g.add_argument("--markers", type=Path, help="marker file, lines of cell_type<TAB>gene")
    g.add_argument("--moran-graph", choices=("hybrid", "knn"), default="hybrid")
    g.add_argument("--moran-input", choices=("embedding", "raw"), default="embedding",
                   help="first smoothed factor (default) or first raw NMF factor")
    g.add_argument("--metric-embedding", choices=("embedding", "raw"), default="embedding",
                   help="space used for silhouette and DBI")
    g.add_argument("--silhouette-sample", type=int, default=10_000)
    g.add_argument("--seed", type=int, default=dflt(0))
    g.add_argument("--threads", type=int, default=1, help="worker cap for neighbour searches and sweeps")


def _load_input(args) -> Dataset:
    files = (args.matrix, args.genes, args.cells, args.coords)
    if args.dataset is not None:
        if any(f is not None for f in files):
            raise SpatialNMFError("give either --dataset or the four file flags, not both")
        return load_dataset_dir(args.dataset)
    if any(f is None for f in files):
        raise SpatialNMFError("input needs --dataset DIR or all of --matrix --genes --cells --coords")
    return load_dataset(*files)


def _ensure_lognorm(ds: Dataset, target_sum=10_000.0) -> Dataset:
    if not ds.is_lognorm:
        logger.info("dataset is not log-normalized; normalizing to %g counts per cell", target_sum)
        ds = normalize_and_log(ds, target_sum)
    return ds


def _pipeline_config(args) -> PipelineConfig:
    return PipelineConfig(
        r_contact=args.r_contact, r_radius=args.r_radius, knn_spatial=args.knn, knn_feature=args.knn,
        alpha=args.alpha, beta=args.beta, steps=args.steps, nmf_max_iter=args.max_iter, seed=args.seed,
        leiden_starts=args.leiden_starts,
        top_m=args.top_m, silhouette_sample=args.silhouette_sample, moran_graph=args.moran_graph,
        moran_input=args.moran_input, metric_embedding=args.metric_embedding, workers=max(1, args.threads),
    )


def _markers(args, ds):
    return validate_markers(load_markers(args.markers), ds.gene_names) if args.markers else None


def _out_dir(path) -> Path:
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    return d


def write_labels(path, cell_ids, labels):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell_id", "cluster"])
        for cid, lab in zip(cell_ids, labels):
            w.writerow([cid, int(lab)])


def read_labels(path, cell_ids, column=None):
    """Read a two-column ``cell_id,<label>`` CSV aligned to ``cell_ids``."""
    pos = {c: i for i, c in enumerate(cell_ids)}
    out = np.full(len(cell_ids), -1, dtype=np.int64)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "cell_id" or len(header) < 2:
            raise SpatialNMFError(f"{path}: expected a header starting with cell_id")
        col = header.index(column) if column else 1
        for row in reader:
            if not row:
                continue
            if row[0] not in pos:
                raise SpatialNMFError(f"{path}: unknown cell id {row[0]!r}")
            out[pos[row[0]]] = int(row[col])
    if (out < 0).any():
        raise SpatialNMFError(f"{path}: {int((out < 0).sum())} cells have no label")
    return out


def read_factors(path, cell_ids):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[0] != "cell_id":
            raise SpatialNMFError(f"{path}: expected a cell_id column")
        rows = {row[0]: [float(v) for v in row[1:]] for row in reader if row}
    missing = [c for c in cell_ids if c not in rows]
    if missing:
        raise SpatialNMFError(f"{path}: no factors for cell {missing[0]!r}")
    return np.array([rows[c] for c in cell_ids], dtype=np.float64)


# -- subcommands ---------------------------------------------------------------------------

def cmd_preprocess(args) -> int:
    ds = _load_input(args)
    if args.exclude_genes:
        names = [g.strip() for g in args.exclude_genes.read_text(encoding="utf-8").splitlines() if g.strip()]
        ds = drop_genes(ds, names)
    scores = read_scores(args.doublet_scores, ds.cell_ids) if args.doublet_scores else None
    out, report = preprocess(ds, args.min_cells, args.min_genes, args.target_sum, scores, args.doublet_threshold)
    d = _out_dir(args.out_dir)
    write_dataset(out, d)
    (d / "qc_report.json").write_text(json.dumps(report.as_dict(), indent=2) + "\n", encoding="utf-8")
    logger.info("kept %d/%d cells and %d/%d genes", out.n_cells, ds.n_cells, out.n_genes, ds.n_genes)
    return 0


def cmd_run(args) -> int:
    method = canonical_method(args.method)
    config = _pipeline_config(args)
    ds = _ensure_lognorm(_load_input(args), config.target_sum)
    markers = _markers(args, ds)
    emb = embed(ds, args.k, method, config)
    A = clustering_graph(emb.matrix, emb.spatial, effective_alpha(method, args.alpha), config)
    labeling = leiden(A, args.resolution, seed=args.seed, max_passes=config.max_passes,
                      n_starts=config.leiden_starts)
    report = report_for(ds, emb, labeling, args.resolution, config, markers=markers,
                        moran_graph=moran_weights(ds, emb, config))

    d = _out_dir(args.out_dir)
    write_labels(d / "labels.csv", ds.cell_ids, labeling.labels)
    write_reports_csv([report], d / "metrics.csv")
    write_reports_jsonl([report], d / "metrics.jsonl")
    if args.dump_factors:
        write_factors(d / "W.csv", emb.model.W, ds.cell_ids)
        write_factors(d / "W_s.csv", emb.matrix, ds.cell_ids)
    if args.dump_graph:
        write_edge_list(emb.spatial, d / "spatial_graph.csv", ds.cell_ids)
        write_edge_list(A, d / "cluster_graph.csv", ds.cell_ids)
    logger.info("%s k=%d rho=%r: %d clusters, CHAOS %.5f, Moran's I %.4f", method, args.k, args.resolution,
                labeling.n_clusters, report.chaos, report.morans_i)
    return 0


def cmd_sweep(args) -> int:
    overrides = dict(method=args.method, k_grid=args.k, rho_grid=args.rho, alpha=args.alpha,
                     beta=args.beta, steps=args.steps, seed=args.seed)
    if args.config:
        cfg = load_sweep_config(args.config, **overrides)
    else:
        cfg = SweepConfig(**{k: v for k, v in overrides.items() if v is not None})
    base = PipelineConfig()
    config = replace(base, r_contact=args.r_contact, r_radius=args.r_radius, knn_spatial=args.knn,
                     knn_feature=args.knn, nmf_max_iter=args.max_iter, top_m=args.top_m,
                     leiden_starts=args.leiden_starts,
                     silhouette_sample=args.silhouette_sample, moran_graph=args.moran_graph,
                     moran_input=args.moran_input, metric_embedding=args.metric_embedding,
                     workers=max(1, args.threads))
    ds = _ensure_lognorm(_load_input(args), config.target_sum)
    markers = _markers(args, ds)
    d = _out_dir(args.out_dir)
    reports = run_sweep(ds, cfg, config, markers=markers, workers=args.threads,
                        checkpoint_dir=d / "points", resume=args.resume)
    export_table(reports, d / "reports.csv")
    write_reports_jsonl(reports, d / "reports.jsonl")
    front = pareto_front(reports)
    export_table(front, d / "pareto.csv")
    failed = sum(r.failed for r in reports)
    logger.info("%d grid points, %d failed, %d on the Pareto front", len(reports), failed, len(front))
    return 0


def cmd_synth(args) -> int:
    spec = SyntheticSpec(args.n_cells, args.n_genes, args.n_domains, args.layout, args.program_strength,
                         args.noise_rate, args.seed)
    write_synthetic(spec, _out_dir(args.out_dir))
    return 0


def cmd_metrics(args) -> int:
    config = _pipeline_config(args)
    ds = _ensure_lognorm(_load_input(args), config.target_sum)
    labels = read_labels(args.labels, ds.cell_ids)
    factors = read_factors(args.factors, ds.cell_ids)
    if config.moran_graph == "knn":
        W = spatial_knn_graph(ds.coords, config.knn_spatial, workers=config.workers)
    else:
        W = hybrid_graph(ds.coords, config.r_contact, config.r_radius)
    report = evaluate(args.method, factors.shape[1], args.resolution, labels, ds.coords, factors, W,
                      X=ds.counts, markers=_markers(args, ds), top_m=config.top_m,
                      max_sample=config.silhouette_sample, seed=args.seed)
    d = _out_dir(args.out_dir)
    write_reports_csv([report], d / "metrics.csv")
    write_reports_jsonl([report], d / "metrics.jsonl")
    if args.truth:
        truth = read_labels(args.truth, ds.cell_ids)
        (d / "ari.txt").write_text(repr(ari(labels, truth)) + "\n", encoding="utf-8")
    return 0


# -- parser ------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spatialnmf",
                                     description="Spatially regularized NMF clustering of spatial transcriptomics.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="QC filtering and log-normalization")
    _add_input(p)
    p.add_argument("--min-cells", type=int, default=3, help="keep genes detected in at least this many cells")
    p.add_argument("--min-genes", type=int, default=200, help="keep cells expressing at least this many genes")
    p.add_argument("--target-sum", type=float, default=10_000.0)
    p.add_argument("--doublet-scores", type=Path, help="CSV cell_id,score")
    p.add_argument("--doublet-threshold", type=float, default=0.2)
    p.add_argument("--exclude-genes", type=Path, help="gene names to drop before QC, one per line")
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("run", help="embed, cluster and score one configuration")
    _add_input(p)
    p.add_argument("--method", choices=METHOD_CHOICES, default="hsnmf")
    p.add_argument("--k", type=int, default=10, help="number of NMF factors")
    p.add_argument("--resolution", type=float, default=0.2, help="Leiden resolution")
    _add_pipeline(p)
    p.add_argument("--dump-factors", action="store_true", help="also write W.csv and W_s.csv")
    p.add_argument("--dump-graph", action="store_true", help="also write the spatial and clustering edge lists")
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="grid search over k and resolution with Pareto selection")
    _add_input(p)
    p.add_argument("--config", type=Path, help="TOML file with sweep settings")
    p.add_argument("--method", choices=METHOD_CHOICES, default=None)
    p.add_argument("--k", type=int, nargs="+", default=None, help="k grid")
    p.add_argument("--rho", "--resolution", dest="rho", type=float, nargs="+", default=None,
                   help="resolution grid")
    _add_pipeline(p, sweep=True)
    p.add_argument("--resume", action="store_true", help="reuse finished grid points from out-dir/points")
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="write a synthetic dataset with known domains")
    p.add_argument("--n-cells", type=int, default=2000)
    p.add_argument("--n-genes", type=int, default=100)
    p.add_argument("--n-domains", type=int, default=4)
    p.add_argument("--layout", choices=LAYOUTS, default="voronoi")
    p.add_argument("--program-strength", type=float, default=0.5)
    p.add_argument("--noise-rate", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("metrics", help="score an existing labeling")
    _add_input(p)
    p.add_argument("--labels", type=Path, required=True, help="CSV cell_id,cluster")
    p.add_argument("--factors", type=Path, required=True, help="CSV cell_id,factor_1..factor_k")
    p.add_argument("--truth", type=Path, help="CSV cell_id,<label> with reference labels; writes ari.txt")
    p.add_argument("--method", default="external", help="method name recorded in the report")
    p.add_argument("--resolution", type=float, default=float("nan"), help="resolution recorded in the report")
    _add_pipeline(p)
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging()
    try:
        return args.func(args)
    except (SpatialNMFError, ValueError, OSError) as exc:
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
