"""Loading, quality control and normalization of spatial expression data.

On-disk layout (one directory per dataset)::

    matrix.mtx   Matrix Market coordinate file, cells as rows, 1-indexed
    genes.txt    one gene name per line
    cells.txt    one cell id per line
    coords.csv   header ``cell_id,x,y``; micrometers

A preprocessed matrix carries the comment line ``%spatialnmf lognorm=true`` so
the log-normalized state survives a round trip.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.io
import scipy.sparse as sp

from .errors import DatasetError, DegenerateDatasetError

logger = logging.getLogger(__name__)

LOGNORM_TAG = "spatialnmf lognorm=true"
MATRIX_FILE = "matrix.mtx"
GENES_FILE = "genes.txt"
CELLS_FILE = "cells.txt"
COORDS_FILE = "coords.csv"


@dataclass(frozen=True, eq=False)
class Dataset:
    """Cell-by-gene matrix with per-cell centroids.

    ``counts`` is a CSR matrix (cells x genes). Instances are treated as
    immutable; every transform returns a new ``Dataset``.
    """

    counts: sp.csr_matrix
    gene_names: tuple[str, ...]
    cell_ids: tuple[str, ...]
    coords: np.ndarray
    is_lognorm: bool = False
    meta: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        counts = self.counts
        if not sp.issparse(counts):
            counts = sp.csr_matrix(np.asarray(counts, dtype=np.float64))
        counts = sp.csr_matrix(counts, dtype=np.float64)
        counts.eliminate_zeros()
        counts.sort_indices()
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "gene_names", tuple(self.gene_names))
        object.__setattr__(self, "cell_ids", tuple(self.cell_ids))
        coords = np.ascontiguousarray(self.coords, dtype=np.float64).reshape(-1, 2)
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)

        n, p = counts.shape
        if counts.nnz and counts.data.min() < 0:
            raise DatasetError("counts contain negative entries")
        if not np.all(np.isfinite(counts.data)):
            raise DatasetError("counts contain non-finite entries")
        if len(self.gene_names) != p:
            raise DatasetError(f"{len(self.gene_names)} gene names for {p} matrix columns")
        if len(self.cell_ids) != n:
            raise DatasetError(f"{len(self.cell_ids)} cell ids for {n} matrix rows")
        if coords.shape[0] != n:
            raise DatasetError(f"{coords.shape[0]} coordinate rows for {n} cells")
        _check_unique(self.gene_names, "gene name")
        _check_unique(self.cell_ids, "cell id")

    @property
    def n_cells(self) -> int:
        return self.counts.shape[0]

    @property
    def n_genes(self) -> int:
        return self.counts.shape[1]

    def subset(self, cells=None, genes=None) -> "Dataset":
        """Row/column subset by boolean mask or index array; order preserved."""
        counts = self.counts
        cell_ids, gene_names, coords = self.cell_ids, self.gene_names, self.coords
        if cells is not None:
            idx = _as_index(cells, self.n_cells)
            counts = counts[idx]
            cell_ids = tuple(cell_ids[i] for i in idx)
            coords = coords[idx]
        if genes is not None:
            idx = _as_index(genes, self.n_genes)
            counts = counts[:, idx]
            gene_names = tuple(gene_names[i] for i in idx)
        return replace(self, counts=counts, cell_ids=cell_ids, gene_names=gene_names, coords=coords)


def _as_index(sel, size):
    sel = np.asarray(sel)
    if sel.dtype == bool:
        if sel.shape != (size,):
            raise ValueError("boolean mask has the wrong length")
        return np.flatnonzero(sel)
    return sel.astype(np.intp)


def _check_unique(names: Sequence[str], what: str, path=None):
    seen = set()
    for name in names:
        if name in seen:
            raise DatasetError(f"duplicate {what} {name!r}", path)
        seen.add(name)


def _read_lines(path: Path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        lines = [line.rstrip("\r\n") for line in fh]
    while lines and not lines[-1].strip():
        lines.pop()
    return lines


def read_coords(path, cell_ids: Sequence[str]) -> np.ndarray:
    """Read a ``cell_id,x,y`` CSV and return coordinates in ``cell_ids`` order."""
    path = Path(path)
    pos = {cid: i for i, cid in enumerate(cell_ids)}
    coords = np.full((len(cell_ids), 2), np.nan)
    seen = np.zeros(len(cell_ids), dtype=bool)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["cell_id", "x", "y"]:
            raise DatasetError("expected header 'cell_id,x,y'", path)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            cid = row[0]
            if cid not in pos:
                raise DatasetError(f"unknown cell id {cid!r} on line {lineno}", path)
            i = pos[cid]
            if seen[i]:
                raise DatasetError(f"cell id {cid!r} listed twice", path)
            try:
                coords[i] = float(row[1]), float(row[2])
            except (IndexError, ValueError):
                raise DatasetError(f"bad coordinate row on line {lineno}", path) from None
            seen[i] = True
    if not seen.all():
        missing = cell_ids[int(np.flatnonzero(~seen)[0])]
        raise DatasetError(
            f"{int((~seen).sum())} cells have no coordinates (first: {missing!r})", path
        )
    return coords


def read_scores(path, cell_ids: Sequence[str]) -> np.ndarray:
    """Read a ``cell_id,score`` CSV (e.g. doublet scores) aligned to ``cell_ids``."""
    path = Path(path)
    pos = {cid: i for i, cid in enumerate(cell_ids)}
    scores = np.full(len(cell_ids), np.nan)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["cell_id", "score"]:
            raise DatasetError("expected header 'cell_id,score'", path)
        for row in reader:
            if not row:
                continue
            if row[0] not in pos:
                raise DatasetError(f"unknown cell id {row[0]!r}", path)
            scores[pos[row[0]]] = float(row[1])
    return scores


def load_dataset(matrix_path, genes_path, cells_path, coords_path) -> Dataset:
    """Load a dataset from the Matrix Market / list / CSV file quartet."""
    matrix_path = Path(matrix_path)
    genes = _read_lines(Path(genes_path))
    cells = _read_lines(Path(cells_path))
    _check_unique(genes, "gene name", genes_path)
    _check_unique(cells, "cell id", cells_path)
    try:
        mat = scipy.io.mmread(str(matrix_path))
    except Exception as exc:
        raise DatasetError(f"cannot parse Matrix Market file ({exc})", matrix_path) from exc
    mat = sp.csr_matrix(mat, dtype=np.float64)
    n, p = mat.shape
    if n != len(cells):
        raise DatasetError(
            f"matrix has {n} rows but {cells_path} lists {len(cells)} cell ids", matrix_path
        )
    if p != len(genes):
        raise DatasetError(
            f"matrix has {p} columns but {genes_path} lists {len(genes)} genes", matrix_path
        )
    if mat.nnz and mat.data.min() < 0:
        raise DatasetError("matrix contains negative entries", matrix_path)
    coords = read_coords(coords_path, cells)
    return Dataset(mat, genes, cells, coords, is_lognorm=_has_lognorm_tag(matrix_path))


def load_dataset_dir(directory) -> Dataset:
    d = Path(directory)
    return load_dataset(d / MATRIX_FILE, d / GENES_FILE, d / CELLS_FILE, d / COORDS_FILE)


def _has_lognorm_tag(path: Path) -> bool:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("%"):
                return False
            if LOGNORM_TAG in line:
                return True
    return False


def write_dataset(ds: Dataset, directory) -> Path:
    """Write ``ds`` in the on-disk layout read by :func:`load_dataset_dir`."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    comment = LOGNORM_TAG if ds.is_lognorm else ""
    scipy.io.mmwrite(
        str(d / MATRIX_FILE), ds.counts.tocoo(), comment=comment, field="real", precision=17
    )
    (d / GENES_FILE).write_text("".join(g + "\n" for g in ds.gene_names), encoding="utf-8")
    (d / CELLS_FILE).write_text("".join(c + "\n" for c in ds.cell_ids), encoding="utf-8")
    with open(d / COORDS_FILE, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell_id", "x", "y"])
        for cid, (x, y) in zip(ds.cell_ids, ds.coords):
            w.writerow([cid, repr(float(x)), repr(float(y))])
    return d


def _require_raw(ds: Dataset, op: str):
    if ds.is_lognorm:
        raise DatasetError(f"{op} expects raw counts, got a log-normalized dataset")


def filter_genes(ds: Dataset, min_cells: int = 3) -> Dataset:
    """Keep genes with a nonzero count in at least ``min_cells`` cells.

    Only the sparsity pattern matters, so raw and log-normalized data filter alike.
    """
    support = ds.counts.getnnz(axis=0)
    keep = support >= min_cells
    if not keep.any():
        raise DegenerateDatasetError(f"no gene is detected in >= {min_cells} cells")
    if keep.all():
        return ds
    logger.info("filter_genes: dropping %d of %d genes", int((~keep).sum()), ds.n_genes)
    return ds.subset(genes=keep)


def filter_cells(ds: Dataset, min_genes: int = 200) -> Dataset:
    """Keep cells with at least ``min_genes`` detected genes."""
    support = ds.counts.getnnz(axis=1)
    keep = support >= min_genes
    if not keep.any():
        raise DegenerateDatasetError(f"no cell has >= {min_genes} detected genes")
    if keep.all():
        return ds
    logger.info("filter_cells: dropping %d of %d cells", int((~keep).sum()), ds.n_cells)
    return ds.subset(cells=keep)


def filter_doublets(ds: Dataset, scores, threshold: float = 0.2) -> Dataset:
    """Drop cells whose externally computed doublet score exceeds ``threshold``.

    Cells without a score (NaN) are kept.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (ds.n_cells,):
        raise DatasetError(f"{scores.shape[0]} doublet scores for {ds.n_cells} cells")
    keep = ~(scores > threshold)
    if not keep.any():
        raise DegenerateDatasetError("every cell exceeds the doublet threshold")
    return ds if keep.all() else ds.subset(cells=keep)


def drop_genes(ds: Dataset, names: Iterable[str]) -> Dataset:
    """Remove the named genes (e.g. negative-control probes); unknown names are ignored."""
    names = set(names)
    keep = np.array([g not in names for g in ds.gene_names], dtype=bool)
    if not keep.any():
        raise DegenerateDatasetError("every gene is on the exclude list")
    return ds if keep.all() else ds.subset(genes=keep)


def normalize_and_log(ds: Dataset, target_sum: float = 10_000.0) -> Dataset:
    """Scale every cell to ``target_sum`` total counts, then apply ``log(x + 1)``."""
    _require_raw(ds, "normalize_and_log")
    if target_sum <= 0:
        raise ValueError("target_sum must be positive")
    counts = ds.counts.copy()
    totals = np.asarray(counts.sum(axis=1)).ravel()
    empty = np.flatnonzero(totals <= 0)
    if empty.size:
        raise DatasetError(
            f"{empty.size} cells have zero total counts (first: {ds.cell_ids[empty[0]]!r}); "
            "run filter_cells before normalizing"
        )
    scale = target_sum / totals
    counts.data *= np.repeat(scale, np.diff(counts.indptr))
    np.log1p(counts.data, out=counts.data)
    return replace(ds, counts=counts, is_lognorm=True)


@dataclass
class QCReport:
    n_cells_in: int
    n_genes_in: int
    dropped_genes: list[str]
    dropped_cells: list[str]
    dropped_doublets: list[str]

    def as_dict(self) -> dict:
        return {
            "n_cells_in": self.n_cells_in,
            "n_genes_in": self.n_genes_in,
            "n_cells_out": self.n_cells_in - len(self.dropped_cells) - len(self.dropped_doublets),
            "n_genes_out": self.n_genes_in - len(self.dropped_genes),
            "dropped_genes": self.dropped_genes,
            "dropped_cells": self.dropped_cells,
            "dropped_doublets": self.dropped_doublets,
        }


def preprocess(
    ds: Dataset,
    min_cells: int = 3,
    min_genes: int = 200,
    target_sum: float = 10_000.0,
    doublet_scores=None,
    doublet_threshold: float = 0.2,
) -> tuple[Dataset, QCReport]:
    """Doublet threshold (optional), gene filter, cell filter, then normalization.

    Each filter runs once; genes are not re-filtered after cells are removed.
    Already log-normalized input is filtered but not normalized again.
    """
    n0, p0 = ds.n_cells, ds.n_genes
    dropped_doublets: list[str] = []
    if doublet_scores is not None:
        before = ds.cell_ids
        ds = filter_doublets(ds, doublet_scores, doublet_threshold)
        kept = set(ds.cell_ids)
        dropped_doublets = [c for c in before if c not in kept]
    genes_before = ds.gene_names
    ds = filter_genes(ds, min_cells)
    kept_genes = set(ds.gene_names)
    cells_before = ds.cell_ids
    ds = filter_cells(ds, min_genes)
    kept_cells = set(ds.cell_ids)
    report = QCReport(
        n0,
        p0,
        [g for g in genes_before if g not in kept_genes],
        [c for c in cells_before if c not in kept_cells],
        dropped_doublets,
    )
    if ds.is_lognorm:
        return ds, report
    return normalize_and_log(ds, target_sum), report
