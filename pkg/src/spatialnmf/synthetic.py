"""Synthetic spatial expression data with planted tissue domains.

Cells are scattered uniformly over a square whose side is chosen so that the
expected median nearest-neighbour spacing is ``spacing`` micrometers (15 by
default, inside the 20 um contact radius). Each domain owns a disjoint block of
signature genes; counts are Poisson with rate ``program_strength`` on the
domain's own block plus ``noise_rate`` on every gene.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .dataset import Dataset, write_dataset

LAYOUTS = ("voronoi", "stripes", "rings")


@dataclass(frozen=True)
class SyntheticSpec:
    n_cells: int
    n_genes: int
    n_domains: int
    domain_layout: str = "voronoi"
    program_strength: float = 0.5
    noise_rate: float = 0.5
    seed: int = 0
    spacing: float = 15.0

    def __post_init__(self):
        if self.n_domains < 2:
            raise ValueError("n_domains must be >= 2")
        if self.n_genes < self.n_domains:
            raise ValueError("n_genes must be >= n_domains")
        if self.n_cells < self.n_domains:
            raise ValueError("n_cells must be >= n_domains")
        if self.domain_layout not in LAYOUTS:
            raise ValueError(f"domain_layout must be one of {LAYOUTS}")
        if not self.program_strength > 0:
            raise ValueError("program_strength must be > 0")
        if self.noise_rate < 0:
            raise ValueError("noise_rate must be >= 0")

    @property
    def side(self) -> float:
        # Poisson process: median NN distance = sqrt(ln 2 / (pi * density))
        density = math.log(2.0) / (math.pi * self.spacing**2)
        return math.sqrt(self.n_cells / density)


def signature_blocks(n_genes: int, n_domains: int) -> list[np.ndarray]:
    """Gene indices of each domain's signature block (equal sizes, leftovers unused)."""
    size = n_genes // n_domains
    return [np.arange(d * size, (d + 1) * size) for d in range(n_domains)]


def _assign(layout, xy, side, n_domains, rng):
    if layout == "stripes":
        return np.minimum((xy[:, 0] / side * n_domains).astype(np.int64), n_domains - 1)
    if layout == "rings":
        # equal-area annuli around the centre, the outermost one absorbing the corners
        r = np.hypot(xy[:, 0] - side / 2, xy[:, 1] - side / 2)
        r_max = side / 2
        edges = r_max * np.sqrt(np.arange(1, n_domains) / n_domains)
        return np.searchsorted(edges, r, side="right").astype(np.int64)
    centres = rng.uniform(0.0, side, size=(n_domains, 2))
    d2 = ((xy[:, None, :] - centres[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1).astype(np.int64)


def generate(spec: SyntheticSpec) -> tuple[Dataset, np.ndarray]:
    """Draw a dataset and its ground-truth domain labels; deterministic in ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    side = spec.side
    for _ in range(1000):
        xy = rng.uniform(0.0, side, size=(spec.n_cells, 2))
        labels = _assign(spec.domain_layout, xy, side, spec.n_domains, rng)
        if np.bincount(labels, minlength=spec.n_domains).min() > 0:
            break
    else:  # pragma: no cover - needs a pathologically small n_cells
        raise RuntimeError("could not place every domain; increase n_cells")

    counts = _draw_counts(spec, labels, rng)
    width = len(str(spec.n_cells - 1))
    cell_ids = [f"cell{i:0{width}d}" for i in range(spec.n_cells)]
    gwidth = len(str(spec.n_genes - 1))
    genes = [f"gene{j:0{gwidth}d}" for j in range(spec.n_genes)]
    ds = Dataset(counts, genes, cell_ids, xy, is_lognorm=False)
    return ds, labels


def _draw_counts(spec, labels, rng, chunk=20_000):
    blocks = signature_blocks(spec.n_genes, spec.n_domains)
    parts = []
    for start in range(0, spec.n_cells, chunk):
        lab = labels[start:start + chunk]
        rate = np.full((lab.size, spec.n_genes), spec.noise_rate, dtype=np.float64)
        for d, block in enumerate(blocks):
            rows = np.flatnonzero(lab == d)
            rate[np.ix_(rows, block)] += spec.program_strength
        parts.append(sp.csr_matrix(rng.poisson(rate).astype(np.float64)))
    return sp.vstack(parts, format="csr")


def rate_matrix(spec: SyntheticSpec, labels) -> np.ndarray:
    """Expected counts excluding noise: exactly rank ``n_domains``."""
    labels = np.asarray(labels)
    rates = np.zeros((labels.size, spec.n_genes))
    for d, block in enumerate(signature_blocks(spec.n_genes, spec.n_domains)):
        rates[np.ix_(labels == d, block)] = spec.program_strength
    return rates


def marker_sets(spec: SyntheticSpec, gene_names) -> dict[str, list[str]]:
    return {
        f"domain{d}": [gene_names[j] for j in block]
        for d, block in enumerate(signature_blocks(spec.n_genes, spec.n_domains))
    }


def write_synthetic(spec: SyntheticSpec, directory) -> Path:
    """Write the dataset files plus ``truth.csv`` and ``markers.tsv``."""
    ds, labels = generate(spec)
    d = write_dataset(ds, directory)
    with open(d / "truth.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell_id", "domain"])
        for cid, lab in zip(ds.cell_ids, labels):
            w.writerow([cid, int(lab)])
    with open(d / "markers.tsv", "w", encoding="utf-8") as fh:
        for name, genes in marker_sets(spec, ds.gene_names).items():
            for g in genes:
                fh.write(f"{name}\t{g}\n")
    return d
