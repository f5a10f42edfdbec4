"""Grid search over (k, resolution) with per-point metrics and Pareto selection.

The embedding and clustering graph depend only on k, so each k is one unit of
work that loops over every resolution. Units run in a bounded thread pool; the
heavy parts (BLAS products, KD-tree queries, the compiled Leiden kernels)
release the GIL. Every grid point gets its own Leiden seed derived from the
sweep seed, so results do not depend on scheduling.
"""
from __future__ import annotations

import logging
import os
import sys
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import Dataset
from .leiden import leiden
from .metrics import MetricReport, reports_to_csv
from .pipeline import METHODS, PipelineConfig, clustering_graph, effective_alpha, embed, moran_weights, report_for

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

logger = logging.getLogger(__name__)

DEFAULT_K_GRID = (5, 10, 15, 20, 25, 30, 35, 40)
DEFAULT_RHO_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.2)
METHOD_ALIASES = {"nmf_plain": "nmf", "plain": "nmf"}


def canonical_method(name: str) -> str:
    name = METHOD_ALIASES.get(name, name)
    if name not in METHODS:
        raise ValueError(f"unknown method {name!r}; expected one of {METHODS + tuple(METHOD_ALIASES)}")
    return name


@dataclass(frozen=True)
class SweepConfig:
    method: str = "hsnmf"
    k_grid: tuple[int, ...] = DEFAULT_K_GRID
    rho_grid: tuple[float, ...] = DEFAULT_RHO_GRID
    alpha: float = 0.5
    beta: float = 0.8
    steps: int = 2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "method", canonical_method(self.method))
        object.__setattr__(self, "k_grid", tuple(int(k) for k in self.k_grid))
        object.__setattr__(self, "rho_grid", tuple(float(r) for r in self.rho_grid))
        if not self.k_grid or not self.rho_grid:
            raise ValueError("k_grid and rho_grid must be nonempty")
        if min(self.k_grid) < 1:
            raise ValueError("k values must be >= 1")
        if min(self.rho_grid) <= 0:
            raise ValueError("resolutions must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")

    @property
    def points(self) -> list[tuple[int, float]]:
        return [(k, rho) for k in self.k_grid for rho in self.rho_grid]


def load_sweep_config(path, **overrides) -> SweepConfig:
    """Read a TOML file whose top-level keys are ``SweepConfig`` field names.

    A ``[sweep]`` table is accepted as well. Keyword overrides win over the file.
    """
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    data = data.get("sweep", data)
    known = set(SweepConfig.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"{path}: unknown sweep keys {sorted(unknown)}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return SweepConfig(**data)


def point_seed(seed: int, k: int, rho: float) -> int:
    return (int(seed) ^ zlib.crc32(f"{int(k)}:{float(rho)!r}".encode())) & 0xFFFFFFFF


def _checkpoint_path(directory: Path, method: str, k: int, rho: float) -> Path:
    return directory / f"{method}_k{k}_rho{float(rho)!r}.json"


def _write_atomic(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _error_report(method, k, rho, exc) -> MetricReport:
    nan = float("nan")
    return MetricReport(method, int(k), float(rho), 0, nan, nan, nan, nan, error=f"{type(exc).__name__}: {exc}")


def _run_k(ds, cfg: SweepConfig, pconf: PipelineConfig, k, markers, checkpoint_dir, resume, progress):
    done = {}
    if checkpoint_dir is not None and resume:
        for rho in cfg.rho_grid:
            path = _checkpoint_path(checkpoint_dir, cfg.method, k, rho)
            if path.exists():
                done[rho] = MetricReport.from_json(path.read_text(encoding="utf-8"))
    todo = [rho for rho in cfg.rho_grid if rho not in done]

    out = dict(done)
    if todo:
        try:
            emb = embed(ds, k, cfg.method, pconf)
            A = clustering_graph(emb.matrix, emb.spatial, effective_alpha(cfg.method, cfg.alpha), pconf)
            W = moran_weights(ds, emb, pconf)
        except Exception as exc:  # noqa: BLE001 - recorded as error rows
            logger.warning("k=%d: embedding failed: %s", k, exc)
            emb = None
            err = exc
        for rho in todo:
            if emb is None:
                rep = _error_report(cfg.method, k, rho, err)
            else:
                try:
                    lab = leiden(A, rho, seed=point_seed(cfg.seed, k, rho), max_passes=pconf.max_passes,
                                 n_starts=pconf.leiden_starts)
                    rep = report_for(ds, emb, lab, rho, pconf, markers=markers, moran_graph=W)
                except Exception as exc:  # noqa: BLE001
                    rep = _error_report(cfg.method, k, rho, exc)
            if checkpoint_dir is not None and not rep.failed:
                _write_atomic(_checkpoint_path(checkpoint_dir, cfg.method, k, rho), rep.to_json() + "\n")
            out[rho] = rep
            if progress:
                progress(rep)
    return [out[rho] for rho in cfg.rho_grid]


def _log_point(rep: MetricReport):
    if rep.failed:
        logger.info("%s k=%d rho=%r FAILED %s", rep.method, rep.k, rep.resolution, rep.error)
    else:
        logger.info("%s k=%d rho=%r clusters=%d chaos=%.5f moran=%.4f", rep.method, rep.k,
                    rep.resolution, rep.clusters, rep.chaos, rep.morans_i)


def run_sweep(ds: Dataset, cfg: SweepConfig = SweepConfig(), config: PipelineConfig | None = None,
              markers=None, workers: int = 1, checkpoint_dir=None, resume: bool = False) -> list[MetricReport]:
    """One report per grid point, ordered k-major then by resolution.

    With ``checkpoint_dir`` each finished point is stored as JSON; with
    ``resume`` stored points are reused instead of recomputed. Failed points
    come back as reports whose ``error`` field is set.
    """
    pconf = replace(config or PipelineConfig(), alpha=cfg.alpha, beta=cfg.beta, steps=cfg.steps, seed=cfg.seed)
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
    workers = max(1, min(int(workers), len(cfg.k_grid)))

    def unit(k):
        return _run_k(ds, cfg, pconf, k, markers, checkpoint_dir, resume, _log_point)

    if workers == 1:
        groups = [unit(k) for k in cfg.k_grid]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            groups = list(pool.map(unit, cfg.k_grid))
    return [rep for g in groups for rep in g]


# -- Pareto selection -------------------------------------------------------------------

def _objectives(reports: Sequence[MetricReport]) -> np.ndarray:
    """Rows of objectives oriented so that smaller is better."""
    return np.array([[r.chaos, -r.morans_i, -r.silhouette, r.dbi] for r in reports], dtype=np.float64).reshape(-1, 4)


def dominates(a: MetricReport, b: MetricReport) -> bool:
    oa, ob = _objectives([a, b])
    return bool(np.all(oa <= ob) and np.any(oa < ob))


def pareto_front(reports: Sequence[MetricReport]) -> list[MetricReport]:
    """Reports that no other report dominates on CHAOS, Moran's I, silhouette and DBI.

    Failed reports and reports with a NaN objective are never on the front.
    Exact ties are all kept. Input order is preserved.
    """
    valid = [r for r in reports if not r.failed and not np.isnan(_objectives([r])).any()]
    if not valid:
        return []
    obj = _objectives(valid)
    keep = np.ones(len(valid), dtype=bool)
    for i in range(len(valid)):
        le = np.all(obj <= obj[i], axis=1)
        lt = np.any(obj < obj[i], axis=1)
        keep[i] = not np.any(le & lt)
    return [r for r, k in zip(valid, keep) if k]


def sort_reports(reports: Sequence[MetricReport]) -> list[MetricReport]:
    return sorted(reports, key=lambda r: (r.method, r.k, r.resolution))


def export_table(reports: Sequence[MetricReport], path) -> Path:
    path = Path(path)
    path.write_text(reports_to_csv(sort_reports(reports)), encoding="utf-8")
    return path

