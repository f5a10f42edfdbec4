"""Time the compiled and pure-Python Leiden kernels on pipeline-shaped graphs.

    python benchmarks/bench_leiden.py --sizes 1000 5000 20000 --repeats 3

Each graph is the hSNMF clustering graph of a synthetic dataset, so the
degree distribution matches real use. Both backends must return identical
labels; the script exits non-zero if they do not.
"""
import argparse
import sys
import time

import numpy as np

from spatialnmf.dataset import normalize_and_log
from spatialnmf.leiden import BACKEND, leiden
from spatialnmf.pipeline import clustering_graph, embed
from spatialnmf.synthetic import SyntheticSpec, generate


def build_graph(n_cells: int, seed: int):
    ds, _ = generate(SyntheticSpec(n_cells, 100, 6, "voronoi", seed=seed))
    ds = normalize_and_log(ds)
    emb = embed(ds, 10, "hsnmf")
    return clustering_graph(emb.matrix, emb.spatial, 0.5)


def best_time(fn, repeats):
    times, result = [], None
    for _ in range(repeats):
        t = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - t)
    return min(times), result


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[1000, 5000, 20000])
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--resolution", type=float, default=0.2)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if BACKEND != "cython":
        print("compiled kernel not available; build with `pip install -e . --no-build-isolation`")
        return 1

    print(f"{'cells':>8} {'edges':>10} {'cython s':>10} {'python s':>10} {'speedup':>8} {'clusters':>9}")
    mismatch = False
    for n in args.sizes:
        A = build_graph(n, args.seed)
        t_cy, cy = best_time(lambda: leiden(A, args.resolution, seed=args.seed, backend="cython", n_starts=1),
                             args.repeats)
        t_py, py = best_time(lambda: leiden(A, args.resolution, seed=args.seed, backend="python", n_starts=1),
                             args.repeats)
        same = np.array_equal(cy.labels, py.labels)
        mismatch |= not same
        print(f"{n:>8} {A.adjacency.nnz // 2:>10} {t_cy:>10.3f} {t_py:>10.3f} {t_py / t_cy:>7.1f}x "
              f"{cy.n_clusters:>9}{'' if same else '  LABELS DIFFER'}")
    return 1 if mismatch else 0


if __name__ == "__main__":
    sys.exit(main())
