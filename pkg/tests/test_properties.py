"""Randomized invariant checks driven by hypothesis."""
import math

import numpy as np
import scipy.sparse as sp
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import chaos_bruteforce, connected_within, morans_bruteforce, pareto_bruteforce, radius_bruteforce
from spatialnmf.dataset import Dataset, normalize_and_log
from spatialnmf.graphs import SpatialGraph, diffusion_operator, hybrid_graph, radius_graph
from spatialnmf.leiden import leiden, modularity
from spatialnmf.metrics import MetricReport, ari, chaos, morans_i, silhouette
from spatialnmf.nmf import nmf_fit
from spatialnmf.smoothing import diffuse_raw, dirichlet_energy
from spatialnmf.sweep import dominates, pareto_front

settings.register_profile("pkg", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pkg")

seeds = st.integers(0, 2**32 - 1)
finite = st.floats(-1e3, 1e3, allow_nan=False)


def random_graph(seed, n, density=0.3):
    rng = np.random.default_rng(seed)
    U = np.triu((rng.random((n, n)) < density) * rng.uniform(0.1, 3.0, (n, n)), 1)
    return U + U.T


def coords_for(seed, n, side=120.0):
    rng = np.random.default_rng(seed)
    xy = rng.uniform(0, side, (n, 2))
    xy[: n // 3] = np.round(xy[: n // 3] / 10) * 10  # lattice points give exact boundary distances
    return xy


@given(seeds, st.integers(3, 20), st.integers(2, 15), st.floats(1.0, 1e5))
def test_normalization_hits_target_sum(seed, n, p, target):
    rng = np.random.default_rng(seed)
    X = rng.poisson(2.0, (n, p)).astype(float)
    X[:, 0] += 1  # no empty cells
    ds = Dataset(sp.csr_matrix(X), [f"g{j}" for j in range(p)], [f"c{i}" for i in range(n)], rng.random((n, 2)))
    out = normalize_and_log(ds, target)
    assert out.is_lognorm and out.counts.min() >= 0
    np.testing.assert_allclose(np.expm1(out.counts.toarray()).sum(axis=1), target, rtol=1e-9)


@given(seeds, st.integers(2, 40), st.integers(2, 12), st.integers(1, 4))
@settings(max_examples=25)
def test_nmf_monotone_nonnegative(seed, n, p, k):
    k = min(k, n, p)
    X = np.random.default_rng(seed).random((n, p)) * (np.random.default_rng(seed + 1).random((n, p)) < 0.7)
    model = nmf_fit(X, k, max_iter=40, tol=0, seed=seed)
    assert model.W.min() >= 0 and model.H.min() >= 0
    assert np.all(np.diff(model.loss_trace) <= 1e-9 * max(1.0, model.loss_trace[0]))


@given(seeds, st.integers(1, 40), st.floats(5.0, 60.0), st.sampled_from(["unit", "gaussian"]))
def test_radius_graph_matches_oracle(seed, n, r, weight):
    xy = coords_for(seed, n)
    A = radius_graph(xy, r, weight=weight).adjacency
    dense = A.toarray()
    np.testing.assert_allclose(dense, radius_bruteforce(xy.tolist(), r, weight), atol=1e-12, rtol=0)
    assert abs(A - A.T).max() == 0 if A.nnz else True
    assert not dense.diagonal().any()


@given(seeds, st.integers(2, 60))
def test_diffusion_rows_stochastic_and_smoothing(seed, n):
    xy = coords_for(seed, n, side=300.0)
    G = hybrid_graph(xy)
    P = diffusion_operator(G)
    np.testing.assert_allclose(np.asarray(P.P.sum(axis=1)).ravel(), 1.0, atol=1e-12)
    W = np.random.default_rng(seed).random((n, 3))
    for beta in (0.2, 0.5, 0.8, 1.0):
        out = diffuse_raw(W, P, beta, 1)
        assert out.min() >= 0
        assert dirichlet_energy(out, G) <= dirichlet_energy(W, G) * (1 + 1e-12) + 1e-15
        assert out.max() <= W.max() + 1e-12 and out.min() >= W.min() - 1e-12


@given(seeds, st.integers(2, 40), st.floats(0.1, 2.0))
@settings(max_examples=30)
def test_leiden_output_contract(seed, n, gamma):
    A = random_graph(seed, n, 0.2)
    lab = leiden(A, gamma, seed=seed % 1000)
    labels = lab.labels
    assert labels.shape == (n,)
    assert set(labels) == set(range(lab.n_clusters))
    sizes = np.bincount(labels)
    assert np.all(np.diff(sizes) <= 0)
    assert connected_within(A, labels)
    if A.sum() > 0:
        assert math.isclose(lab.quality, modularity(A, labels, gamma), abs_tol=1e-12)
        assert lab.quality >= modularity(A, np.arange(n), gamma) - 1e-12
        assert np.all(np.diff(lab.quality_trace) >= -1e-12)


@given(seeds, st.integers(3, 40), st.integers(1, 5), finite, finite, st.floats(0.01, 100.0))
def test_chaos_matches_oracle_and_is_translation_scale_invariant(seed, n, c, dx, dy, scale):
    rng = np.random.default_rng(seed)
    xy = rng.uniform(0, 50, (n, 2))
    labels = rng.integers(0, c, n)
    labels[:2] = 0  # at least one non-singleton cluster
    base = chaos(xy, labels)
    assert math.isclose(base, chaos_bruteforce(xy, labels), abs_tol=1e-10)
    assert math.isclose(chaos(xy * scale + [dx, dy], labels), base, rel_tol=1e-9, abs_tol=1e-12)


@given(seeds, st.integers(3, 30), st.floats(-50, 50).filter(lambda a: abs(a) > 1e-3), finite)
def test_morans_matches_oracle_and_affine_invariance(seed, n, a, b):
    A = random_graph(seed, n, 0.4)
    y = np.random.default_rng(seed).normal(size=n)
    if A.sum() == 0:
        return
    base = morans_i(y, A)
    assert math.isclose(base, morans_bruteforce(y, A), abs_tol=1e-10)
    assert math.isclose(morans_i(a * y + b, A), base, rel_tol=1e-7, abs_tol=1e-9)


@given(st.lists(st.integers(0, 4), min_size=2, max_size=60), seeds)
def test_ari_symmetry_and_relabel_invariance(a, seed):
    a = np.array(a)
    rng = np.random.default_rng(seed)
    b = rng.integers(0, 3, a.size)
    assert math.isclose(ari(a, b), ari(b, a), abs_tol=1e-12)
    perm = rng.permutation(10)
    assert math.isclose(ari(perm[a], b), ari(a, b), abs_tol=1e-12)
    assert ari(a, perm[a]) == 1.0
    assert ari(a, b) <= 1.0 + 1e-12


@given(seeds, st.integers(4, 50), st.integers(2, 4))
def test_silhouette_in_range(seed, n, c):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3))
    labels = np.arange(n) % c
    s = silhouette(X, labels)
    assert -1.0 <= s <= 1.0


objective_rows = st.lists(st.tuples(*[st.integers(0, 3)] * 4), min_size=1, max_size=25)


def as_reports(rows):
    return [MetricReport("hsnmf", i, 0.1, 2, *map(float, r)) for i, r in enumerate(rows)]


@given(objective_rows, seeds)
def test_pareto_properties(rows, seed):
    reports = as_reports(rows)
    front = pareto_front(reports)
    assert front == pareto_bruteforce(reports)
    assert all(any(f is r for r in reports) for f in front)
    for r in reports:
        if not any(r is f for f in front):
            assert any(dominates(f, r) for f in front)
    perm = np.random.default_rng(seed).permutation(len(reports))
    assert {id(r) for r in pareto_front([reports[i] for i in perm])} == {id(r) for r in front}
    worse = MetricReport("hsnmf", 99, 0.1, 2, 4.0, -1.0, -1.0, 4.0)
    assert {id(r) for r in pareto_front(reports + [worse])} == {id(r) for r in front}


@given(st.sampled_from(["nmf", "snmf", "hsnmf"]), st.integers(1, 50), st.floats(0.01, 5.0),
       st.integers(0, 100), st.lists(st.one_of(st.floats(allow_nan=True, allow_infinity=True),
                                                st.floats(-10, 10)), min_size=7, max_size=7))
def test_report_serialization_round_trip(method, k, rho, clusters, values):
    r = MetricReport(method, k, rho, clusters, *values)
    back = MetricReport.from_json(r.to_json())
    assert back.row() == r.row()
