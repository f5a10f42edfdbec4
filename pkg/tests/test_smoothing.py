import numpy as np
import pytest
import scipy.sparse as sp

from spatialnmf.graphs import SpatialGraph, diffusion_operator, hybrid_graph, spatial_knn_graph
from spatialnmf.smoothing import diffuse, diffuse_raw, dirichlet_energy, snmf_smooth


def graph(dense, kind="contact"):
    return SpatialGraph(sp.csr_matrix(np.asarray(dense, dtype=float)), kind)


def test_snmf_hand_example():
    G = graph([[0, 1, 1], [1, 0, 0], [1, 0, 0]], "spatial_knn")
    W = np.array([[9.0, 9.0], [1.0, 0.0], [0.0, 1.0]])
    out = snmf_smooth(W, G)
    np.testing.assert_allclose(out.W_s[0], [0.5, 0.5])
    assert out.method == "snmf_average"


def test_snmf_leave_one_out_on_complete_graph():
    rng = np.random.default_rng(0)
    W = rng.random((7, 3))
    G = graph(np.ones((7, 7)) - np.eye(7), "spatial_knn")
    expected = (W.sum(axis=0) - W) / 6
    np.testing.assert_allclose(snmf_smooth(W, G).W_s, expected)


def test_snmf_isolated_cell_warns():
    G = graph([[0, 1, 0], [1, 0, 0], [0, 0, 0]], "spatial_knn")
    W = np.array([[1.0], [2.0], [3.0]])
    with pytest.warns(RuntimeWarning):
        out = snmf_smooth(W, G)
    np.testing.assert_allclose(out.W_s.ravel(), [2.0, 1.0, 3.0])


def test_diffuse_path_graph_hand_values():
    P = diffusion_operator(graph([[0, 1, 0], [1, 0, 1], [0, 1, 0]]))
    out = diffuse(np.array([[1.0], [0.0], [0.0]]), P, beta=0.8, steps=1)
    np.testing.assert_allclose(out.W_s.ravel(), [0.6, 0.8 / 3, 0.0])
    assert out.method == "hsnmf_diffuse" and out.beta == 0.8 and out.steps == 1


def test_diffuse_fixed_points():
    rng = np.random.default_rng(1)
    coords = rng.uniform(0, 100, (40, 2))
    P = diffusion_operator(hybrid_graph(coords))
    W = rng.random((40, 4))
    np.testing.assert_array_equal(diffuse(W, P, beta=0.0, steps=3).W_s, W)
    identity = diffusion_operator(graph(np.zeros((40, 40))))
    np.testing.assert_allclose(diffuse(W, identity, 0.8, 2).W_s, W)
    const = np.tile([0.3, 1.2, 0.0, 5.0], (40, 1))
    np.testing.assert_allclose(diffuse(const, P, 0.8, 2).W_s, const, atol=1e-14)
    knn = spatial_knn_graph(coords, 5)
    np.testing.assert_allclose(snmf_smooth(const, knn).W_s, const, atol=1e-14)


def test_diffuse_composes_and_stays_nonnegative():
    rng = np.random.default_rng(2)
    P = diffusion_operator(hybrid_graph(rng.uniform(0, 100, (60, 2))))
    W = rng.random((60, 3))
    once = diffuse_raw(diffuse_raw(W, P, 0.5, 2), P, 0.5, 3)
    np.testing.assert_allclose(once, diffuse_raw(W, P, 0.5, 5), rtol=1e-12, atol=1e-15)
    assert diffuse_raw(W, P, 0.8, 4).min() >= 0


@pytest.mark.parametrize("beta", [0.2, 0.5, 0.8, 1.0])
def test_dirichlet_energy_does_not_increase(beta):
    rng = np.random.default_rng(3)
    G = hybrid_graph(rng.uniform(0, 60, (50, 2)))
    P = diffusion_operator(G)
    W = rng.random((50, 3))
    assert dirichlet_energy(diffuse_raw(W, P, beta, 1), G) <= dirichlet_energy(W, G) * (1 + 1e-12)


def test_shape_checks():
    P = diffusion_operator(graph(np.zeros((3, 3))))
    with pytest.raises(ValueError):
        diffuse(np.ones((4, 2)), P)
    with pytest.raises(ValueError):
        diffuse(np.ones((3, 2)), P, beta=1.5)
    with pytest.raises(ValueError):
        snmf_smooth(np.ones((4, 2)), graph(np.zeros((3, 3)), "spatial_knn"))
