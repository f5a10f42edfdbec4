import numpy as np
import pytest
import scipy.sparse as sp

from spatialnmf.nmf import frobenius_loss, nmf_fit, nndsvda_init, write_factors


def sparse_factors(rng, n, p, k):
    W = np.maximum(rng.uniform(-0.5, 1.0, (n, k)), 0)
    H = np.maximum(rng.uniform(-0.5, 1.0, (k, p)), 0)
    return W, H


def test_frobenius_hand_values():
    X = np.ones((2, 2))
    assert frobenius_loss(X, np.ones((2, 1)), np.full((1, 2), 0.5)) == pytest.approx(1.0)
    assert frobenius_loss(np.zeros((3, 2)), np.zeros((3, 1)), np.zeros((1, 2))) == 0.0
    W = np.array([[1.0, 2.0], [0.0, 1.0]])
    H = np.array([[1.0, 0.0], [3.0, 1.0]])
    assert frobenius_loss(W @ H, W, H) == 0.0


def test_frobenius_shape_mismatch_and_sparse():
    with pytest.raises(ValueError):
        frobenius_loss(np.ones((2, 2)), np.ones((3, 1)), np.ones((1, 2)))
    rng = np.random.default_rng(0)
    X = rng.random((30, 7))
    W, H = rng.random((30, 2)), rng.random((2, 7))
    assert frobenius_loss(sp.csr_matrix(X), W, H) == pytest.approx(np.sum((X - W @ H) ** 2), rel=1e-12)


def test_nndsvda_rank_one_exact():
    rng = np.random.default_rng(1)
    u, v = rng.random(12) + 0.1, rng.random(9) + 0.1
    X = np.outer(u, v)
    W, H = nndsvda_init(X, 1)
    assert np.linalg.norm(X - W @ H) / np.linalg.norm(X) < 1e-8


def test_nndsvda_strictly_positive():
    rng = np.random.default_rng(2)
    X = sp.random(40, 25, density=0.2, random_state=3, format="csr")
    W, H = nndsvda_init(X, 5)
    assert W.min() > 0 and H.min() > 0


def test_nndsvda_diagonal_fixture():
    X = np.diag([4.0, 3.0, 2.0, 1.0])
    W, H = nndsvda_init(X, 2)
    mean = X.mean()
    # the two leading singular directions are e1 and e2
    assert W[0, 0] == pytest.approx(2.0) and H[0, 0] == pytest.approx(2.0)
    assert W[1, 1] == pytest.approx(np.sqrt(3.0)) and H[1, 1] == pytest.approx(np.sqrt(3.0))
    assert W[2, 0] == pytest.approx(mean)
    uniform = np.sum((X - mean) ** 2)
    # the SVD part alone beats a uniform start; the mean fill of the zeros then costs
    # extra loss on this very sparse matrix (33.39 vs 23.75, same as the reference code)
    core_W = np.where(W == mean, 0.0, W)
    core_H = np.where(H == mean, 0.0, H)
    assert frobenius_loss(X, core_W, core_H) == pytest.approx(5.0)
    assert frobenius_loss(X, core_W, core_H) <= uniform
    assert frobenius_loss(X, W, H) == pytest.approx(33.3878556634357, rel=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_nndsvda_matches_reference(seed):
    nmf_mod = pytest.importorskip("sklearn.decomposition._nmf")
    rng = np.random.default_rng(seed)
    X = rng.random((30, 12)) * (rng.random((30, 12)) < 0.5)
    W, H = nndsvda_init(X, 4)
    W_ref, H_ref = nmf_mod._initialize_nmf(X, 4, init="nndsvda")
    np.testing.assert_allclose(W @ H, W_ref @ H_ref, rtol=1e-9, atol=1e-12)


def test_nndsvda_rejects_large_k():
    with pytest.raises(ValueError):
        nndsvda_init(np.ones((3, 5)), 4)


@pytest.mark.parametrize("seed", range(5))
def test_exact_rank_recovery(seed):
    rng = np.random.default_rng(seed)
    W, H = sparse_factors(rng, 60, 30, 2)
    X = W @ H
    model = nmf_fit(X, 2, max_iter=500, tol=0, seed=seed)
    assert np.linalg.norm(X - model.W @ model.H) / np.linalg.norm(X) < 1e-3


def test_loss_decreases_from_init_at_full_rank():
    rng = np.random.default_rng(4)
    X = rng.random((8, 6)) + 0.1
    model = nmf_fit(X, 6, max_iter=20)
    assert model.loss < model.init_loss


@pytest.mark.parametrize("k", [1, 3, 7])
def test_trace_monotone_and_factors_nonnegative(k):
    rng = np.random.default_rng(k)
    X = sp.random(80, 40, density=0.3, random_state=k, format="csr") * 5
    model = nmf_fit(X, k, max_iter=150, tol=0)
    trace = np.array(model.loss_trace)
    assert np.all(np.diff(trace) <= 1e-9)
    assert model.W.min() >= 0 and model.H.min() >= 0
    assert len(trace) == model.n_iter == 150


def test_trace_matches_direct_loss():
    rng = np.random.default_rng(5)
    X = rng.random((25, 12))
    model = nmf_fit(X, 3, max_iter=30, tol=0)
    assert model.loss_trace[-1] == pytest.approx(frobenius_loss(X, model.W, model.H), rel=1e-8, abs=1e-10)


def test_early_stop_and_determinism():
    rng = np.random.default_rng(6)
    X = rng.random((50, 20))
    a = nmf_fit(X, 4, max_iter=500, tol=1e-4, seed=3)
    b = nmf_fit(X, 4, max_iter=500, tol=1e-4, seed=3)
    assert a.n_iter < 500
    np.testing.assert_array_equal(a.W, b.W)
    np.testing.assert_array_equal(a.H, b.H)


def test_input_validation():
    X = np.ones((4, 4))
    X[0, 0] = np.nan
    with pytest.raises(ValueError, match="NaN"):
        nmf_fit(X, 2)
    with pytest.raises(ValueError):
        nmf_fit(-np.ones((3, 3)), 1)


def test_sparse_and_dense_agree():
    X = sp.random(40, 15, density=0.4, random_state=7, format="csr")
    a = nmf_fit(X, 3, max_iter=40, tol=0)
    b = nmf_fit(X.toarray(), 3, max_iter=40, tol=0)
    np.testing.assert_allclose(a.W, b.W, rtol=1e-8, atol=1e-10)


def test_write_factors(tmp_path):
    path = tmp_path / "W.csv"
    write_factors(path, np.array([[0.5, 1.0], [0.25, 0.0]]), ["a", "b"])
    assert path.read_text() == "cell_id,factor_1,factor_2\na,0.5,1.0\nb,0.25,0.0\n"
