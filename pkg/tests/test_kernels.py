import numpy as np
import pytest

from tensormtl import (
    CpFactors,
    DualSharedFactor,
    GramCache,
    KernelSpec,
    TaskGrid,
    TensorMtlError,
    coupled_gram,
    kernel_eval,
    kernel_matrix,
    latent_features,
    mixing_matrix,
)


def test_kernel_spec_validation():
    with pytest.raises(ValueError):
        KernelSpec("rbf")
    with pytest.raises(ValueError):
        KernelSpec("rbf", rbf_gamma=-1.0)
    with pytest.raises(ValueError):
        KernelSpec("linear", rbf_gamma=1.0)
    with pytest.raises(ValueError):
        KernelSpec("poly")


def test_kernel_eval_examples():
    rbf = KernelSpec("rbf", rbf_gamma=1.0)
    x = np.array([0.3, -1.2])
    assert kernel_eval(rbf, x, x) == 1.0
    e1 = np.array([1.0, 0.0])
    assert kernel_eval(KernelSpec(), e1, e1) == 1.0
    assert kernel_eval(rbf, np.array([0.0]), np.array([1.0])) == pytest.approx(
        np.exp(-1.0), rel=1e-12
    )


def test_kernel_eval_dimension_mismatch():
    with pytest.raises(TensorMtlError):
        kernel_eval(KernelSpec(), np.array([1.0]), np.array([1.0, 2.0]))
    with pytest.raises(TensorMtlError):
        kernel_matrix(KernelSpec(), np.ones((2, 3)), np.ones((2, 4)))


def test_gram_cache_rbf_diagonal_exact_and_symmetric():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((20, 6))
    cache = GramCache(KernelSpec("rbf", rbf_gamma=0.3), X)
    assert np.array_equal(np.diagonal(cache.matrix), np.ones(20))
    assert np.array_equal(cache.matrix, cache.matrix.T)
    assert cache.matrix.min() >= 0.0


def test_gram_cache_immutable_and_subset():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((10, 3))
    cache = GramCache(KernelSpec(), X)
    with pytest.raises(ValueError):
        cache.matrix[0, 0] = 5.0
    idx = np.array([1, 4, 7])
    sub = cache.subset(idx)
    np.testing.assert_array_equal(sub.matrix, cache.matrix[np.ix_(idx, idx)])


def _random_setup(rng, m=9, tasks=3, rank=2, d=4):
    grid = TaskGrid((tasks,))
    f = CpFactors(rank, [rng.standard_normal((tasks, rank))])
    X = rng.standard_normal((m, d))
    task_of = rng.integers(0, tasks, size=m)
    y = rng.choice([-1.0, 1.0], size=m)
    K = kernel_matrix(KernelSpec(), X, X)
    return grid, f, X, task_of, y, K


def test_coupled_gram_identical_mixing_scales_plain_gram():
    grid = TaskGrid((3,))
    row = np.array([1.5, -0.5])
    f = CpFactors(2, [np.tile(row, (3, 1))])
    rng = np.random.default_rng(2)
    X = rng.standard_normal((8, 3))
    K = kernel_matrix(KernelSpec(), X, X)
    task_of = rng.integers(0, 3, size=8)
    Q = coupled_gram(K, mixing_matrix(f, grid), task_of, labels=np.ones(8))
    np.testing.assert_allclose(Q, float(row @ row) * K)


def test_coupled_gram_orthogonal_mixing_is_block_diagonal():
    grid = TaskGrid((2,))
    f = CpFactors(2, [np.array([[1.0, 0.0], [0.0, 1.0]])])
    rng = np.random.default_rng(3)
    X = rng.standard_normal((6, 2))
    K = kernel_matrix(KernelSpec(), X, X)
    task_of = np.array([0, 0, 0, 1, 1, 1])
    Q = coupled_gram(K, mixing_matrix(f, grid), task_of)
    assert np.array_equal(Q[:3, 3:], np.zeros((3, 3)))
    assert np.array_equal(Q[3:, :3], np.zeros((3, 3)))


def test_coupled_gram_triple_loop_oracle():
    rng = np.random.default_rng(4)
    grid, f, X, task_of, y, K = _random_setup(rng, m=3)
    G = mixing_matrix(f, grid)
    Q = coupled_gram(K, G, task_of, labels=y)
    for j in range(3):
        for jp in range(3):
            expect = (
                y[j] * y[jp]
                * float(G[task_of[j]] @ G[task_of[jp]])
                * K[j, jp]
            )
            assert Q[j, jp] == pytest.approx(expect, rel=1e-12)
    # regression form omits the labels
    Qr = coupled_gram(K, G, task_of)
    for j in range(3):
        for jp in range(3):
            assert Qr[j, jp] == pytest.approx(
                float(G[task_of[j]] @ G[task_of[jp]]) * K[j, jp], rel=1e-12
            )


def test_coupled_gram_psd_property():
    rng = np.random.default_rng(5)
    for _ in range(100):
        grid, f, X, task_of, y, K = _random_setup(
            rng, m=int(rng.integers(3, 12))
        )
        Q = coupled_gram(K, mixing_matrix(f, grid), task_of, labels=y)
        eigs = np.linalg.eigvalsh((Q + Q.T) / 2.0)
        m = Q.shape[0]
        assert eigs.min() >= -1e-8 * max(np.trace(Q), 1e-12) / m


def test_latent_features_zero_and_rank_collapse():
    grid = TaskGrid((2,))
    rng = np.random.default_rng(6)
    f = CpFactors(1, [rng.standard_normal((2, 1))])
    dual = DualSharedFactor(
        anchors=rng.standard_normal((4, 3)),
        anchor_tasks=rng.integers(0, 2, size=4),
        coeffs=np.zeros(4),
        kernel=KernelSpec(),
    )
    x = rng.standard_normal(3)
    assert np.array_equal(latent_features(dual, f, grid, x), np.zeros(1))
    # rank one: scalar sum of coeff * mixing * kernel
    coeffs = rng.standard_normal(4)
    dual2 = DualSharedFactor(
        anchors=dual.anchors, anchor_tasks=dual.anchor_tasks,
        coeffs=coeffs, kernel=KernelSpec(),
    )
    expect = sum(
        coeffs[a] * f.factors[0][dual.anchor_tasks[a], 0] * float(dual.anchors[a] @ x)
        for a in range(4)
    )
    got = latent_features(dual2, f, grid, x)
    assert got.shape == (1,)
    assert got[0] == pytest.approx(expect, rel=1e-12)


def test_latent_features_batch_matches_single():
    grid = TaskGrid((3,))
    rng = np.random.default_rng(8)
    f = CpFactors(2, [rng.standard_normal((3, 2))])
    dual = DualSharedFactor(
        anchors=rng.standard_normal((5, 4)),
        anchor_tasks=rng.integers(0, 3, size=5),
        coeffs=rng.standard_normal(5),
        kernel=KernelSpec("rbf", rbf_gamma=0.7),
    )
    X = rng.standard_normal((6, 4))
    batch = latent_features(dual, f, grid, X)
    assert batch.shape == (6, 2)
    for i in range(6):
        np.testing.assert_allclose(batch[i], latent_features(dual, f, grid, X[i]))
