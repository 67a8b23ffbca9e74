import numpy as np
import pytest

from tensormtl import (
    CpFactors,
    DualSharedFactor,
    KernelSpec,
    TaskGrid,
    UnsupportedKernelError,
    explicit_shared_matrix,
    explicit_weights,
    init_factors,
    latent_features,
    mixing_matrix,
    mixing_vector,
    relatedness_gram,
    slice_features,
)

RNG = np.random.default_rng(7)


def random_factors(grid, rank, rng=RNG):
    return CpFactors(rank, [rng.standard_normal((s, rank)) for s in grid.shape])


def test_mixing_all_ones():
    grid = TaskGrid((2, 3))
    f = CpFactors(4, [np.ones((2, 4)), np.ones((3, 4))])
    for t in range(grid.total):
        assert np.array_equal(mixing_vector(t, f, grid), np.ones(4))


def test_mixing_single_mode_is_row():
    grid = TaskGrid((5,))
    f = random_factors(grid, 3)
    for t in range(5):
        assert np.array_equal(mixing_vector(t, f, grid), f.factors[0][t])


def test_mixing_hand_product():
    grid = TaskGrid((2, 3))
    f = CpFactors(2, [np.zeros((2, 2)), np.zeros((3, 2))])
    f.factors[0][0] = [2.0, 0.0]
    f.factors[1][2] = [1.0, 5.0]
    t = grid.linearize([1, 3])
    assert np.array_equal(mixing_vector(t, f, grid), [2.0, 0.0])


def test_mixing_matrix_rows_match_vectors():
    grid = TaskGrid((3, 2, 2))
    f = random_factors(grid, 3)
    G = mixing_matrix(f, grid)
    for t in range(grid.total):
        np.testing.assert_allclose(G[t], mixing_vector(t, f, grid))


def test_mixing_multilinearity():
    # scaling one row of mode 1 scales exactly the tasks with that index
    grid = TaskGrid((3, 4))
    f = random_factors(grid, 2)
    before = mixing_matrix(f, grid)
    c = 2.5
    f2 = f.copy()
    f2.factors[0][1] *= c
    after = mixing_matrix(f2, grid)
    multi = grid.multi_indices()
    touched = multi[:, 0] == 2
    np.testing.assert_allclose(after[touched], c * before[touched])
    np.testing.assert_allclose(after[~touched], before[~touched])


def test_relatedness_gram_all_ones_equals_rank():
    grid = TaskGrid((2, 2))
    rank = 5
    f = CpFactors(rank, [np.ones((2, rank)), np.ones((2, rank))])
    assert np.array_equal(relatedness_gram(f, grid), np.full((4, 4), float(rank)))


def test_relatedness_gram_rank_one_minors_vanish():
    grid = TaskGrid((2, 3))
    f = random_factors(grid, 1)
    gram = relatedness_gram(f, grid)
    for i in range(6):
        for j in range(6):
            minor = gram[i, i] * gram[j, j] - gram[i, j] * gram[j, i]
            assert abs(minor) < 1e-10 * max(1.0, gram[i, i] * gram[j, j])


def test_relatedness_gram_matches_stack_oracle_60_tasks():
    grid = TaskGrid((3, 4, 5))
    f = random_factors(grid, 3)
    stacked = np.stack([mixing_vector(t, f, grid) for t in range(60)])
    np.testing.assert_allclose(relatedness_gram(f, grid), stacked @ stacked.T)


def test_relatedness_gram_psd_property():
    rng = np.random.default_rng(11)
    for _ in range(100):
        shape = tuple(rng.integers(1, 5, size=rng.integers(1, 4)))
        grid = TaskGrid(shape)
        f = random_factors(grid, int(rng.integers(1, 5)), rng)
        G = mixing_matrix(f, grid)
        eigs = np.linalg.eigvalsh(relatedness_gram(f, grid))
        assert eigs.min() >= -1e-10 * float(np.sum(G * G))


def test_init_factors_deterministic_and_shaped():
    grid = TaskGrid((3, 4, 5))
    a = init_factors(grid, 3, seed=42)
    b = init_factors(grid, 3, seed=42)
    c = init_factors(grid, 3, seed=43)
    assert [f.shape for f in a.factors] == [(3, 3), (4, 3), (5, 3)]
    for fa, fb in zip(a.factors, b.factors):
        assert np.array_equal(fa, fb)
    assert any(not np.array_equal(fa, fc) for fa, fc in zip(a.factors, c.factors))


def _dual(grid, f, n_anchors, d, rng, kernel=None):
    kernel = kernel or KernelSpec()
    return DualSharedFactor(
        anchors=rng.standard_normal((n_anchors, d)),
        anchor_tasks=rng.integers(0, grid.total, size=n_anchors),
        coeffs=rng.standard_normal(n_anchors),
        kernel=kernel,
    )


def test_explicit_weights_zero_coeffs():
    grid = TaskGrid((2, 2))
    f = random_factors(grid, 2)
    dual = DualSharedFactor(
        anchors=np.ones((3, 4)),
        anchor_tasks=np.zeros(3, dtype=int),
        coeffs=np.zeros(3),
        kernel=KernelSpec(),
    )
    assert np.array_equal(explicit_weights(dual, f, grid), np.zeros((4, 4)))


def test_explicit_weights_single_anchor_closed_form():
    # one anchor x with coefficient c in task q: w_t = c <u_q, u_t> x
    grid = TaskGrid((2, 3))
    rng = np.random.default_rng(3)
    f = random_factors(grid, 2, rng)
    x = rng.standard_normal(5)
    q, c = 4, 1.7
    dual = DualSharedFactor(
        anchors=x[None, :],
        anchor_tasks=np.array([q]),
        coeffs=np.array([c]),
        kernel=KernelSpec(),
    )
    W = explicit_weights(dual, f, grid)
    G = mixing_matrix(f, grid)
    for t in range(grid.total):
        np.testing.assert_allclose(W[t], c * (G[q] @ G[t]) * x, atol=1e-12)


def test_explicit_weights_rank_one_common_direction():
    grid = TaskGrid((4,))
    rng = np.random.default_rng(5)
    f = random_factors(grid, 1, rng)
    dual = _dual(grid, f, 6, 3, rng)
    W = explicit_weights(dual, f, grid)
    scales = f.factors[0][:, 0]
    base = W[0] / scales[0]
    for t in range(4):
        np.testing.assert_allclose(W[t], scales[t] * base, atol=1e-10)


def test_weight_gram_identity():
    # <w_t, w_q> = u_t' (L'L) u_q, relative 1e-8
    grid = TaskGrid((3, 2))
    rng = np.random.default_rng(9)
    for _ in range(100):
        f = random_factors(grid, 3, rng)
        dual = _dual(grid, f, 8, 4, rng)
        W = explicit_weights(dual, f, grid)
        L = explicit_shared_matrix(dual, f, grid)
        G = mixing_matrix(f, grid)
        lhs = W @ W.T
        rhs = G @ (L.T @ L) @ G.T
        np.testing.assert_allclose(lhs, rhs, rtol=1e-8, atol=1e-10)


def test_explicit_weights_requires_linear_kernel():
    grid = TaskGrid((2,))
    f = random_factors(grid, 2)
    dual = _dual(grid, f, 3, 4, np.random.default_rng(0),
                 kernel=KernelSpec("rbf", rbf_gamma=0.5))
    with pytest.raises(UnsupportedKernelError):
        explicit_weights(dual, f, grid)


def test_dual_reconstruction_matches_kernel_expansion():
    # explicit L reproduces the dual evaluation to 1e-10 relative
    grid = TaskGrid((2, 2))
    rng = np.random.default_rng(13)
    for _ in range(100):
        f = random_factors(grid, 2, rng)
        dual = _dual(grid, f, 5, 3, rng)
        L = explicit_shared_matrix(dual, f, grid)
        x = rng.standard_normal(3)
        via_dual = latent_features(dual, f, grid, x)
        via_explicit = L.T @ x
        scale = max(1.0, float(np.max(np.abs(via_explicit))))
        np.testing.assert_allclose(via_dual, via_explicit, atol=1e-10 * scale)


def test_slice_features_single_mode_unchanged():
    grid = TaskGrid((4,))
    f = random_factors(grid, 3)
    v = np.array([1.0, -2.0, 0.5])
    np.testing.assert_allclose(slice_features(v, f, grid, 2, 1), v)


def test_slice_features_ones_complement_unchanged():
    grid = TaskGrid((2, 3, 2))
    f = CpFactors(2, [np.ones((2, 2)), np.ones((3, 2)), np.ones((2, 2))])
    v = np.array([0.3, -0.4])
    t = grid.linearize([2, 1, 2])
    np.testing.assert_allclose(slice_features(v, f, grid, t, 2), v)


def test_slice_features_triple_product_oracle():
    grid = TaskGrid((2, 2, 2))
    rng = np.random.default_rng(21)
    f = random_factors(grid, 3, rng)
    v = rng.standard_normal(3)
    t = grid.linearize([2, 1, 2])
    got = slice_features(v, f, grid, t, 2)
    expect = np.array(
        [
            v[r] * f.factors[0][1, r] * f.factors[2][1, r]
            for r in range(3)
        ]
    )
    np.testing.assert_allclose(got, expect)
