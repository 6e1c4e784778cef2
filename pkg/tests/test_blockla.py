"""Cholesky, eigenvalue and block tri-diagonal recursion checks."""

import numpy as np
import pytest

from cascadepass.blockla import (
    AsymmetricMatrix,
    BlockTriDiagonal,
    NonFiniteMatrix,
    NotPositiveDefinite,
    cholesky_lower,
    min_eigen_sym,
    symmetric_part,
    tridiag_pd_sequence,
)


def random_pd_tridiagonal(rng, block_sizes):
    """Build L L' for a random block lower bidiagonal L with unit-plus pivots,
    which is positive definite and exactly block tri-diagonal."""
    diags = [rng.normal(size=(n, n)) + (n + 1.0) * np.eye(n) for n in block_sizes]
    subs = [rng.normal(size=(block_sizes[k + 1], block_sizes[k]))
            for k in range(len(block_sizes) - 1)]
    D = []
    R = []
    for k, n in enumerate(block_sizes):
        block = diags[k] @ diags[k].T
        if k > 0:
            block = block + subs[k - 1] @ subs[k - 1].T
        D.append(block)
        if k + 1 < len(block_sizes):
            R.append(diags[k] @ subs[k].T)
    return BlockTriDiagonal(tuple(D), tuple(R))


def test_cholesky_known_factor():
    L = cholesky_lower([[4.0, 2.0], [2.0, 5.0]])
    assert np.array_equal(L, [[2.0, 0.0], [1.0, 2.0]])


def test_cholesky_rejects_indefinite_with_pivot_index():
    with pytest.raises(NotPositiveDefinite) as info:
        cholesky_lower([[1.0, 2.0], [2.0, 1.0]])
    assert info.value.index == 1


def test_cholesky_rejects_negative_leading_pivot():
    with pytest.raises(NotPositiveDefinite) as info:
        cholesky_lower([[-1.0, 0.0], [0.0, 1.0]])
    assert info.value.index == 0


def test_cholesky_random_round_trip():
    rng = np.random.default_rng(5)
    for _ in range(50):
        n = int(rng.integers(1, 8))
        G = rng.normal(size=(n, n))
        P = G @ G.T + (0.1 + rng.uniform()) * np.eye(n)
        L = cholesky_lower(P)
        assert np.allclose(L @ L.T, P, rtol=0.0, atol=1e-12 * max(1.0, np.abs(P).max()))
        assert np.array_equal(L, np.tril(L))


def test_symmetric_part_checks():
    S = symmetric_part([[1.0, 2.0], [2.0, 3.0]])
    assert np.array_equal(S, S.T)
    with pytest.raises(AsymmetricMatrix):
        symmetric_part([[1.0, 2.0], [0.0, 3.0]])
    with pytest.raises(NonFiniteMatrix):
        symmetric_part([[np.inf, 0.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        symmetric_part(np.zeros((2, 3)))


def test_min_eigen_sym_matches_diagonal():
    assert min_eigen_sym(np.diag([3.0, -2.0, 7.0])) == -2.0


def test_blocktridiagonal_shape_validation():
    with pytest.raises(ValueError):
        BlockTriDiagonal((np.eye(2), np.eye(2)), ())
    with pytest.raises(ValueError):
        BlockTriDiagonal((np.eye(2), np.eye(3)), (np.zeros((3, 3)),))
    with pytest.raises(AsymmetricMatrix):
        BlockTriDiagonal((np.array([[0.0, 1.0], [0.0, 0.0]]),), ())


def test_blocktridiagonal_assemble():
    P = BlockTriDiagonal(
        (np.array([[2.0]]), np.array([[3.0]])),
        (np.array([[-1.0]]),),
    )
    assert np.array_equal(P.assemble(), [[2.0, -1.0], [-1.0, 3.0]])
    assert P.block_sizes == (1, 1)


def test_schur_sequence_scalar_chain():
    P = BlockTriDiagonal(
        (np.array([[2.0]]), np.array([[2.0]])),
        (np.array([[1.0]]),),
    )
    factor = tridiag_pd_sequence(P)
    assert factor.M_blocks[0][0, 0] == 2.0
    assert factor.M_blocks[1][0, 0] == 1.5
    L = factor.assemble_lower()
    assert np.allclose(L @ L.T, P.assemble(), atol=1e-15)


def test_schur_sequence_matches_dense_factorization():
    rng = np.random.default_rng(11)
    for _ in range(40):
        k = int(rng.integers(1, 6))
        sizes = [int(rng.integers(1, 5)) for _ in range(k)]
        P = random_pd_tridiagonal(rng, sizes)
        dense = P.assemble()
        factor = tridiag_pd_sequence(P)
        L = factor.assemble_lower()
        scale = max(1.0, np.abs(dense).max())
        assert np.abs(L @ L.T - dense).max() <= 1e-10 * scale
        # Each cleared block is the Schur complement of everything before it.
        off = np.concatenate([[0], np.cumsum(sizes)])
        for i in range(k):
            head = dense[: off[i], : off[i]]
            cross = dense[: off[i], off[i]:off[i + 1]]
            own = dense[off[i]:off[i + 1], off[i]:off[i + 1]]
            expect = own if i == 0 else own - cross.T @ np.linalg.solve(head, cross)
            assert np.abs(factor.M_blocks[i] - expect).max() <= 1e-8 * scale


def test_schur_sequence_failure_index_matches_dense_test():
    rng = np.random.default_rng(23)
    seen_late_failure = False
    for _ in range(60):
        k = int(rng.integers(2, 5))
        sizes = [int(rng.integers(1, 4)) for _ in range(k)]
        P = random_pd_tridiagonal(rng, sizes)
        # Ruin one diagonal block so the matrix stops being positive definite.
        bad = int(rng.integers(0, k))
        D = list(P.diag_blocks)
        D[bad] = D[bad] - (np.abs(np.linalg.eigvalsh(D[bad])).max() + 1.0) * np.eye(sizes[bad])
        broken = BlockTriDiagonal(tuple(D), P.super_blocks)
        dense = broken.assemble()
        assert np.linalg.eigvalsh(dense)[0] < 0.0
        with pytest.raises(NotPositiveDefinite) as info:
            tridiag_pd_sequence(broken)
        # The recursion cannot fail before the ruined block.
        assert 1 <= info.value.index <= k
        assert info.value.index >= bad + 1
        seen_late_failure = seen_late_failure or info.value.index == bad + 1
    assert seen_late_failure


def test_schur_sequence_rejects_semidefinite():
    P = BlockTriDiagonal(
        (np.array([[1.0]]), np.array([[1.0]])),
        (np.array([[1.0]]),),
    )
    with pytest.raises(NotPositiveDefinite) as info:
        tridiag_pd_sequence(P)
    assert info.value.index == 2
