import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bandmiss import kernels
from bandmiss.band import (BandCholeskyFactor, SparseMatrix, SymBandMatrix,
                           band_add, band_cholesky, band_solve,
                           band_solve_spd, block_weighted_rhs, sandwich,
                           sparse_matmul)
from bandmiss.errors import (DimensionMismatch, NotPositiveDefinite,
                             ValidationError)


def random_spd_banded(rng, n, b):
    """SPD matrix with half bandwidth exactly b (generically)."""
    dist = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    A = rng.standard_normal((n, n)) * (dist <= b)
    K = A @ A.T + n * np.eye(n)
    # symmetric truncation of a diagonally dominant SPD matrix stays SPD
    K[dist > b] = 0.0
    return K


class TestSymBandMatrix:
    def test_dense_round_trip(self):
        rng = np.random.default_rng(0)
        K = random_spd_banded(rng, 12, 3)
        B = SymBandMatrix.from_dense(K)
        assert B.half_bandwidth == 3
        np.testing.assert_allclose(B.to_dense(), K)

    def test_bandwidth_detection_tight(self):
        K = np.eye(5)
        K[4, 0] = K[0, 4] = 0.5
        assert SymBandMatrix.from_dense(K).half_bandwidth == 4
        assert SymBandMatrix.from_dense(np.eye(5)).half_bandwidth == 0

    def test_matvec_and_quadform(self):
        rng = np.random.default_rng(1)
        K = random_spd_banded(rng, 20, 4)
        B = SymBandMatrix.from_dense(K)
        x = rng.standard_normal(20)
        np.testing.assert_allclose(B.matvec(x), K @ x, rtol=1e-12)
        assert B.quadform(x) == pytest.approx(x @ K @ x, rel=1e-12)

    def test_rejects_asymmetric(self):
        K = np.eye(3)
        K[0, 1] = 0.5
        with pytest.raises(ValidationError):
            SymBandMatrix.from_dense(K)

    def test_rejects_bad_padding(self):
        band = np.ones((2, 3))  # band[1, 2] pads past the edge, must be 0
        with pytest.raises(ValidationError):
            SymBandMatrix(3, 1, band)

    def test_add_diagonal(self):
        rng = np.random.default_rng(2)
        K = random_spd_banded(rng, 8, 2)
        B = SymBandMatrix.from_dense(K).add_diagonal(np.full(8, 0.5))
        np.testing.assert_allclose(B.to_dense(), K + 0.5 * np.eye(8))


class TestBandCholesky:
    def test_matches_numpy_cholesky(self):
        rng = np.random.default_rng(3)
        for n, b in [(1, 0), (6, 1), (12, 3), (40, 7)]:
            K = random_spd_banded(rng, n, b)
            C = band_cholesky(SymBandMatrix.from_dense(K))
            np.testing.assert_allclose(C.to_dense(), np.linalg.cholesky(K),
                                       rtol=1e-10, atol=1e-12)
            assert not C.jittered

    def test_logdet(self):
        rng = np.random.default_rng(4)
        K = random_spd_banded(rng, 15, 3)
        C = band_cholesky(SymBandMatrix.from_dense(K))
        assert C.logdet() == pytest.approx(np.linalg.slogdet(K)[1], rel=1e-10)

    def test_solves(self):
        rng = np.random.default_rng(5)
        K = random_spd_banded(rng, 25, 4)
        C = band_cholesky(SymBandMatrix.from_dense(K))
        L = np.linalg.cholesky(K)
        rhs = rng.standard_normal(25)
        np.testing.assert_allclose(band_solve(C, rhs, "forward"),
                                   np.linalg.solve(L, rhs), rtol=1e-9)
        np.testing.assert_allclose(band_solve(C, rhs, "backward"),
                                   np.linalg.solve(L.T, rhs), rtol=1e-9)
        np.testing.assert_allclose(band_solve_spd(C, rhs),
                                   np.linalg.solve(K, rhs), rtol=1e-8)
        R = rng.standard_normal((25, 4))
        np.testing.assert_allclose(band_solve(C, R, "forward"),
                                   np.linalg.solve(L, R), rtol=1e-9)
        np.testing.assert_allclose(band_solve(C, R, "backward"),
                                   np.linalg.solve(L.T, R), rtol=1e-9)

    def test_jitter_recovers_semidefinite(self):
        # rank-deficient: one zero pivot, fixable by the jitter retry
        K = np.ones((3, 3))
        C = band_cholesky(SymBandMatrix.from_dense(K))
        assert C.jittered

    def test_indefinite_raises_with_pivot(self):
        K = np.diag([1.0, -2.0, 1.0])
        with pytest.raises(NotPositiveDefinite) as exc:
            band_cholesky(SymBandMatrix.from_dense(K))
        assert exc.value.pivot_index == 1

    def test_mode_validation(self):
        C = band_cholesky(SymBandMatrix.from_dense(np.eye(2)))
        with pytest.raises(ValidationError):
            band_solve(C, np.zeros(2), "sideways")
        with pytest.raises(DimensionMismatch):
            band_solve(C, np.zeros(3), "forward")

    @settings(max_examples=25, deadline=None)
    @given(st.integers(2, 30), st.integers(0, 6), st.integers(0, 2 ** 31 - 1))
    def test_factor_reconstructs(self, n, b, seed):
        b = min(b, n - 1)
        rng = np.random.default_rng(seed)
        K = random_spd_banded(rng, n, b)
        C = band_cholesky(SymBandMatrix.from_dense(K)).to_dense()
        np.testing.assert_allclose(C @ C.T, K, rtol=1e-8, atol=1e-8)


class TestBandAdd:
    def test_mixed_bandwidths(self):
        rng = np.random.default_rng(6)
        A = random_spd_banded(rng, 10, 2)
        B = random_spd_banded(rng, 10, 4)
        S = band_add(SymBandMatrix.from_dense(A), SymBandMatrix.from_dense(B))
        np.testing.assert_allclose(S.to_dense(), A + B)
        assert S.half_bandwidth == 4


class TestSparseMatrix:
    def test_triples_round_trip(self):
        M = np.array([[1.0, 0, 2], [0, 0, 0], [3, 4, 0]])
        S = SparseMatrix.from_dense(M)
        np.testing.assert_allclose(S.to_dense(), M)
        assert S.nnz == 4
        back = SparseMatrix.from_triples(3, 3, list(S.triples()))
        np.testing.assert_allclose(back.to_dense(), M)

    def test_duplicate_rejected(self):
        with pytest.raises(ValidationError):
            SparseMatrix.from_triples(2, 2, [(0, 0, 1.0), (0, 0, 2.0)])

    def test_explicit_zeros_dropped(self):
        S = SparseMatrix.from_triples(2, 2, [(0, 0, 0.0), (1, 1, 3.0)])
        assert S.nnz == 1

    def test_matvec_rmatvec_transpose(self):
        rng = np.random.default_rng(7)
        M = rng.standard_normal((6, 4))
        M[np.abs(M) < 0.8] = 0.0
        S = SparseMatrix.from_dense(M)
        x = rng.standard_normal(4)
        y = rng.standard_normal(6)
        np.testing.assert_allclose(S.matvec(x), M @ x)
        np.testing.assert_allclose(S.rmatvec(y), M.T @ y)
        np.testing.assert_allclose(S.transpose().to_dense(), M.T)

    def test_matmul(self):
        rng = np.random.default_rng(8)
        A = rng.standard_normal((5, 7))
        B = rng.standard_normal((7, 3))
        P = sparse_matmul(SparseMatrix.from_dense(A), SparseMatrix.from_dense(B))
        np.testing.assert_allclose(P.to_dense(), A @ B, rtol=1e-12)
        with pytest.raises(DimensionMismatch):
            sparse_matmul(SparseMatrix.from_dense(A), SparseMatrix.from_dense(A))

    def test_identity(self):
        np.testing.assert_allclose(SparseMatrix.identity(4).to_dense(), np.eye(4))


class TestSandwich:
    def _check(self, rng, rows_blocks, m, cols, dense_blocks):
        nblocks = rows_blocks
        G = rng.standard_normal((nblocks * m, cols))
        # block-banded support so the product is banded
        for blk in range(nblocks):
            lo = max(0, blk - 1)
            keep = np.zeros(cols, dtype=bool)
            keep[lo : min(cols, blk + 2)] = True
            G[blk * m : (blk + 1) * m, ~keep] = 0.0
        if dense_blocks:
            S = np.stack([np.linalg.inv(random_spd_banded(rng, m, m - 1))
                          for _ in range(nblocks)])
            dense = np.zeros((nblocks * m, nblocks * m))
            for b in range(nblocks):
                dense[b * m : (b + 1) * m, b * m : (b + 1) * m] = S[b]
        else:
            S = rng.uniform(0.5, 2.0, size=(nblocks, m))
            dense = np.diag(S.reshape(-1))
        Gs = SparseMatrix.from_dense(G)
        K = sandwich(Gs, S)
        np.testing.assert_allclose(K.to_dense(), G.T @ dense @ G,
                                   rtol=1e-10, atol=1e-10)
        w = rng.standard_normal(nblocks * m)
        np.testing.assert_allclose(block_weighted_rhs(Gs, S, w),
                                   G.T @ dense @ w, rtol=1e-10, atol=1e-10)

    def test_dense_blocks(self):
        self._check(np.random.default_rng(9), 6, 3, 8, dense_blocks=True)

    def test_diagonal_blocks(self):
        self._check(np.random.default_rng(10), 5, 4, 7, dense_blocks=False)

    def test_bandwidth_is_measured_not_padded(self):
        # a block-diagonal G gives a block-diagonal product whose bandwidth
        # is the block span, not the conservative bound
        G = np.kron(np.eye(4), np.ones((2, 2)))
        K = sandwich(SparseMatrix.from_dense(G), np.ones((4, 2)))
        assert K.half_bandwidth == 1

    def test_partition_mismatch(self):
        G = SparseMatrix.from_dense(np.eye(6))
        with pytest.raises(DimensionMismatch):
            sandwich(G, np.ones((4, 2)))


class TestBackends:
    def test_backends_agree(self):
        rng = np.random.default_rng(11)
        K = random_spd_banded(rng, 30, 5)
        rhs = rng.standard_normal(30)
        results = {}
        original = kernels.current_backend()
        try:
            for backend in kernels.available_backends():
                kernels.use_backend(backend)
                C = band_cholesky(SymBandMatrix.from_dense(K))
                results[backend] = (C.to_dense(), band_solve_spd(C, rhs))
        finally:
            kernels.use_backend(original)
        vals = list(results.values())
        for other in vals[1:]:
            np.testing.assert_allclose(other[0], vals[0][0], rtol=1e-12)
            np.testing.assert_allclose(other[1], vals[0][1], rtol=1e-9)
