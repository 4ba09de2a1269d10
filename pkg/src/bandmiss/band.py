"""Banded symmetric matrices, their Cholesky factors, and sparse helpers.

The central objects of the whole package: a precision matrix in lower band
storage (``band[d, i]`` holds ``K[i+d, i]``), its banded Cholesky factor,
and a compressed-by-column sparse matrix used for stacked system matrices.
Factorization and solves cost O(dim * b^2) / O(dim * b) instead of the dense
cubic, which is what makes joint sampling of long stacked vectors cheap.
"""

from __future__ import annotations

import logging

import numpy as np
import scipy.sparse

from . import kernels
from .errors import DimensionMismatch, NotPositiveDefinite, ValidationError

logger = logging.getLogger(__name__)

PIVOT_TOL = 1e-12
JITTER_SCALE = 1e-10


class SymBandMatrix:
    """Symmetric positive (semi)definite matrix in lower band storage.

    Parameters
    ----------
    dim : int
    half_bandwidth : int
        Number of stored subdiagonals b; must satisfy 0 <= b <= dim - 1
        (b = 0 for dim 0 or 1).
    band : ndarray, shape (b + 1, dim)
        ``band[d, i] = K[i + d, i]``.  Padding entries past the matrix edge
        must be zero.
    """

    __slots__ = ("dim", "half_bandwidth", "band")

    def __init__(self, dim, half_bandwidth, band, validate=True):
        self.dim = int(dim)
        self.half_bandwidth = int(half_bandwidth)
        self.band = np.ascontiguousarray(band, dtype=np.float64)
        if validate:
            self._validate()

    def _validate(self):
        b, n = self.half_bandwidth, self.dim
        if n < 0 or b < 0 or (n > 1 and b > n - 1) or (n <= 1 and b != 0):
            raise ValidationError(f"bad band shape: dim={n}, half_bandwidth={b}")
        if self.band.shape != (b + 1, n):
            raise DimensionMismatch(
                f"band storage shape {self.band.shape} != {(b + 1, n)}"
            )
        if not np.isfinite(self.band).all():
            raise ValidationError("band storage contains non-finite entries")
        for d in range(1, b + 1):
            if n and np.any(self.band[d, n - d :] != 0.0):
                raise ValidationError("padding entries past the matrix edge must be 0")

    @classmethod
    def from_dense(cls, K, validate=True):
        K = np.asarray(K, dtype=np.float64)
        n = K.shape[0]
        if K.shape != (n, n):
            raise DimensionMismatch("dense input must be square")
        if n and not np.allclose(K, K.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(K).max())):
            raise ValidationError("dense input is not symmetric")
        b = 0
        for d in range(n - 1, 0, -1):
            if np.any(np.diagonal(K, -d) != 0.0):
                b = d
                break
        band = np.zeros((b + 1, n))
        for d in range(b + 1):
            band[d, : n - d] = np.diagonal(K, -d)
        return cls(n, b, band, validate=validate)

    def to_dense(self):
        n, b = self.dim, self.half_bandwidth
        K = np.zeros((n, n))
        for d in range(b + 1):
            idx = np.arange(n - d)
            K[idx + d, idx] = self.band[d, : n - d]
            if d > 0:
                K[idx, idx + d] = self.band[d, : n - d]
        return K

    def diagonal(self):
        return self.band[0]

    def matvec(self, x):
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise DimensionMismatch(f"vector length {x.shape} != dim {self.dim}")
        return kernels.band_symv(self.band, x)

    def quadform(self, x):
        return float(np.dot(x, self.matvec(x)))

    def add_diagonal(self, vals):
        band = self.band.copy()
        band[0] = band[0] + vals
        return SymBandMatrix(self.dim, self.half_bandwidth, band, validate=False)

    def __repr__(self):
        return f"SymBandMatrix(dim={self.dim}, half_bandwidth={self.half_bandwidth})"


class BandCholeskyFactor:
    """Lower banded Cholesky factor C with K = C C'."""

    __slots__ = ("dim", "half_bandwidth", "band", "jittered")

    def __init__(self, dim, half_bandwidth, band, jittered=False):
        self.dim = int(dim)
        self.half_bandwidth = int(half_bandwidth)
        self.band = np.ascontiguousarray(band, dtype=np.float64)
        self.jittered = bool(jittered)

    def logdet(self):
        """log det K = 2 * sum(log diag C)."""
        return 2.0 * float(np.sum(np.log(self.band[0]))) if self.dim else 0.0

    def to_dense(self):
        n, b = self.dim, self.half_bandwidth
        C = np.zeros((n, n))
        for d in range(b + 1):
            idx = np.arange(n - d)
            C[idx + d, idx] = self.band[d, : n - d]
        return C

    def __repr__(self):
        return (
            f"BandCholeskyFactor(dim={self.dim}, half_bandwidth={self.half_bandwidth},"
            f" jittered={self.jittered})"
        )


def band_cholesky(K: SymBandMatrix) -> BandCholeskyFactor:
    """Factor K = C C' in O(dim * b^2).

    A pivot <= 1e-12 triggers one retry with 1e-10 * max(diag) added to the
    diagonal; a second failure raises NotPositiveDefinite with the pivot
    index.
    """
    cb, fail = kernels.band_chol(K.band, PIVOT_TOL)
    if fail < 0:
        return BandCholeskyFactor(K.dim, K.half_bandwidth, cb)
    jitter = JITTER_SCALE * float(np.max(K.band[0])) if K.dim else 0.0
    logger.warning(
        "band Cholesky pivot %d not positive (%.3e); retrying with jitter %.3e",
        fail,
        cb[0, fail],
        jitter,
    )
    band2 = K.band.copy()
    band2[0] += jitter
    cb, fail = kernels.band_chol(band2, PIVOT_TOL)
    if fail < 0:
        return BandCholeskyFactor(K.dim, K.half_bandwidth, cb, jittered=True)
    raise NotPositiveDefinite(fail, cb[0, fail], jittered=True)


def band_solve(factor: BandCholeskyFactor, rhs, mode: str):
    """Solve C x = rhs (mode 'forward') or C' x = rhs (mode 'backward').

    rhs may be a vector or a matrix of stacked right-hand-side columns.
    """
    rhs = np.ascontiguousarray(rhs, dtype=np.float64)
    if rhs.shape[0] != factor.dim:
        raise DimensionMismatch(
            f"rhs leading dimension {rhs.shape[0]} != factor dim {factor.dim}"
        )
    if mode == "forward":
        if rhs.ndim == 1:
            return kernels.band_fsolve(factor.band, rhs)
        return kernels.band_fsolve_mat(factor.band, rhs)
    if mode == "backward":
        if rhs.ndim == 1:
            return kernels.band_bsolve(factor.band, rhs)
        return kernels.band_bsolve_mat(factor.band, rhs)
    raise ValidationError(f"mode must be 'forward' or 'backward', got {mode!r}")


def band_solve_spd(factor: BandCholeskyFactor, rhs):
    """Solve K x = rhs through the two triangular passes."""
    return band_solve(factor, band_solve(factor, rhs, "forward"), "backward")


def band_add(A: SymBandMatrix, B: SymBandMatrix) -> SymBandMatrix:
    if A.dim != B.dim:
        raise DimensionMismatch("band addition needs equal dims")
    b = max(A.half_bandwidth, B.half_bandwidth)
    band = np.zeros((b + 1, A.dim))
    band[: A.half_bandwidth + 1] += A.band
    band[: B.half_bandwidth + 1] += B.band
    return SymBandMatrix(A.dim, b, band, validate=False)


class SparseMatrix:
    """Sparse matrix in compressed-by-column layout.

    Entries are (row, col, value) triples sorted by column then row, stored
    as (indptr, rowind, values).  Duplicate positions are rejected; explicit
    zeros are dropped by the constructors.
    """

    __slots__ = ("rows", "cols", "indptr", "rowind", "values", "_scipy")

    def __init__(self, rows, cols, indptr, rowind, values, validate=True):
        self.rows = int(rows)
        self.cols = int(cols)
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.rowind = np.ascontiguousarray(rowind, dtype=np.int64)
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        self._scipy = None
        if validate:
            self._validate()

    def _validate(self):
        if self.indptr.shape != (self.cols + 1,):
            raise DimensionMismatch("indptr length must be cols + 1")
        if self.indptr[0] != 0 or self.indptr[-1] != len(self.values):
            raise ValidationError("indptr endpoints inconsistent with value count")
        if np.any(np.diff(self.indptr) < 0):
            raise ValidationError("indptr must be nondecreasing")
        if len(self.rowind) != len(self.values):
            raise DimensionMismatch("rowind and values length mismatch")
        if len(self.rowind) and (self.rowind.min() < 0 or self.rowind.max() >= self.rows):
            raise ValidationError("row index out of bounds")
        if not np.isfinite(self.values).all():
            raise ValidationError("sparse values contain non-finite entries")
        for j in range(self.cols):
            seg = self.rowind[self.indptr[j] : self.indptr[j + 1]]
            if seg.size > 1 and np.any(np.diff(seg) <= 0):
                raise ValidationError(f"column {j} rows not strictly increasing (duplicate?)")

    @property
    def nnz(self):
        return len(self.values)

    @classmethod
    def from_triples(cls, rows, cols, triples):
        triples = list(triples)
        if not triples:
            return cls(rows, cols, np.zeros(cols + 1, dtype=np.int64), [], [])
        r = np.array([t[0] for t in triples], dtype=np.int64)
        c = np.array([t[1] for t in triples], dtype=np.int64)
        v = np.array([t[2] for t in triples], dtype=np.float64)
        if len(r) and (r.min() < 0 or r.max() >= rows or c.min() < 0 or c.max() >= cols):
            raise ValidationError("triple index out of bounds")
        keep = v != 0.0
        r, c, v = r[keep], c[keep], v[keep]
        order = np.lexsort((r, c))
        r, c, v = r[order], c[order], v[order]
        if len(r) > 1 and np.any((np.diff(c) == 0) & (np.diff(r) == 0)):
            raise ValidationError("duplicate (row, col) pair in triples")
        indptr = np.zeros(cols + 1, dtype=np.int64)
        np.add.at(indptr, c + 1, 1)
        np.cumsum(indptr, out=indptr)
        return cls(rows, cols, indptr, r, v)

    @classmethod
    def from_scipy(cls, m, validate=False):
        m = m.tocsc()
        m.sum_duplicates()
        m.eliminate_zeros()
        m.sort_indices()
        return cls(m.shape[0], m.shape[1], m.indptr, m.indices, m.data, validate=validate)

    @classmethod
    def from_dense(cls, M):
        return cls.from_scipy(scipy.sparse.csc_matrix(np.asarray(M, dtype=np.float64)))

    @classmethod
    def identity(cls, n):
        return cls(
            n,
            n,
            np.arange(n + 1, dtype=np.int64),
            np.arange(n, dtype=np.int64),
            np.ones(n),
            validate=False,
        )

    def to_scipy(self):
        if self._scipy is None:
            self._scipy = scipy.sparse.csc_matrix(
                (self.values, self.rowind, self.indptr), shape=(self.rows, self.cols)
            )
        return self._scipy

    def to_dense(self):
        return self.to_scipy().toarray()

    def triples(self):
        """Iterate (row, col, value) in column-major order."""
        for j in range(self.cols):
            for k in range(self.indptr[j], self.indptr[j + 1]):
                yield int(self.rowind[k]), j, float(self.values[k])

    def matvec(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.cols:
            raise DimensionMismatch("matvec length mismatch")
        return self.to_scipy() @ x

    def rmatvec(self, y):
        y = np.asarray(y, dtype=np.float64)
        if y.shape[0] != self.rows:
            raise DimensionMismatch("rmatvec length mismatch")
        return self.to_scipy().T @ y

    def transpose(self):
        return SparseMatrix.from_scipy(self.to_scipy().T)

    def __repr__(self):
        return f"SparseMatrix({self.rows}x{self.cols}, nnz={self.nnz})"


def sparse_matmul(A: SparseMatrix, B: SparseMatrix) -> SparseMatrix:
    """Sparse-sparse product A @ B."""
    if A.cols != B.rows:
        raise DimensionMismatch(f"inner dims differ: {A.cols} vs {B.rows}")
    return SparseMatrix.from_scipy(A.to_scipy() @ B.to_scipy())


def sandwich(G: SparseMatrix, sigma_inv_blocks) -> SymBandMatrix:
    """Form G' blockdiag(sigma_inv) G as a banded symmetric matrix.

    sigma_inv_blocks has shape (B, m, m) for dense per-block inverses or
    (B, m) for diagonal ones, with B * m == G.rows.  The result's half
    bandwidth is measured from the actual fill.
    """
    S = np.ascontiguousarray(sigma_inv_blocks, dtype=np.float64)
    if S.ndim not in (2, 3):
        raise DimensionMismatch("sigma_inv_blocks must have 2 or 3 dims")
    nblocks, m = S.shape[0], S.shape[1]
    if S.ndim == 3 and S.shape[2] != m:
        raise DimensionMismatch("dense blocks must be square")
    if nblocks * m != G.rows:
        raise DimensionMismatch(
            f"block partition {nblocks}x{m} does not cover {G.rows} rows"
        )
    csr = G.to_scipy().tocsr()
    rp = np.ascontiguousarray(csr.indptr, dtype=np.int64)
    ci = np.ascontiguousarray(csr.indices, dtype=np.int64)
    vals = np.ascontiguousarray(csr.data, dtype=np.float64)

    # bandwidth bound: widest within-block column span
    bw = 0
    for blk in range(nblocks):
        lo, hi = rp[blk * m], rp[(blk + 1) * m]
        if hi > lo:
            seg = ci[lo:hi]
            bw = max(bw, int(seg.max() - seg.min()))
    bw = min(bw, max(G.cols - 1, 0))

    if S.ndim == 3:
        band = kernels.sandwich_dense(rp, ci, vals, nblocks, m, S, G.cols, bw)
    else:
        band = kernels.sandwich_diag(rp, ci, vals, nblocks, m, S, G.cols, bw)

    measured = bw
    while measured > 0 and not band[measured].any():
        measured -= 1
    return SymBandMatrix(G.cols, measured, band[: measured + 1], validate=False)


def block_weighted_rhs(G: SparseMatrix, sigma_inv_blocks, w):
    """Compute G' blockdiag(sigma_inv) w without forming the block diagonal."""
    S = np.ascontiguousarray(sigma_inv_blocks, dtype=np.float64)
    nblocks, m = S.shape[0], S.shape[1]
    if nblocks * m != G.rows or w.shape[0] != G.rows:
        raise DimensionMismatch("rhs block partition mismatch")
    W = w.reshape(nblocks, m)
    if S.ndim == 3:
        v = np.einsum("bij,bj->bi", S, W)
    else:
        v = S * W
    return G.rmatvec(v.reshape(-1))
