"""Vectorized numpy/scipy implementations of the banded kernels.

Storage convention everywhere: lower band, column major.  ``band[d, i]``
holds ``K[i + d, i]`` for diagonals d = 0..b; entries that would fall past
the matrix edge are zero padding.
"""

import numpy as np
import scipy.linalg


def band_chol(band, tol):
    """Banded Cholesky K = C C'.  Returns (cband, fail_index).

    fail_index is -1 on success, otherwise the index of the first pivot
    that was <= tol (the returned factor is unusable in that case).
    """
    b, n = band.shape[0] - 1, band.shape[1]
    if n == 0:
        return band.copy(), -1
    try:
        cband = scipy.linalg.cholesky_banded(band, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        cband, fail = _band_chol_loop(band, tol)
        return cband, fail
    # LAPACK only rejects pivots <= 0; enforce the stricter tolerance here
    small = cband[0] * cband[0] <= tol
    if small.any():
        return cband, int(np.argmax(small))
    if not np.isfinite(cband).all():
        return cband, int(np.argmax(~np.isfinite(cband).all(axis=0)))
    return cband, -1


def _band_chol_loop(band, tol):
    # column-at-a-time fallback used when LAPACK balks, so the failing
    # pivot index is exact
    b, n = band.shape[0] - 1, band.shape[1]
    cb = band.copy()
    for j in range(n):
        pivot = cb[0, j]
        if not np.isfinite(pivot) or pivot <= tol:
            return cb, j
        cjj = np.sqrt(pivot)
        m = min(b, n - 1 - j)
        col = cb[1 : m + 1, j] / cjj
        cb[0, j] = cjj
        cb[1 : m + 1, j] = col
        for k in range(1, m + 1):
            cb[0 : m - k + 1, j + k] -= col[k - 1] * col[k - 1 : m]
    return cb, -1


def band_fsolve(cband, rhs):
    """Solve C x = rhs with C the lower band factor."""
    b = cband.shape[0] - 1
    return scipy.linalg.solve_banded((b, 0), cband, rhs, check_finite=False)


def band_bsolve(cband, rhs):
    """Solve C' x = rhs."""
    b, n = cband.shape[0] - 1, cband.shape[1]
    ab = np.zeros_like(cband)
    for d in range(b + 1):
        ab[b - d, d:] = cband[d, : n - d]
    return scipy.linalg.solve_banded((0, b), ab, rhs, check_finite=False)


def band_fsolve_mat(cband, rhs):
    return band_fsolve(cband, rhs)


def band_bsolve_mat(cband, rhs):
    return band_bsolve(cband, rhs)


def band_symv(band, x):
    """Symmetric band matrix times vector."""
    b, n = band.shape[0] - 1, band.shape[1]
    y = band[0] * x
    for d in range(1, b + 1):
        if d >= n:
            break
        lo = band[d, : n - d]
        y[d:] += lo * x[: n - d]
        y[: n - d] += lo * x[d:]
    return y


def _sandwich(rp, ci, vals, nblocks, m, sinv, ncols, bw, diag_blocks):
    band = np.zeros((bw + 1, ncols))
    for blk in range(nblocks):
        lo, hi = rp[blk * m], rp[(blk + 1) * m]
        if lo == hi:
            continue
        cols = ci[lo:hi]
        active = np.unique(cols)
        nact = active.shape[0]
        A = np.zeros((m, nact))
        local = np.searchsorted(active, cols)
        rows = np.repeat(np.arange(m), np.diff(rp[blk * m : (blk + 1) * m + 1]))
        A[rows, local] = vals[lo:hi]
        if diag_blocks:
            B = A.T @ (sinv[blk][:, None] * A)
        else:
            B = A.T @ sinv[blk] @ A
        ii = np.repeat(active, nact)
        jj = np.tile(active, nact)
        keep = ii >= jj
        np.add.at(band, (ii[keep] - jj[keep], jj[keep]), B.ravel()[keep])
    return band


def sandwich_dense(rp, ci, vals, nblocks, m, sinv, ncols, bw):
    """Accumulate G' blockdiag(sinv) G into lower band storage.

    G is given in CSR (rp, ci, vals) with nblocks*m rows; sinv has shape
    (nblocks, m, m).  bw must bound the true half bandwidth.
    """
    return _sandwich(rp, ci, vals, nblocks, m, sinv, ncols, bw, False)


def sandwich_diag(rp, ci, vals, nblocks, m, sinv, ncols, bw):
    """Same as sandwich_dense with diagonal blocks, sinv of shape (nblocks, m)."""
    return _sandwich(rp, ci, vals, nblocks, m, sinv, ncols, bw, True)
