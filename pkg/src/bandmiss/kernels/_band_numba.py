"""Numba implementations of the banded kernels.

Same contracts as ``_band_numpy``; explicit inner loops instead of
vectorized slices.  Import of this module requires numba.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def band_chol(band, tol):
    b, n = band.shape[0] - 1, band.shape[1]
    cb = band.copy()
    for j in range(n):
        pivot = cb[0, j]
        if not np.isfinite(pivot) or pivot <= tol:
            return cb, j
        cjj = np.sqrt(pivot)
        cb[0, j] = cjj
        m = min(b, n - 1 - j)
        for i in range(1, m + 1):
            cb[i, j] /= cjj
        for k in range(1, m + 1):
            ckj = cb[k, j]
            if ckj != 0.0:
                for r in range(0, m - k + 1):
                    cb[r, j + k] -= ckj * cb[k + r, j]
    return cb, -1


@njit(cache=True)
def band_fsolve(cband, rhs):
    b, n = cband.shape[0] - 1, cband.shape[1]
    x = rhs.copy()
    for i in range(n):
        s = x[i]
        kmax = min(b, i)
        for k in range(1, kmax + 1):
            s -= cband[k, i - k] * x[i - k]
        x[i] = s / cband[0, i]
    return x


@njit(cache=True)
def band_bsolve(cband, rhs):
    b, n = cband.shape[0] - 1, cband.shape[1]
    x = rhs.copy()
    for i in range(n - 1, -1, -1):
        s = x[i]
        kmax = min(b, n - 1 - i)
        for k in range(1, kmax + 1):
            s -= cband[k, i] * x[i + k]
        x[i] = s / cband[0, i]
    return x


@njit(cache=True)
def band_fsolve_mat(cband, rhs):
    b, n = cband.shape[0] - 1, cband.shape[1]
    ncol = rhs.shape[1]
    X = rhs.copy()
    for i in range(n):
        kmax = min(b, i)
        for k in range(1, kmax + 1):
            c = cband[k, i - k]
            if c != 0.0:
                for j in range(ncol):
                    X[i, j] -= c * X[i - k, j]
        c0 = cband[0, i]
        for j in range(ncol):
            X[i, j] /= c0
    return X


@njit(cache=True)
def band_bsolve_mat(cband, rhs):
    b, n = cband.shape[0] - 1, cband.shape[1]
    ncol = rhs.shape[1]
    X = rhs.copy()
    for i in range(n - 1, -1, -1):
        kmax = min(b, n - 1 - i)
        for k in range(1, kmax + 1):
            c = cband[k, i]
            if c != 0.0:
                for j in range(ncol):
                    X[i, j] -= c * X[i + k, j]
        c0 = cband[0, i]
        for j in range(ncol):
            X[i, j] /= c0
    return X


@njit(cache=True)
def band_symv(band, x):
    b, n = band.shape[0] - 1, band.shape[1]
    y = np.zeros(n)
    for i in range(n):
        s = band[0, i] * x[i]
        kmax = min(b, n - 1 - i)
        for k in range(1, kmax + 1):
            s += band[k, i] * x[i + k]
        kmax = min(b, i)
        for k in range(1, kmax + 1):
            s += band[k, i - k] * x[i - k]
        y[i] = s
    return y


@njit(cache=True)
def _sandwich_core(rp, ci, vals, nblocks, m, sinv2, sinv3, ncols, bw, diag_blocks):
    band = np.zeros((bw + 1, ncols))
    for blk in range(nblocks):
        lo, hi = rp[blk * m], rp[(blk + 1) * m]
        if lo == hi:
            continue
        active = np.unique(ci[lo:hi])
        nact = active.shape[0]
        A = np.zeros((m, nact))
        for r in range(m):
            for e in range(rp[blk * m + r], rp[blk * m + r + 1]):
                A[r, np.searchsorted(active, ci[e])] = vals[e]
        if diag_blocks:
            SA = np.empty((m, nact))
            for r in range(m):
                w = sinv2[blk, r]
                for c in range(nact):
                    SA[r, c] = w * A[r, c]
        else:
            SA = np.dot(sinv3[blk], A)
        B = np.dot(A.T, SA)
        for i in range(nact):
            gi = active[i]
            for j in range(i + 1):
                gj = active[j]
                band[gi - gj, gj] += B[i, j]
    return band


def sandwich_dense(rp, ci, vals, nblocks, m, sinv, ncols, bw):
    dummy = np.zeros((1, 1))
    return _sandwich_core(rp, ci, vals, nblocks, m, dummy, sinv, ncols, bw, False)


def sandwich_diag(rp, ci, vals, nblocks, m, sinv, ncols, bw):
    dummy = np.zeros((1, 1, 1))
    return _sandwich_core(rp, ci, vals, nblocks, m, sinv, dummy, ncols, bw, True)
