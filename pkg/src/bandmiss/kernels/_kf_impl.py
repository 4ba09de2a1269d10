"""Kalman filter, smoother and unconditional simulator on a companion state.

Written in the numba-compatible subset of numpy (explicit time loops,
``np.dot`` for products) so the same source runs untouched on the numpy
backend and jitted on the numba backend.

Measurements are exact (zero noise): ``y_t = Z_t s_t`` with a per-period row
count ``mc[t]`` (rows of ``Z[t]`` beyond ``mc[t]`` are padding).  The process
covariance has rank n: only the leading n-by-n block of the state innovation
is stochastic.
"""

import numpy as np


def _chol_lower(a):
    # np.linalg.cholesky raises inside numba too, but we want a status code,
    # so factor manually; returns (L, ok)
    m = a.shape[0]
    L = np.zeros((m, m))
    for j in range(m):
        s = a[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if s <= 0.0 or not np.isfinite(s):
            return L, False
        L[j, j] = np.sqrt(s)
        for i in range(j + 1, m):
            t = a[i, j]
            for k in range(j):
                t -= L[i, k] * L[j, k]
            L[i, j] = t / L[j, j]
    return L, True


def _tri_solve_vec(L, b, trans):
    # L x = b (trans=0) or L' x = b (trans=1), L lower triangular
    m = L.shape[0]
    x = b.copy()
    if trans == 0:
        for i in range(m):
            s = x[i]
            for k in range(i):
                s -= L[i, k] * x[k]
            x[i] = s / L[i, i]
    else:
        for i in range(m - 1, -1, -1):
            s = x[i]
            for k in range(i + 1, m):
                s -= L[k, i] * x[k]
            x[i] = s / L[i, i]
    return x


def _tri_solve_mat(L, B, trans):
    m = B.shape[1]
    X = np.zeros_like(B)
    for j in range(m):
        X[:, j] = _tri_solve_vec(L, B[:, j].copy(), trans)
    return X


def kf_smooth(y, mc, Z, c1, F1, Om, s1, P1, jitter):
    """Filter + state smoother; returns (smoothed states, loglik, status).

    status: -1 ok, otherwise the period index where the innovation
    covariance failed to factor or turned non-finite.

    y : (T, mmax)     stacked measurement values, padded
    mc : (T,)         measurement counts per period
    Z : (T, mmax, d)  measurement rows, padded
    c1 : (d,)         state intercept
    F1 : (d, d)       transition
    Om : (T, n, n)    stochastic block of the state innovation covariance
    s1, P1 :          predicted mean/cov of the period-1 state
    """
    T = y.shape[0]
    d = F1.shape[0]
    n = Om.shape[1]

    a = s1.copy()
    P = P1.copy()
    loglik = 0.0
    # stored filter quantities for the backward pass
    a_st = np.zeros((T, d))
    P_st = np.zeros((T, d, d))
    Finv_v = np.zeros((T, y.shape[1]))
    K_st = np.zeros((T, d, y.shape[1]))

    log2pi = 1.8378770664093453

    for t in range(T):
        a_st[t] = a
        P_st[t] = P
        m = mc[t]
        if m > 0:
            Zt = np.ascontiguousarray(Z[t, :m, :])
            PZ = np.dot(P, Zt.T)                     # (d, m)
            F = np.dot(Zt, PZ)                       # (m, m)
            for i in range(m):
                for j in range(m):
                    F[i, j] = 0.5 * (F[i, j] + F[j, i])
            L, ok = _chol_lower(F)
            if not ok:
                # one ridge retry, mirroring the band Cholesky policy
                tr = 0.0
                for i in range(m):
                    tr += F[i, i]
                ridge = jitter * tr / m + 1e-300
                for i in range(m):
                    F[i, i] += ridge
                L, ok = _chol_lower(F)
                if not ok:
                    return a_st, loglik, t
            v = y[t, :m] - np.dot(Zt, a)
            u = _tri_solve_vec(L, v.copy(), 0)       # L u = v
            fiv = _tri_solve_vec(L, u.copy(), 1)     # F^{-1} v
            ldet = 0.0
            for i in range(m):
                ldet += np.log(L[i, i])
            loglik += -0.5 * m * log2pi - ldet - 0.5 * np.dot(u, u)
            PZF = _tri_solve_mat(L, np.ascontiguousarray(PZ.T), 0)   # L^{-1} Z P
            PZFinv = _tri_solve_mat(L, PZF, 1)                        # F^{-1} Z P
            Kt = np.dot(F1, PZFinv.T)                # (d, m) gain onto next state
            Finv_v[t, :m] = fiv
            K_st[t, :, :m] = Kt
            # next-period prediction
            a = c1 + np.dot(F1, a) + np.dot(Kt, v)
            Lmat = F1 - np.dot(Kt, Zt)
            P = np.dot(np.dot(F1, P), Lmat.T)
        else:
            a = c1 + np.dot(F1, a)
            P = np.dot(np.dot(F1, P), F1.T)
        # (a, P) now predict the period-(t+1) state, whose innovation is Om[t+1]
        if t + 1 < T:
            for i in range(n):
                for j in range(n):
                    P[i, j] += Om[t + 1, i, j]
        for i in range(d):
            for j in range(i):
                m2 = 0.5 * (P[i, j] + P[j, i])
                P[i, j] = m2
                P[j, i] = m2
        if not np.isfinite(a).all():
            return a_st, loglik, t

    # backward smoothing recursion
    shat = np.zeros((T, d))
    r = np.zeros(d)
    for t in range(T - 1, -1, -1):
        m = mc[t]
        if m > 0:
            Zt = np.ascontiguousarray(Z[t, :m, :])
            Kt = np.ascontiguousarray(K_st[t, :, :m])
            Lmat = F1 - np.dot(Kt, Zt)
            r = np.dot(Zt.T, Finv_v[t, :m]) + np.dot(Lmat.T, r)
        else:
            r = np.dot(F1.T, r)
        shat[t] = a_st[t] + np.dot(P_st[t], r)
    return shat, loglik, -1


def kf_simulate(c1, F1, Lt, s0, p0sd, xi0, xis, Z, mc):
    """Simulate an unconditional state path and its exact measurements.

    s0 is perturbed by p0sd * xi0 (diagonal initial spread); state shocks
    are Lt[t] @ xis[t] on the leading block.  Returns (states, measurements).
    """
    T = xis.shape[0]
    d = F1.shape[0]
    n = Lt.shape[1]
    mmax = Z.shape[1]
    s = s0 + p0sd * xi0
    states = np.zeros((T, d))
    ys = np.zeros((T, mmax))
    for t in range(T):
        sn = c1 + np.dot(F1, s)
        shock = np.dot(Lt[t], xis[t])
        for i in range(n):
            sn[i] += shock[i]
        states[t] = sn
        m = mc[t]
        if m > 0:
            Zt = np.ascontiguousarray(Z[t, :m, :])
            ys[t, :m] = np.dot(Zt, sn)
        s = sn
    return states, ys
