"""Gibbs sampler for a dynamic factor model with AR(2) idiosyncratic errors
and random-walk stochastic volatilities.

Model for an n-vector y_t with k factors:

    y_t = A f_t + eps_t,         eps_{i,t} = psi_{i,1} eps_{i,t-1} + psi_{i,2} eps_{i,t-2} + u_{i,t}
    f_{j,t} = phi_{j,1} f_{j,t-1} + phi_{j,2} f_{j,t-2} + eta_{j,t}

with u_{i,t} ~ N(0, e^{h_{i,t}}), eta_{j,t} ~ N(0, e^{h_{n+j,t}}), and every
log-volatility a Gaussian random walk started at a parameter h_{i,0}.

Identification fixes the leading k x k loading block to unit lower
triangular.  Missing cells in y are redrawn each sweep from their joint
conditional, obtained by whitening the observation equation with the
idiosyncratic AR operator so the stacked precision stays banded.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps
from scipy.linalg import solve_triangular

from .band import SparseMatrix, SymBandMatrix, band_add, band_cholesky, band_solve, sandwich, block_weighted_rhs
from .dists import draw_invgamma, trunc_normal
from .errors import BandmissError, ValidationError
from .output import ChainOutput
from .patterns import ObservationMask, column_fill_values
from .rng import RngStream
from .sampler import CanonicalGaussian, assemble_conditional, draw_unconstrained

logger = logging.getLogger(__name__)

SV_OFFSET = 1e-4

# 10-component Gaussian mixture approximation to the log chi^2_1 density
# (probabilities, means, variances)
MIX_P = np.array([0.00609, 0.04775, 0.13057, 0.20674, 0.22715,
                  0.18842, 0.12047, 0.05591, 0.01575, 0.00115])
MIX_M = np.array([1.92677, 1.34744, 0.73504, 0.02266, -0.85173,
                  -1.97278, -3.46788, -5.55246, -8.68384, -14.65000])
MIX_V = np.array([0.11265, 0.17788, 0.26768, 0.40611, 0.62699,
                  0.98583, 1.57469, 2.54498, 4.16591, 7.33342])


@dataclass
class DfmPriors:
    """Zero-centered priors for all parameter blocks."""

    va: float = 1.0        # loading prior variance
    vpsi: float = 0.01     # idiosyncratic AR prior variance, per coefficient
    vphi: float = 0.01     # factor AR prior variance, per coefficient
    nu_h: float = 3.0      # sig2_h ~ IG(nu_h, s_h), prior mean 0.5
    s_h: float = 1.0
    vh0: float = 0.01      # h_{i,0} ~ N(0, vh0)


@dataclass
class DfmParams:
    """One state of the factor model parameter block.

    A : (n, k) loadings, leading k x k block unit lower triangular
    psi : (n, 2) idiosyncratic AR coefficients, each in (-1, 1)
    phi : (k, 2) factor AR coefficients, each in (-1, 1)
    f : (T, k) factor paths
    h : (n+k, T) log-volatility paths, observation series first
    sig2_h : (n+k,) random-walk increment variances
    h0 : (n+k,) initial log-volatility levels
    """

    A: np.ndarray
    psi: np.ndarray
    phi: np.ndarray
    f: np.ndarray
    h: np.ndarray
    sig2_h: np.ndarray
    h0: np.ndarray

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def k(self):
        return self.A.shape[1]

    def check_invariants(self):
        n, k = self.A.shape
        lead = self.A[:k, :]
        if not np.all(np.diag(lead) == 1.0):
            raise BandmissError("identification block lost its unit diagonal")
        if k > 1 and np.any(np.triu(lead, 1) != 0.0):
            raise BandmissError("identification block lost its zero upper triangle")
        if np.any(np.abs(self.psi) >= 1.0) or np.any(np.abs(self.phi) >= 1.0):
            raise BandmissError("an AR coefficient left the unit interval")
        if np.any(self.sig2_h <= 0):
            raise BandmissError("a volatility increment variance is not positive")


def _quasi_diff(x, c1, c2):
    """Apply (1 - c1 L - c2 L^2) column-wise with zeroed pre-sample values.

    x is (T,) or (T, m); c1/c2 are scalars or length-m vectors.
    """
    out = x.copy()
    if x.shape[0] > 1:
        out[1:] -= c1 * x[:-1]
    if x.shape[0] > 2:
        out[2:] -= c2 * x[:-2]
    return out


def _ar_stack(coefs, T):
    """Sparse (T*m, T*m) quasi-differencing operator for diagonal AR(2) blocks.

    coefs is (m, 2).  Block row t carries I on the diagonal, -diag(coefs[:,0])
    at lag 1 and -diag(coefs[:,1]) at lag 2; pre-sample lags are dropped.
    """
    m = coefs.shape[0]
    dim = T * m
    j = np.arange(m)
    rows = [np.arange(dim)]
    cols = [np.arange(dim)]
    vals = [np.ones(dim)]
    if T > 1:
        r = (np.arange(1, T)[:, None] * m + j).ravel()
        rows.append(r)
        cols.append(r - m)
        vals.append(np.tile(-coefs[:, 0], T - 1))
    if T > 2:
        r = (np.arange(2, T)[:, None] * m + j).ravel()
        rows.append(r)
        cols.append(r - 2 * m)
        vals.append(np.tile(-coefs[:, 1], T - 2))
    mat = sps.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dim, dim),
    )
    return SparseMatrix.from_scipy(mat.tocsc())


def missing_conditional(params, mask, panel):
    """Gaussian conditional of the stacked missing vector given y^o and params.

    The observation equation is whitened by the idiosyncratic AR operator so
    the precision stays banded.
    """
    T, n = panel.shape
    P = params.f @ params.A.T
    pred = _quasi_diff(P, params.psi[:, 0], params.psi[:, 1]).ravel()
    Hpsi = _ar_stack(params.psi, T).to_scipy().tocsc()
    flat_obs = mask.observed.ravel()
    G_o = SparseMatrix.from_scipy(Hpsi[:, np.flatnonzero(flat_obs)])
    G_m = SparseMatrix.from_scipy(Hpsi[:, np.flatnonzero(~flat_obs)])
    blocks = np.exp(-params.h[:n].T)  # (T, n) diagonal weights
    y_o = panel.ravel()[flat_obs]
    return assemble_conditional(G_o, G_m, blocks, pred, y_o)


def sample_missing_dfm(params, mask, panel, rng):
    """Joint draw of all missing cells given the full parameter state.

    panel carries observed values (missing entries ignored).  Returns the
    stacked missing vector in time-major order.
    """
    return draw_unconstrained(missing_conditional(params, mask, panel), rng)


def factor_conditional(params, completed):
    """Banded Gaussian conditional of the stacked T*k factor vector."""
    T, n = completed.shape
    Hpsi = _ar_stack(params.psi, T).to_scipy()
    Gf = sps.kron(sps.identity(T, format="csc"), sps.csc_matrix(params.A))
    W = SparseMatrix.from_scipy((Hpsi @ Gf).tocsc())
    obs_w = np.exp(-params.h[:n].T)
    Hphi = _ar_stack(params.phi, T)
    fac_w = np.exp(-params.h[n:].T)
    K = band_add(sandwich(W, obs_w), sandwich(Hphi, fac_w))
    ytil = Hpsi @ completed.ravel()
    r = block_weighted_rhs(W, obs_w, ytil)
    return CanonicalGaussian(K, r)


def sample_factors(params, completed, rng):
    """Joint draw of all T*k factors from the banded Gaussian conditional."""
    T, k = completed.shape[0], params.k
    draw = draw_unconstrained(factor_conditional(params, completed), rng)
    return draw.reshape(T, k)


def sample_loadings(f, completed, h, psi, prior, rng):
    """Per-row conjugate regression draw of the free loadings.

    Row i regresses the quasi-differenced series on quasi-differenced
    factors with weights e^{-h_i}; identification entries are never touched.
    Row 0 has no free entries.
    """
    T, n = completed.shape
    k = f.shape[1]
    A = np.zeros((n, k))
    A[:k, :k] = np.eye(k)
    for i in range(n):
        nfree = min(i, k)
        ytil = _quasi_diff(completed[:, i], psi[i, 0], psi[i, 1])
        if nfree == 0:
            continue
        ftil = _quasi_diff(f, psi[i, 0], psi[i, 1])
        resp = ytil - ftil[:, i] if i < k else ytil
        X = ftil[:, :nfree]
        w = np.exp(-h[i])
        prec = (X * w[:, None]).T @ X
        prec[np.arange(nfree), np.arange(nfree)] += 1.0 / prior.va
        rhs = X.T @ (w * resp)
        L = np.linalg.cholesky(prec)
        mean = np.linalg.solve(prec, rhs)
        z = rng.normal(nfree)
        A[i, :nfree] = mean + solve_triangular(L.T, z, lower=False)
    return A


def _draw_ar_pair(e, w, current, var0, rng):
    """Truncated bivariate draw of AR(2) coefficients for one series.

    e is the residual series, w the precision weights e^{-h}.  Truncation is
    the elementwise box (-1, 1)^2: rejection from the unconstrained normal,
    with a univariate conditional sweep as fallback after 100 tries.
    Returns (pair, used_fallback).
    """
    T = e.shape[0]
    X = np.zeros((T, 2))
    X[1:, 0] = e[:-1]
    X[2:, 1] = e[:-2]
    prec = (X * w[:, None]).T @ X
    prec[np.arange(2), np.arange(2)] += 1.0 / var0
    rhs = X.T @ (w * e)
    cov = np.linalg.inv(prec)
    cov = 0.5 * (cov + cov.T)
    mean = cov @ rhs
    L = np.linalg.cholesky(cov)
    for _ in range(100):
        cand = mean + L @ rng.normal(2)
        if np.all(np.abs(cand) < 1.0):
            return cand, False
    # conditional-normal sweep; exact full conditionals of the same target
    pair = current.copy()
    for j in (0, 1):
        o = 1 - j
        cmean = mean[j] + cov[j, o] / cov[o, o] * (pair[o] - mean[o])
        cvar = cov[j, j] - cov[j, o] ** 2 / cov[o, o]
        pair[j] = float(trunc_normal(rng, cmean, math.sqrt(max(cvar, 1e-300)), -1.0, 1.0))
    return pair, True


def sample_ar_blocks(eps, f, h, current_psi, current_phi, prior, rng):
    """Draw all idiosyncratic and factor AR(2) coefficient pairs.

    Returns (psi, phi, n_fallback)."""
    T, n = eps.shape
    k = f.shape[1]
    psi = np.empty((n, 2))
    phi = np.empty((k, 2))
    fallbacks = 0
    for i in range(n):
        psi[i], fb = _draw_ar_pair(eps[:, i], np.exp(-h[i]), current_psi[i],
                                   prior.vpsi, rng)
        fallbacks += int(fb)
    for j in range(k):
        phi[j], fb = _draw_ar_pair(f[:, j], np.exp(-h[n + j]), current_phi[j],
                                   prior.vphi, rng)
        fallbacks += int(fb)
    return psi, phi, fallbacks


def sample_rw_sv(resid, sig2, h0, h, rng):
    """Auxiliary-mixture draw of one random-walk log-volatility path.

    resid is the whitened residual series whose conditional variance is
    e^{h_t}.  The log of its square (offset 1e-4) is linearized by a
    10-component normal mixture; indicators are drawn given the current
    path, then the new path jointly from the tridiagonal system.
    """
    T = resid.shape[0]
    ystar = np.log(resid * resid + SV_OFFSET)
    dev = ystar[:, None] - h[:, None] - MIX_M[None, :]
    logp = np.log(MIX_P)[None, :] - 0.5 * np.log(MIX_V)[None, :] \
        - 0.5 * dev * dev / MIX_V[None, :]
    logp -= logp.max(axis=1, keepdims=True)
    p = np.exp(logp)
    p /= p.sum(axis=1, keepdims=True)
    u = rng.uniform(T)
    s = (np.cumsum(p, axis=1) < u[:, None]).sum(axis=1)
    s = np.minimum(s, MIX_P.size - 1)

    band = np.zeros((2, T))
    band[0, :] = 2.0 / sig2
    band[0, -1] = 1.0 / sig2
    if T > 1:
        band[1, : T - 1] = -1.0 / sig2
    band[0] += 1.0 / MIX_V[s]
    r = (ystar - MIX_M[s]) / MIX_V[s]
    r[0] += h0 / sig2
    factor = band_cholesky(SymBandMatrix(T, 1, band, validate=False))
    mean = band_solve(factor, band_solve(factor, r, mode="forward"), mode="backward")
    z = rng.normal(T)
    return mean + band_solve(factor, z, mode="backward")


def _sv_hyper_rw(h, h0, prior, rng):
    """Conjugate draws of (sig2_h, h0) for one random-walk path."""
    T = h.shape[0]
    d0 = h[0] - h0
    dd = np.diff(h)
    rate = prior.s_h + 0.5 * (d0 * d0 + dd @ dd)
    sig2 = draw_invgamma(rng, prior.nu_h + 0.5 * T, rate)
    prec = 1.0 / prior.vh0 + 1.0 / sig2
    mean = (h[0] / sig2) / prec
    h0_new = mean + rng.normal() / math.sqrt(prec)
    return sig2, float(h0_new)


def _init_state(panel, mask, k, prior):
    """Principal-component initialization on the fill-completed panel."""
    T, n = panel.shape
    fills = column_fill_values(panel)
    filled = panel.copy()
    miss = ~mask.observed
    filled[miss] = np.broadcast_to(fills, (T, n))[miss]
    x = filled - filled.mean(axis=0)
    sd = x.std(axis=0)
    sd[sd == 0] = 1.0
    x = x / sd
    U, svals, _ = np.linalg.svd(x, full_matrices=False)
    f = U[:, :k] * math.sqrt(T)
    # the sign of a principal component is arbitrary, but the identification
    # scheme forces a +1 loading of series j on factor j; start in that basin
    for j in range(k):
        if f[:, j] @ x[:, j] < 0:
            f[:, j] = -f[:, j]
    A = np.zeros((n, k))
    A[:k, :k] = np.eye(k)
    for i in range(n):
        nfree = min(i, k)
        if nfree == 0:
            continue
        resp = filled[:, i] - (f[:, i] if i < k else 0.0)
        coef, _, _, _ = np.linalg.lstsq(f[:, :nfree], resp, rcond=None)
        A[i, :nfree] = coef
    params = DfmParams(
        A=A,
        psi=np.zeros((n, 2)),
        phi=np.zeros((k, 2)),
        f=f,
        h=np.zeros((n + k, T)),
        sig2_h=np.full(n + k, prior.s_h / max(prior.nu_h - 1.0, 1.0)),
        h0=np.zeros(n + k),
    )
    return filled, params


def run_gibbs_dfm(panel, k, prior, config, rng=None, order=None, state_dump=None):
    """Run the factor model Gibbs sampler on a NaN-coded panel.

    order optionally permutes the columns before estimation so that chosen
    series anchor the identification block; results are reported in that
    order.  The first k (post-ordering) series must be fully observed.  On
    an unexpected error the current state is saved to state_dump (if given)
    before the exception propagates.
    """
    panel = np.asarray(panel, dtype=float)
    if panel.ndim != 2:
        raise ValidationError("panel must be 2-d")
    if order is not None:
        order = np.asarray(order, dtype=int)
        if sorted(order.tolist()) != list(range(panel.shape[1])):
            raise ValidationError("order must be a permutation of the columns")
        panel = panel[:, order]
    T, n = panel.shape
    if not (1 <= k <= n):
        raise ValidationError(f"need 1 <= k <= n, got k={k}, n={n}")
    mask = ObservationMask(np.isfinite(panel))
    if not mask.observed[:, :k].all():
        raise ValidationError("the first k series must be fully observed to anchor "
                              "the identification block")
    if rng is None:
        rng = RngStream(config.seed)

    filled, params = _init_state(panel, mask, k, prior)
    n_missing = mask.n_missing
    flat_miss = ~mask.observed.ravel()

    store = {
        "factors": np.empty((config.n_draws, T, k)),
        "missing": np.empty((config.n_draws, n_missing)) if (config.store_missing and n_missing) else None,
        "loadings": np.empty((config.n_draws, n, k)) if config.store_params else None,
        "psi": np.empty((config.n_draws, n, 2)) if config.store_params else None,
        "phi": np.empty((config.n_draws, k, 2)) if config.store_params else None,
        "h": np.empty((config.n_draws, n + k, T)) if config.store_volatility else None,
        "sig2_h": np.empty((config.n_draws, n + k)) if config.store_volatility else None,
        "h0": np.empty((config.n_draws, n + k)) if config.store_volatility else None,
    }

    kept = 0
    fallbacks = 0
    sweep = -1
    try:
        for sweep in range(config.n_sweeps):
            if n_missing > 0:
                y_m = sample_missing_dfm(params, mask, filled, rng)
                filled.ravel()[flat_miss] = y_m
            params.f = sample_factors(params, filled, rng)
            params.A = sample_loadings(params.f, filled, params.h[:n],
                                       params.psi, prior, rng)
            eps = filled - params.f @ params.A.T
            psi, phi, fb = sample_ar_blocks(eps, params.f, params.h,
                                            params.psi, params.phi, prior, rng)
            params.psi = psi
            params.phi = phi
            fallbacks += fb
            u = _quasi_diff(eps, psi[:, 0], psi[:, 1])
            eta = _quasi_diff(params.f, phi[:, 0], phi[:, 1])
            resid = np.concatenate([u.T, eta.T], axis=0)  # (n+k, T)
            for i in range(n + k):
                params.h[i] = sample_rw_sv(resid[i], params.sig2_h[i],
                                           params.h0[i], params.h[i], rng)
                s2, h0v = _sv_hyper_rw(params.h[i], params.h0[i], prior, rng)
                params.sig2_h[i] = s2
                params.h0[i] = h0v
            params.check_invariants()
            if sweep >= config.n_burn and (sweep - config.n_burn) % config.thinning == 0 \
                    and kept < config.n_draws:
                store["factors"][kept] = params.f
                if store["missing"] is not None:
                    store["missing"][kept] = filled.ravel()[flat_miss]
                if store["loadings"] is not None:
                    store["loadings"][kept] = params.A
                    store["psi"][kept] = params.psi
                    store["phi"][kept] = params.phi
                if store["h"] is not None:
                    store["h"][kept] = params.h
                    store["sig2_h"][kept] = params.sig2_h
                    store["h0"][kept] = params.h0
                kept += 1
    except Exception as exc:
        if state_dump is not None:
            np.savez(
                state_dump,
                sweep=sweep,
                A=params.A,
                psi=params.psi,
                phi=params.phi,
                f=params.f,
                h=params.h,
                sig2_h=params.sig2_h,
                h0=params.h0,
                filled=filled,
            )
            logger.error("sweep %d failed (%s); state saved to %s", sweep, exc,
                         state_dump)
        raise

    draws = {k_: v for k_, v in store.items() if v is not None}
    diagnostics = {
        "ar_fallbacks": fallbacks,
        "rng_counter": rng.counter,
    }
    meta = {
        "kind": "dfm",
        "T": T,
        "n": n,
        "k": k,
        "n_missing": n_missing,
        "order": None if order is None else order.tolist(),
        "config": {
            "n_draws": config.n_draws,
            "n_burn": config.n_burn,
            "thinning": config.thinning,
            "seed": config.seed,
        },
        "observed_mask": mask.observed,
    }
    return ChainOutput(draws, meta, diagnostics)
