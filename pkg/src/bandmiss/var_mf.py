"""Gibbs sampler for a VAR with missing observations and common stochastic
volatility.

The observation panel may contain NaN cells.  Each sweep redraws the missing
cells jointly from their conditional Gaussian (optionally under hard or soft
linear constraints such as temporal aggregation), then the VAR coefficients,
the innovation covariance, the common log-volatility path and its
hyperparameters.

Model, with y_t an n-vector and x_t = (1, y_{t-1}', ..., y_{t-p}')':

    y_t = A x_t + eps_t,   eps_t ~ N(0, exp(h_t) * Sigma)
    h_t = phi * h_{t-1} + u_t,  u_t ~ N(0, sig2_h),  h_1 ~ N(0, sig2_h/(1-phi^2))

Rows of A are [b0 | B_1 | ... | B_p] per equation, and beta = A.ravel() is the
equation-major coefficient vector used throughout.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .band import (
    SparseMatrix,
    SymBandMatrix,
    band_cholesky,
    band_solve,
    band_solve_spd,
)
from .dists import draw_invgamma, draw_invwishart, trunc_normal
from .errors import (
    InsufficientData,
    NewtonDivergence,
    ValidationError,
)
from .output import ChainOutput
from .patterns import (
    ObservationMask,
    backfill_initials,
    build_var_stacking,
    column_fill_values,
    constraint_level_fill,
)
from .rng import RngStream
from .sampler import (
    apply_soft,
    assemble_conditional,
    draw_hard,
    draw_unconstrained,
    hard_mean,
)

logger = logging.getLogger(__name__)

NEWTON_TOL = 1e-6
NEWTON_MAX_ITER = 50


@dataclass
class VarParams:
    """One state of the VAR parameter block.

    b0 : (n,) intercepts
    B : list of p lag matrices, each (n, n)
    Sigma : (n, n) innovation covariance at h = 0
    h : (T,) common log-volatility path, or None for the homoskedastic model
    """

    b0: np.ndarray
    B: list
    Sigma: np.ndarray
    h: np.ndarray | None = None
    phi_h: float = 0.0
    sig2_h: float = 0.0

    @property
    def n(self):
        return self.b0.shape[0]

    @property
    def p(self):
        return len(self.B)

    def coef_matrix(self):
        """Stack [b0 | B_1 | ... | B_p] into (n, n*p + 1)."""
        return np.column_stack([self.b0] + list(self.B))

    @classmethod
    def from_coef_matrix(cls, A, Sigma, h=None, phi_h=0.0, sig2_h=0.0):
        n = A.shape[0]
        p = (A.shape[1] - 1) // n
        if A.shape[1] != n * p + 1:
            raise ValidationError("coefficient matrix width must be n*p + 1")
        b0 = A[:, 0].copy()
        B = [A[:, 1 + l * n : 1 + (l + 1) * n].copy() for l in range(p)]
        return cls(b0, B, Sigma, h, phi_h, sig2_h)


@dataclass
class MinnesotaPrior:
    """Independent normal prior on beta, inverse-Wishart on Sigma, and the
    volatility hyperpriors.

    beta_var holds the diagonal of the prior covariance in equation-major
    order.  sig2_h ~ IG(eta0, sh0); phi_h ~ N(phi0, vphi) truncated to
    (-1, 1).
    """

    beta_mean: np.ndarray
    beta_var: np.ndarray
    nu0: float
    S0: np.ndarray
    eta0: float = 10.0
    sh0: float = 0.004
    phi0: float = 0.97
    vphi: float = 0.01

    def __post_init__(self):
        self.beta_mean = np.asarray(self.beta_mean, dtype=float)
        self.beta_var = np.asarray(self.beta_var, dtype=float)
        if self.beta_mean.shape != self.beta_var.shape:
            raise ValidationError("beta_mean and beta_var must have equal length")
        if np.any(self.beta_var <= 0):
            raise ValidationError("beta_var entries must be positive")
        self.S0 = np.asarray(self.S0, dtype=float)

    @classmethod
    def diffuse(cls, n, p, coef_var=1.0, nu0=None, eta0=10.0, sh0=0.004):
        """Zero-mean prior with constant coefficient variance; used by the
        simulation study."""
        k = n * (n * p + 1)
        if nu0 is None:
            nu0 = n + 3.0
        return cls(
            beta_mean=np.zeros(k),
            beta_var=np.full(k, float(coef_var)),
            nu0=float(nu0),
            S0=np.eye(n),
            eta0=eta0,
            sh0=sh0,
        )


def _ar_residual_variance(x, order=4):
    """Sample residual variance of an intercept + AR(order) fit.

    x is the condensed observed subsequence of one series; gaps are closed up
    before fitting, which keeps the scale estimate usable on ragged panels.
    """
    x = np.asarray(x, dtype=float)
    x = x[np.isfinite(x)]
    m = order + 1
    if x.size < order + m + 1:
        raise InsufficientData(
            f"need at least {order + m + 1} observed values for the scale fit, got {x.size}"
        )
    y = x[order:]
    Z = np.column_stack([np.ones(y.size)] + [x[order - j : x.size - j] for j in range(1, order + 1)])
    coef, _, _, _ = np.linalg.lstsq(Z, y, rcond=None)
    resid = y - Z @ coef
    dof = y.size - m
    s2 = float(resid @ resid) / dof
    return max(s2, 1e-12)


def panel_scales(panel, order=4):
    """Per-series AR residual variances, used to size prior scales.

    Series with too few observed values borrow the average scale of the
    measurable ones; a panel with no measurable series at all is an error.
    """
    panel = np.asarray(panel, dtype=float)
    n = panel.shape[1]
    s2 = np.full(n, np.nan)
    for i in range(n):
        try:
            s2[i] = _ar_residual_variance(panel[:, i], order)
        except InsufficientData:
            pass
    bad = ~np.isfinite(s2)
    if bad.all():
        raise InsufficientData("no series has enough observed values for the scale fits")
    if bad.any():
        fallback = float(s2[~bad].mean())
        logger.warning("scale fit fell back to %.4g for %d series with too few "
                       "observations", fallback, int(bad.sum()))
        s2[bad] = fallback
    return s2


def minnesota_prior(panel, p, kappa1=0.04, kappa2=0.01, eta0=10.0, sh0=0.004,
                    phi0=0.97, vphi=0.01):
    """Shrinkage prior whose lag-l variances decay as 1/l^2.

    Own-lag coefficients get variance kappa1 / l^2, cross-lag coefficients
    kappa2 * s_i^2 / (l^2 * s_j^2), intercepts 100 * s_i^2, where s_r^2 is the
    AR(4) residual variance of series r computed on its observed values.
    Fully latent series, observed only through aggregation constraints,
    borrow the average scale of the measurable ones.
    """
    panel = np.asarray(panel, dtype=float)
    T, n = panel.shape
    s2 = panel_scales(panel)
    m = n * p + 1
    var = np.empty(n * m)
    for i in range(n):
        row = var[i * m : (i + 1) * m]
        row[0] = 100.0 * s2[i]
        for l in range(1, p + 1):
            block = row[1 + (l - 1) * n : 1 + l * n]
            block[:] = kappa2 * s2[i] / (l * l * s2)
            block[i] = kappa1 / (l * l)
    return MinnesotaPrior(
        beta_mean=np.zeros(n * m),
        beta_var=var,
        nu0=n + 3.0,
        S0=np.eye(n),
        eta0=eta0,
        sh0=sh0,
        phi0=phi0,
        vphi=vphi,
    )


@dataclass
class GibbsConfig:
    """Run-length and storage settings for either Gibbs sampler.

    n_draws counts stored post-burn draws; the chain runs for
    n_burn + n_draws * thinning sweeps in total.
    """

    n_draws: int
    n_burn: int = 0
    thinning: int = 1
    seed: int = 0
    constraints: str = "hard"
    sv: bool = True
    missing_method: str = "precision"
    store_missing: bool = True
    store_params: bool = True
    store_volatility: bool = True
    store_conditional_mean: bool = False

    def __post_init__(self):
        if self.n_draws < 1 or self.n_burn < 0:
            raise ValidationError("need n_draws >= 1 and n_burn >= 0")
        if self.thinning < 1:
            raise ValidationError("thinning must be >= 1")
        if self.constraints not in ("hard", "soft"):
            raise ValidationError("constraints must be 'hard' or 'soft'")
        if self.missing_method not in ("precision", "dk"):
            raise ValidationError("missing_method must be 'precision' or 'dk'")

    @property
    def n_sweeps(self):
        return self.n_burn + self.n_draws * self.thinning


def _design_matrix(yfull, initials, p):
    # row t is (1, y_{t-1}', ..., y_{t-p}'); initials[j] holds y_{-j}
    T, n = yfull.shape
    ext = np.vstack([initials[::-1], yfull])
    X = np.empty((T, n * p + 1))
    X[:, 0] = 1.0
    for l in range(1, p + 1):
        X[:, 1 + (l - 1) * n : 1 + l * n] = ext[p - l : p - l + T]
    return X


def residuals(yfull, initials, params):
    X = _design_matrix(yfull, initials, params.p)
    return yfull - X @ params.coef_matrix().T


def _chol_psd(K):
    """Dense Cholesky with one jitter retry, mirroring the banded policy."""
    try:
        return np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        bump = 1e-10 * float(np.mean(np.diag(K)))
        logger.warning("dense precision factorization needed jitter %.3e", bump)
        return np.linalg.cholesky(K + bump * np.eye(K.shape[0]))


def sample_var_coefficients(yfull, initials, prior, Sigma, h, p, rng):
    """Draw beta | y, Sigma, h from its conditional normal.

    Returns the new VarParams coefficient part as an (n, n*p+1) matrix.
    """
    T, n = yfull.shape
    X = _design_matrix(yfull, initials, p)
    d = np.exp(-h) if h is not None else np.ones(T)
    Xw = X * d[:, None]
    W = X.T @ Xw
    cross = yfull.T @ Xw  # (n, m)
    cf = sla.cho_factor(Sigma, lower=True)
    Sinv = sla.cho_solve(cf, np.eye(n))
    K = np.kron(Sinv, W)
    idx = np.arange(K.shape[0])
    K[idx, idx] += 1.0 / prior.beta_var
    r = (Sinv @ cross).ravel() + prior.beta_mean / prior.beta_var
    L = _chol_psd(K)
    mean = sla.cho_solve((L, True), r)
    z = rng.normal(K.shape[0])
    beta = mean + sla.solve_triangular(L.T, z, lower=False)
    return beta.reshape(n, n * p + 1)


def sample_sigma(eps, prior, h, rng):
    """Draw Sigma | eps, h from its inverse-Wishart conditional."""
    T, n = eps.shape
    d = np.exp(-h) if h is not None else np.ones(T)
    scale = prior.S0 + (eps * d[:, None]).T @ eps
    scale = 0.5 * (scale + scale.T)
    return draw_invwishart(rng, prior.nu0 + T, scale)


def _sv_prior_band(T, phi, sig2):
    band = np.zeros((2, T))
    band[0, :] = (1.0 + phi * phi) / sig2
    band[0, 0] = 1.0 / sig2
    band[0, -1] = 1.0 / sig2
    if T > 1:
        band[1, : T - 1] = -phi / sig2
    return band


def _sv_quad(h, phi, sig2):
    # h' Q h for the stationary AR(1) prior precision
    dev = h[1:] - phi * h[:-1]
    return ((1.0 - phi * phi) * h[0] ** 2 + dev @ dev) / sig2


def _sv_logpost(h, w, n, phi, sig2):
    return -0.5 * _sv_quad(h, phi, sig2) - 0.5 * np.sum(n * h + w * np.exp(-h))


def _sv_mode(h0, w, n, phi, sig2):
    """Newton iteration for the conditional mode of h; raises on divergence."""
    T = h0.shape[0]
    qband = _sv_prior_band(T, phi, sig2)
    h = h0.copy()
    for it in range(NEWTON_MAX_ITER):
        e = np.exp(-h)
        grad = -0.5 * (n - w * e)
        # subtract Q h from the gradient of the log posterior
        qh = qband[0] * h
        if T > 1:
            qh[:-1] += qband[1, : T - 1] * h[1:]
            qh[1:] += qband[1, : T - 1] * h[:-1]
        grad -= qh
        hess_band = qband.copy()
        hess_band[0] += 0.5 * w * e
        K = SymBandMatrix(T, 1, hess_band, validate=False)
        factor = band_cholesky(K)
        step = band_solve_spd(factor, grad)
        h = h + step
        if not np.all(np.isfinite(h)):
            raise NewtonDivergence("volatility mode search produced non-finite values")
        if np.max(np.abs(step)) < NEWTON_TOL:
            return h, factor, it + 1
    raise NewtonDivergence(
        f"volatility mode search did not converge in {NEWTON_MAX_ITER} iterations"
    )


def sample_common_sv(eps, Sigma, h, phi, sig2, rng):
    """Independence MH draw of the log-volatility path.

    The proposal is the Gaussian approximation at the conditional mode
    (Newton, banded Hessian).  On Newton divergence the current path is kept
    and the draw is counted as rejected.
    """
    T, n = eps.shape
    cf = sla.cho_factor(Sigma, lower=True)
    u = sla.cho_solve(cf, eps.T)
    w = np.einsum("ti,it->t", eps, u)
    try:
        hhat, factor, _ = _sv_mode(h, w, n, phi, sig2)
    except NewtonDivergence as exc:
        logger.warning("volatility update skipped: %s", exc)
        return h, False
    # refresh the Hessian at the mode for the proposal
    qband = _sv_prior_band(T, phi, sig2)
    hess = qband.copy()
    hess[0] += 0.5 * w * np.exp(-hhat)
    factor = band_cholesky(SymBandMatrix(T, 1, hess, validate=False))
    z = rng.normal(T)
    prop = hhat + band_solve(factor, z, mode="backward")

    def logq(x):
        dev = x - hhat
        qh = hess[0] * dev
        if T > 1:
            qh[:-1] += hess[1, : T - 1] * dev[1:]
            qh[1:] += hess[1, : T - 1] * dev[:-1]
        return 0.5 * factor.logdet() - 0.5 * float(dev @ qh)

    lr = (
        _sv_logpost(prop, w, n, phi, sig2)
        - _sv_logpost(h, w, n, phi, sig2)
        - logq(prop)
        + logq(h)
    )
    if math.log(rng.uniform()) < lr:
        return prop, True
    return h, False


def sample_sv_hyper(h, phi, sig2, prior, rng):
    """Draw (sig2_h, phi_h) given the volatility path.

    sig2_h is conjugate inverse-gamma including the stationary initial term;
    phi_h uses a truncated-normal proposal built from the transition
    likelihood with an MH correction for the h_1 terms.
    """
    T = h.shape[0]
    dev = h[1:] - phi * h[:-1]
    rate = prior.sh0 + 0.5 * ((1.0 - phi * phi) * h[0] ** 2 + dev @ dev)
    sig2_new = draw_invgamma(rng, prior.eta0 + 0.5 * T, rate)

    hp = h[:-1]
    prec = 1.0 / prior.vphi + (hp @ hp) / sig2_new
    mean = (prior.phi0 / prior.vphi + (h[1:] @ hp) / sig2_new) / prec
    prop = float(trunc_normal(rng, mean, 1.0 / math.sqrt(prec), -1.0, 1.0))

    def logg(x):
        return 0.5 * math.log1p(-x * x) - (1.0 - x * x) * h[0] ** 2 / (2.0 * sig2_new)

    phi_new = phi
    accepted = False
    if math.log(rng.uniform()) < logg(prop) - logg(phi):
        phi_new = prop
        accepted = True
    return sig2_new, phi_new, accepted


def _sigma_inv_blocks(Sigma, h, T):
    n = Sigma.shape[0]
    cf = sla.cho_factor(Sigma, lower=True)
    Sinv = sla.cho_solve(cf, np.eye(n))
    Sinv = 0.5 * (Sinv + Sinv.T)
    if h is None:
        return np.broadcast_to(Sinv, (T, n, n)).copy()
    return np.exp(-h)[:, None, None] * Sinv


def sample_missing_var(panel, mask, params, initials, rng, constraints=None):
    """Joint draw of all missing cells given parameters and observed data.

    Returns (y_m, gaussian) where y_m is the stacked missing vector in
    time-major order and gaussian the conditional it was drawn from.
    """
    T, n = panel.shape
    H, c = build_var_stacking(params, T, initials)
    flat_obs = mask.observed.ravel()
    Hs = H.to_scipy().tocsc()
    G_o = SparseMatrix.from_scipy(Hs[:, np.flatnonzero(flat_obs)])
    G_m = SparseMatrix.from_scipy(Hs[:, np.flatnonzero(~flat_obs)])
    blocks = _sigma_inv_blocks(params.Sigma, params.h, T)
    y_o = panel.ravel()[flat_obs]
    g = assemble_conditional(G_o, G_m, blocks, c, y_o)
    if constraints is None:
        return draw_unconstrained(g, rng), g
    if constraints.kind == "hard":
        return draw_hard(g, constraints, rng), g
    g2 = apply_soft(g, constraints)
    return draw_unconstrained(g2, rng), g2


def _init_state(panel, mask, p, prior, sv):
    T, n = panel.shape
    fills = column_fill_values(panel)
    filled = panel.copy()
    miss = ~mask.observed
    filled[miss] = np.broadcast_to(fills, (T, n))[miss]
    col_var = np.empty(n)
    for i in range(n):
        obs = panel[mask.observed[:, i], i]
        col_var[i] = np.var(obs) if obs.size > 1 else 1.0
    Sigma = np.diag(np.maximum(col_var, 1e-6))
    h = np.zeros(T) if sv else None
    phi = prior.phi0
    sig2 = prior.sh0 / max(prior.eta0 - 1.0, 1.0)
    params = VarParams(np.zeros(n), [np.zeros((n, n)) for _ in range(p)],
                       Sigma, h, phi, sig2)
    return filled, params


def run_gibbs_var(panel, p, prior, config, rng=None, constraints=None, initials=None):
    """Run the full Gibbs sampler on a panel with NaN-coded missing cells.

    initials is a (p, n) block of pre-sample values, NaN cells allowed; when
    omitted it is backfilled with column fill values.  Constraint row times
    refer to panel rows (1-based).
    """
    panel = np.asarray(panel, dtype=float)
    if panel.ndim != 2:
        raise ValidationError("panel must be 2-d")
    T, n = panel.shape
    if T <= p:
        raise InsufficientData(f"panel has {T} rows but the model needs more than p={p}")
    mask = ObservationMask(np.isfinite(panel))
    if rng is None:
        rng = RngStream(config.seed)
    if constraints is not None and constraints.kind != config.constraints:
        raise ValidationError(
            f"constraint set kind {constraints.kind!r} does not match config "
            f"{config.constraints!r}"
        )
    if config.missing_method == "dk" and constraints is not None \
            and constraints.kind != "hard":
        raise ValidationError("the state space baseline measures constraints "
                              "exactly; soft constraints need the precision path")
    if initials is None:
        initials = np.full((p, n), np.nan)
    initials = np.asarray(initials, dtype=float)
    if initials.shape != (p, n):
        raise ValidationError(f"initials must have shape {(p, n)}")
    fills = column_fill_values(panel)
    init_filled, init_mask = backfill_initials(initials, fills)

    filled, params = _init_state(panel, mask, p, prior, config.sv)
    n_missing = mask.n_missing
    flat_miss = ~mask.observed.ravel()
    m = n * p + 1

    if n_missing > 0:
        if constraints is not None:
            filled.ravel()[flat_miss] = constraint_level_fill(mask, constraints,
                                                              fills)
            for i in range(n):
                if not mask.observed[:, i].any():
                    params.Sigma[i, i] = max(float(np.var(filled[:, i])), 1e-6)
        # one parameter refresh from the starting panel, so the first missing
        # draw sees fitted dynamics rather than B = 0 at an arbitrary scale;
        # starting there can lock fully-hidden columns into an oscillating
        # mode that matches the aggregation sums but not the data dynamics
        A = sample_var_coefficients(filled, init_filled, prior, params.Sigma,
                                    params.h, p, rng)
        params = VarParams.from_coef_matrix(A, params.Sigma, params.h,
                                            params.phi_h, params.sig2_h)
        eps = residuals(filled, init_filled, params)
        params.Sigma = sample_sigma(eps, prior, params.h, rng)

    store = {
        "missing": np.empty((config.n_draws, n_missing)),
        "beta": np.empty((config.n_draws, n * m)) if config.store_params else None,
        "Sigma": np.empty((config.n_draws, n, n)) if config.store_params else None,
        "h": np.empty((config.n_draws, T)) if (config.sv and config.store_volatility) else None,
        "phi_h": np.empty(config.n_draws) if (config.sv and config.store_volatility) else None,
        "sig2_h": np.empty(config.n_draws) if (config.sv and config.store_volatility) else None,
        "missing_cmean": np.empty((config.n_draws, n_missing))
        if (config.store_conditional_mean and n_missing > 0) else None,
    }

    sv_acc = 0
    phi_acc = 0
    sv_tries = 0
    kept = 0
    if config.missing_method == "dk":
        from .kalman import build_companion, dk_posterior_mean, dk_smoother

    for sweep in range(config.n_sweeps):
        cond_g = None
        cond_cf = None
        cond_h = params.h
        if n_missing > 0:
            if config.missing_method == "dk":
                cf = build_companion(params, mask, constraints=constraints,
                                     initials=initials, fill_values=fills)
                y_m = dk_smoother(cf, panel, rng, h=params.h)
                cond_cf = cf
            else:
                y_m, cond_g = sample_missing_var(filled, mask, params,
                                                 init_filled, rng,
                                                 constraints=constraints)
            filled.ravel()[flat_miss] = y_m
        A = sample_var_coefficients(filled, init_filled, prior, params.Sigma,
                                    params.h, p, rng)
        params = VarParams.from_coef_matrix(A, params.Sigma, params.h,
                                            params.phi_h, params.sig2_h)
        eps = residuals(filled, init_filled, params)
        params.Sigma = sample_sigma(eps, prior, params.h, rng)
        if config.sv:
            h, ok = sample_common_sv(eps, params.Sigma, params.h,
                                     params.phi_h, params.sig2_h, rng)
            params.h = h
            sv_tries += 1
            sv_acc += int(ok)
            sig2, phi, ok2 = sample_sv_hyper(params.h, params.phi_h,
                                             params.sig2_h, prior, rng)
            params.sig2_h = sig2
            params.phi_h = phi
            phi_acc += int(ok2)
        if sweep >= config.n_burn and (sweep - config.n_burn) % config.thinning == 0:
            if kept < config.n_draws:
                store["missing"][kept] = filled.ravel()[flat_miss]
                if store["missing_cmean"] is not None:
                    # conditional mean of the same Gaussian the draw came
                    # from; averaging these gives a lower-variance posterior
                    # mean estimate than averaging the draws
                    if cond_cf is not None:
                        cm = dk_posterior_mean(cond_cf, panel, h=cond_h)
                    elif constraints is not None and constraints.kind == "hard":
                        cm = hard_mean(cond_g, constraints)
                    else:
                        cm = cond_g.mean()
                    store["missing_cmean"][kept] = cm
                if store["beta"] is not None:
                    store["beta"][kept] = params.coef_matrix().ravel()
                    store["Sigma"][kept] = params.Sigma
                if store["h"] is not None:
                    store["h"][kept] = params.h
                    store["phi_h"][kept] = params.phi_h
                    store["sig2_h"][kept] = params.sig2_h
                kept += 1

    draws = {k: v for k, v in store.items() if v is not None}
    diagnostics = {
        "sv_accept_rate": sv_acc / sv_tries if sv_tries else None,
        "phi_accept_rate": phi_acc / sv_tries if sv_tries else None,
        "rng_counter": rng.counter,
    }
    if store["h"] is not None and config.store_params and config.n_draws > 10:
        # weak joint identification check: the volatility level and the
        # covariance scale should not drift together
        a = draws["h"].mean(axis=1)
        b = np.array([np.linalg.slogdet(s)[1] for s in draws["Sigma"]])
        if a.std() > 0 and b.std() > 0:
            c = float(np.corrcoef(a, b)[0, 1])
            diagnostics["scale_drift_corr"] = c
            if abs(c) > 0.95:
                logger.warning("volatility level and covariance scale drift together "
                               "(corr %.3f)", c)
    meta = {
        "kind": "var",
        "T": T,
        "n": n,
        "p": p,
        "n_missing": n_missing,
        "constraint_rows": 0 if constraints is None else constraints.M.rows,
        "config": {
            "n_draws": config.n_draws,
            "n_burn": config.n_burn,
            "thinning": config.thinning,
            "seed": config.seed,
            "constraints": config.constraints if constraints is not None else "none",
            "sv": config.sv,
            "missing_method": config.missing_method,
        },
        "observed_mask": mask.observed,
        "initials_filled": init_mask,
    }
    return ChainOutput(draws, meta, diagnostics)
