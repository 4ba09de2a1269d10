"""Companion-form state space baseline for the VAR missing-data step.

Represents the VAR as a first-order system on stacked lags, measures the
observed coordinates and any aggregation constraints exactly (zero
measurement noise), and draws the joint state path with a simulation
smoother: simulate an unconditional path, smooth the discrepancy to the
actual measurements with a Kalman filter plus backward recursion, and add.

This is the correctness oracle and runtime baseline for the banded-precision
samplers; it scales cubically in the state dimension where they stay linear.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DimensionMismatch, FilterNotFinite, ValidationError
from .patterns import MQ_WEIGHTS, backfill_initials, column_fill_values
from .rng import RngStream

logger = logging.getLogger(__name__)

INIT_SPREAD = 10.0  # prior variance on backfilled initial state entries


@dataclass
class CompanionForm:
    """First-order representation s_t = F0 + F1 s_{t-1} + (eps_t, 0, ...).

    The state stacks L >= p lags, s_t = (y_t', ..., y_{t-L+1}')'; L grows
    beyond p when constraint windows reach further back.  Lambda2 selects
    y_t from the state; Lambda1 is the aggregation-row template carrying the
    intertemporal weights.  Per period the measurement takes the observed
    rows of Lambda2 plus the scheduled constraint rows.
    """

    F0: np.ndarray
    F1: np.ndarray
    Sigma: np.ndarray
    Lambda1: np.ndarray
    Lambda2: np.ndarray
    n: int
    p: int
    L: int
    observed: np.ndarray            # (T, n) bool
    schedule: dict = field(default_factory=dict)   # t (1-based) -> [(var, weights, z)]
    init_mean: np.ndarray = None
    init_sd: np.ndarray = None

    @property
    def dim(self):
        return self.n * self.L

    @property
    def T(self):
        return self.observed.shape[0]


def build_companion(params, mask, constraints=None, initials=None, fill_values=None):
    """Assemble the companion form for given VAR parameters and data pattern.

    initials is an optional (p, n) block of pre-sample values (NaN cells
    allowed).  Initial state entries that have to be backfilled get prior
    variance 10 around fill_values (default 0); provided entries are treated
    as known.
    """
    n = params.n
    p = params.p
    if mask.n != n:
        raise DimensionMismatch(f"mask has {mask.n} variables, parameters have {n}")
    T = mask.T

    L = p
    schedule = {}
    if constraints is not None:
        for r in range(constraints.n_rows):
            w = constraints.row_weights[r]
            L = max(L, len(w))
            t = int(constraints.row_time[r])
            schedule.setdefault(t, []).append(
                (int(constraints.row_var[r]), np.asarray(w, dtype=float),
                 float(constraints.z[r]))
            )
    d = n * L

    F1 = np.zeros((d, d))
    for l in range(p):
        F1[:n, l * n : (l + 1) * n] = params.B[l]
    if L > 1:
        F1[n:, : d - n] = np.eye(d - n)
    F0 = np.zeros(d)
    F0[:n] = params.b0

    Lambda2 = np.zeros((n, d))
    Lambda2[:, :n] = np.eye(n)
    Lambda1 = np.zeros((n, d))
    nlag = min(len(MQ_WEIGHTS), L)
    for i in range(n):
        for j in range(nlag):
            Lambda1[i, j * n + i] = MQ_WEIGHTS[j]

    # initial state y_0, y_{-1}, ..., y_{1-L}; rows beyond the provided
    # pre-sample block are always backfilled
    ext = np.full((L, n), np.nan)
    if initials is not None:
        initials = np.asarray(initials, dtype=float)
        if initials.shape != (p, n):
            raise DimensionMismatch(f"initials must have shape {(p, n)}")
        ext[:p] = initials
    fills = np.zeros(n) if fill_values is None else np.asarray(fill_values, dtype=float)
    filled, was_filled = backfill_initials(ext, fills)
    init_mean = filled.ravel()
    init_sd = np.where(was_filled.ravel(), np.sqrt(INIT_SPREAD), 0.0)

    return CompanionForm(
        F0=F0,
        F1=F1,
        Sigma=np.asarray(params.Sigma, dtype=float),
        Lambda1=Lambda1,
        Lambda2=Lambda2,
        n=n,
        p=p,
        L=L,
        observed=mask.observed.copy(),
        schedule=schedule,
        init_mean=init_mean,
        init_sd=init_sd,
    )


def _measurements(cf, panel):
    """Per-period stacked measurement arrays (values, counts, rows)."""
    T, n = panel.shape
    d = cf.dim
    counts = np.zeros(T, dtype=np.int64)
    rows_per_t = []
    for t in range(T):
        rows = []
        for i in range(n):
            if cf.observed[t, i]:
                z_row = np.zeros(d)
                z_row[i] = 1.0
                rows.append((z_row, panel[t, i]))
        for (var, w, zval) in cf.schedule.get(t + 1, ()):
            # lag j refers to y_{t+1-j}; pre-sample lags were folded into z
            # at constraint-build time and stay out of the measurement row
            z_row = np.zeros(d)
            for j in range(len(w)):
                if j <= t:
                    z_row[j * n + var] = w[j]
            rows.append((z_row, zval))
        rows_per_t.append(rows)
        counts[t] = len(rows)
    mmax = int(counts.max()) if T else 0
    y = np.zeros((T, mmax))
    Z = np.zeros((T, mmax, d))
    for t in range(T):
        for r, (z_row, val) in enumerate(rows_per_t[t]):
            Z[t, r] = z_row
            y[t, r] = val
    return y, counts, Z


def _omega_paths(cf, T, h):
    scale = np.exp(h) if h is not None else np.ones(T)
    Lc = np.linalg.cholesky(cf.Sigma)
    Om = scale[:, None, None] * cf.Sigma[None, :, :]
    Lt = np.sqrt(scale)[:, None, None] * Lc[None, :, :]
    return Om, Lt


def _predicted_initial(cf, Om0):
    d = cf.dim
    s1 = cf.F0 + cf.F1 @ cf.init_mean
    P0 = cf.init_sd ** 2
    P1 = (cf.F1 * P0[None, :]) @ cf.F1.T
    P1[: cf.n, : cf.n] += Om0
    return s1, 0.5 * (P1 + P1.T)


def dk_smoother(cf, panel, rng, h=None, return_states=False):
    """One joint posterior draw of the state path; returns the missing block.

    panel is (T, n) with NaN at unobserved cells (values at observed cells
    must match the mask the form was built with).  h is the optional (T,)
    common log-volatility path scaling the innovation block.
    """
    panel = np.asarray(panel, dtype=float)
    T, n = panel.shape
    if (T, n) != cf.observed.shape:
        raise DimensionMismatch("panel shape does not match the companion form")
    y, mc, Z = _measurements(cf, panel)
    Om, Lt = _omega_paths(cf, T, h)
    d = cf.dim

    xi0 = rng.normal(d)
    xis = rng.normal((T, n))
    states_plus, y_plus = kernels.kf_simulate(cf.F0, cf.F1, Lt, cf.init_mean,
                                              cf.init_sd, xi0, xis, Z, mc)
    ystar = y - y_plus
    _, P1 = _predicted_initial(cf, Om[0])
    shat, _, status = kernels.kf_smooth(ystar, mc, Z, np.zeros(d), cf.F1, Om,
                                        np.zeros(d), P1, 1e-10)
    if status >= 0:
        raise FilterNotFinite(f"filter failed at period {status + 1}")
    states = states_plus + shat
    ym = states[:, :n][~cf.observed]
    if return_states:
        return ym, states
    return ym


def dk_posterior_mean(cf, panel, h=None):
    """Smoothed posterior mean of the missing block (no simulation)."""
    panel = np.asarray(panel, dtype=float)
    T, n = panel.shape
    y, mc, Z = _measurements(cf, panel)
    Om, _ = _omega_paths(cf, T, h)
    s1, P1 = _predicted_initial(cf, Om[0])
    shat, _, status = kernels.kf_smooth(y, mc, Z, cf.F0, cf.F1, Om, s1, P1, 1e-10)
    if status >= 0:
        raise FilterNotFinite(f"filter failed at period {status + 1}")
    return shat[:, :n][~cf.observed]


def dk_loglik(cf, panel, h=None):
    """Exact log-density of all measurements under the state space form."""
    panel = np.asarray(panel, dtype=float)
    T, n = panel.shape
    y, mc, Z = _measurements(cf, panel)
    Om, _ = _omega_paths(cf, T, h)
    s1, P1 = _predicted_initial(cf, Om[0])
    _, ll, status = kernels.kf_smooth(y, mc, Z, cf.F0, cf.F1, Om, s1, P1, 1e-10)
    if status >= 0:
        raise FilterNotFinite(f"filter failed at period {status + 1}")
    return float(ll)


def draw_closure(method, design, seed=0):
    """Build a one-draw callable for the timing harness.

    method is one of 'precision-hard', 'precision-soft', 'dk'.  Each call
    repeats the full per-sweep work (system assembly included), matching the
    cost profile inside a Gibbs sampler.
    """
    from . import experiments  # deferred: experiments imports this module

    inst = experiments.make_timing_instance(design, seed=seed)
    params = inst["params"]
    mask = inst["mask"]
    panel = inst["panel"]
    initials = inst["initials"]
    cons_h = inst["constraints_hard"]
    cons_s = inst["constraints_soft"]

    from .var_mf import sample_missing_var

    def one_draw(rng):
        if method == "precision-hard":
            sample_missing_var(panel, mask, params, initials, rng,
                               constraints=cons_h)
        elif method == "precision-soft":
            sample_missing_var(panel, mask, params, initials, rng,
                               constraints=cons_s)
        elif method == "dk":
            cf = build_companion(params, mask, constraints=cons_h,
                                 initials=initials)
            dk_smoother(cf, panel, rng, h=params.h)
        else:
            raise ValidationError(f"unknown timing method {method!r}")

    return one_draw


def time_ten_draws(method, design, seed=0):
    """Median-of-3 wall time for 10 consecutive missing-data draws."""
    one_draw = draw_closure(method, design, seed=seed)
    # warm pass compiles any jitted kernels before the clock starts
    one_draw(RngStream(seed, (999,)))
    times = []
    for rep in range(3):
        rng = RngStream(seed, (rep,))
        t0 = time.perf_counter()
        for _ in range(10):
            one_draw(rng)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))
