"""Joint sampling of missing values in precision (canonical) form.

The conditional distribution of the stacked missing vector is Gaussian with
banded precision K and shift r (so the mean solves K mu = r).  Draws never
form a covariance matrix: one banded factorization plus back-substitution
yields an exact joint draw, and hard linear restrictions are enforced by a
low-rank correction computed through the same factor.
"""

from __future__ import annotations

import logging

import numpy as np
import scipy.linalg

from .band import (
    SparseMatrix,
    SymBandMatrix,
    band_add,
    band_cholesky,
    band_solve,
    band_solve_spd,
    sandwich,
    block_weighted_rhs,
)
from .errors import DimensionMismatch, NumericalError, SingularConstraint, ValidationError

logger = logging.getLogger(__name__)

LOG2PI = float(np.log(2.0 * np.pi))
HARD_FEASIBILITY_TOL = 1e-8


class CanonicalGaussian:
    """Gaussian in precision form: precision K, shift r = K mu."""

    __slots__ = ("K", "r", "_factor", "_mean")

    def __init__(self, K: SymBandMatrix, r):
        self.K = K
        self.r = np.ascontiguousarray(r, dtype=np.float64)
        if self.r.shape != (K.dim,):
            raise DimensionMismatch(f"shift length {self.r.shape} != dim {K.dim}")
        if not np.isfinite(self.r).all():
            raise ValidationError("shift vector contains non-finite entries")
        self._factor = None
        self._mean = None

    @property
    def dim(self):
        return self.K.dim

    def factor(self):
        if self._factor is None:
            self._factor = band_cholesky(self.K)
        return self._factor

    def mean(self):
        if self._mean is None:
            self._mean = band_solve_spd(self.factor(), self.r)
        return self._mean

    def logdet_precision(self):
        return self.factor().logdet()

    def __repr__(self):
        return f"CanonicalGaussian(dim={self.dim}, bw={self.K.half_bandwidth})"


def assemble_conditional(G_o, G_m, sigma_inv_blocks, predictor, y_o) -> CanonicalGaussian:
    """Build the conditional of y_m from the stacked system
    G_o y_o + G_m y_m = predictor + error, error ~ N(0, blockdiag(Sigma)).

    sigma_inv_blocks holds the per-period INVERSE covariances, shape
    (T, n, n) dense or (T, n) diagonal.
    """
    predictor = np.ascontiguousarray(predictor, dtype=np.float64)
    y_o = np.ascontiguousarray(y_o, dtype=np.float64)
    if y_o.shape[0] != G_o.cols:
        raise DimensionMismatch("y_o length does not match G_o columns")
    if predictor.shape[0] != G_o.rows or G_m.rows != G_o.rows:
        raise DimensionMismatch("stacked row dimension mismatch")
    K = sandwich(G_m, sigma_inv_blocks)
    resid = predictor - G_o.matvec(y_o)
    r = block_weighted_rhs(G_m, sigma_inv_blocks, resid)
    return CanonicalGaussian(K, r)


def draw_unconstrained(g: CanonicalGaussian, rng):
    """One exact joint draw: factor K = C C', then mu + solve(C', x)."""
    if g.dim == 0:
        return np.zeros(0)
    C = g.factor()
    x = rng.normal(g.dim)
    v = band_solve(C, x, "backward")
    return g.mean() + v


def draw_hard(g: CanonicalGaussian, constraints, rng):
    """Joint draw subject to M y = z exactly.

    Factor once; draw unconstrained; solve K U = M' through the factor;
    solve the small (M U) system; correct the draw.  Verifies feasibility
    to 1e-8 on every draw.
    """
    if constraints.kind != "hard":
        raise ValidationError("draw_hard requires a hard constraint set")
    M = constraints.M
    if M.cols != g.dim:
        raise DimensionMismatch("constraint columns do not match dimension")
    u = draw_unconstrained(g, rng)
    if M.rows == 0:
        return u
    C = g.factor()
    rhs = M.to_dense().T
    U = band_solve(C, band_solve(C, rhs, "forward"), "backward")
    MU = M.to_scipy() @ U
    MU = 0.5 * (MU + MU.T)
    try:
        cho = scipy.linalg.cho_factor(MU, check_finite=False)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        raise SingularConstraint(
            f"constraint system is rank deficient ({M.rows} rows)"
        )
    resid = constraints.z - M.matvec(u)
    y = u + U @ scipy.linalg.cho_solve(cho, resid, check_finite=False)
    gap = float(np.abs(M.matvec(y) - constraints.z).max())
    if not np.isfinite(gap) or gap > HARD_FEASIBILITY_TOL:
        raise NumericalError(f"hard constraint violated after correction: gap {gap:.3e}")
    return y


def hard_mean(g: CanonicalGaussian, constraints):
    """Posterior mean under M y = z: the projection of the unconstrained mean."""
    if constraints.kind != "hard":
        raise ValidationError("hard_mean requires a hard constraint set")
    M = constraints.M
    if M.cols != g.dim:
        raise DimensionMismatch("constraint columns do not match dimension")
    mu = g.mean()
    if M.rows == 0:
        return mu.copy()
    C = g.factor()
    rhs = M.to_dense().T
    U = band_solve(C, band_solve(C, rhs, "forward"), "backward")
    MU = M.to_scipy() @ U
    MU = 0.5 * (MU + MU.T)
    try:
        cho = scipy.linalg.cho_factor(MU, check_finite=False)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        raise SingularConstraint(f"constraint system is rank deficient ({M.rows} rows)")
    return mu + U @ scipy.linalg.cho_solve(cho, constraints.z - M.matvec(mu),
                                           check_finite=False)


def apply_soft(g: CanonicalGaussian, constraints) -> CanonicalGaussian:
    """Fold z = M y + N(0, diag(o)) into the precision: a Bayes update.

    Returns a new CanonicalGaussian with precision K + M' O^-1 M and shift
    r + M' O^-1 z.
    """
    if constraints.kind != "soft":
        raise ValidationError("apply_soft requires a soft constraint set")
    M = constraints.M
    if M.cols != g.dim:
        raise DimensionMismatch("constraint columns do not match dimension")
    if M.rows == 0:
        return CanonicalGaussian(g.K, g.r.copy())
    oinv = 1.0 / constraints.o
    P = sandwich(M, oinv.reshape(-1, 1))
    Kbar = band_add(g.K, P)
    rbar = g.r + M.rmatvec(constraints.z * oinv)
    return CanonicalGaussian(Kbar, rbar)


def observed_loglik(g, G_o, G_m, sigma_inv_blocks, predictor, y_o, at=None):
    """Log marginal density of the observed data given parameters.

    Identity: log p(y_o) = log p(y_o, y_m) - log p(y_m | y_o), which holds
    at any y_m point; by default both pieces are evaluated at the
    conditional mean, where the quadratic of the second term vanishes.
    """
    S = np.ascontiguousarray(sigma_inv_blocks, dtype=np.float64)
    point = g.mean() if at is None else np.ascontiguousarray(at, dtype=np.float64)
    if point.shape != (g.dim,):
        raise DimensionMismatch("evaluation point has wrong length")
    resid = G_o.matvec(y_o) + G_m.matvec(point) - predictor
    nrows = resid.shape[0]
    W = resid.reshape(S.shape[0], S.shape[1])
    if S.ndim == 3:
        quad = float(np.einsum("bi,bij,bj->", W, S, W))
        sign, ld = np.linalg.slogdet(S)
        if np.any(sign <= 0):
            raise NumericalError("sigma inverse block is not positive definite")
        logdet_sinv = float(np.sum(ld))
    else:
        if np.any(S <= 0):
            raise NumericalError("diagonal sigma inverse entries must be positive")
        quad = float(np.sum(S * W * W))
        logdet_sinv = float(np.sum(np.log(S)))
    joint = -0.5 * nrows * LOG2PI + 0.5 * logdet_sinv - 0.5 * quad

    dev = point - g.mean()
    cond_quad = g.K.quadform(dev)
    cond = -0.5 * g.dim * LOG2PI + 0.5 * g.logdet_precision() - 0.5 * cond_quad
    return joint - cond
