"""Small sampling helpers used by both Gibbs samplers."""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import invwishart

from .errors import ValidationError


def trunc_normal(rng, mean, sd, lo, hi):
    """One draw from N(mean, sd^2) truncated to (lo, hi), by inverse CDF.

    mean/sd may be scalars or arrays; lo/hi are scalars.  The uniform is
    clipped away from {0, 1} so ndtri stays finite even when the interval
    sits far in a tail.
    """
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    if np.any(sd <= 0):
        raise ValidationError("truncation helper needs sd > 0")
    a = ndtr((lo - mean) / sd)
    b = ndtr((hi - mean) / sd)
    u = rng.uniform(size=mean.shape if mean.shape else None)
    v = a + u * (b - a)
    v = np.clip(v, 1e-15, 1.0 - 1e-15)
    return mean + sd * ndtri(v)


def draw_invgamma(rng, shape, rate):
    """Inverse-gamma draw with density proportional to x^-(shape+1) exp(-rate/x)."""
    g = rng.gamma(shape, 1.0 / rate)
    return 1.0 / g


def draw_invwishart(rng, df, scale):
    """Inverse-Wishart draw; df must exceed dim - 1."""
    return invwishart.rvs(df=df, scale=scale, random_state=rng.generator)
