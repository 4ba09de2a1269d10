"""Precision-based sampling for high-dimensional models with missing data.

The package imputes missing observations in large VARs and dynamic factor
models by sampling them jointly from banded precision systems, with exact
(hard) or high-precision (soft) handling of inter-temporal aggregation
constraints, a Kalman smoother baseline for comparison, and the study
harness and command line tools built on top.
"""

from .band import (BandCholeskyFactor, SparseMatrix, SymBandMatrix, band_add,
                   band_cholesky, band_solve, band_solve_spd, sandwich,
                   sparse_matmul)
from .dfm import DfmParams, DfmPriors, run_gibbs_dfm
from .errors import (BandmissError, DimensionMismatch, ExplosiveDraw,
                     FilterNotFinite, InsufficientData, NewtonDivergence,
                     NonMonotoneDates, NotPositiveDefinite, NumericalError,
                     SchemaMismatch, SingularConstraint, UnknownTransform,
                     ValidationError, WindowOutOfRange)
from .ingest import Dataset, apply_transform, ingest, read_schema
from .kalman import CompanionForm, build_companion, dk_posterior_mean, dk_smoother
from .output import ChainOutput
from .patterns import (ConstraintSet, MQ_WEIGHTS, ObservationMask,
                       aggregate_weekly, build_mq_constraints,
                       build_selection, build_var_stacking,
                       build_weekly_constraints, weekly_weights)
from .rng import RngStream
from .sampler import (CanonicalGaussian, apply_soft, assemble_conditional,
                      draw_hard, draw_unconstrained, hard_mean,
                      observed_loglik)
from .var_mf import (GibbsConfig, MinnesotaPrior, VarParams, minnesota_prior,
                     run_gibbs_var)

__version__ = "1.0.0"

__all__ = [
    "BandCholeskyFactor", "SparseMatrix", "SymBandMatrix", "band_add",
    "band_cholesky", "band_solve", "band_solve_spd", "sandwich",
    "sparse_matmul",
    "DfmParams", "DfmPriors", "run_gibbs_dfm",
    "BandmissError", "DimensionMismatch", "ExplosiveDraw", "FilterNotFinite",
    "InsufficientData", "NewtonDivergence", "NonMonotoneDates",
    "NotPositiveDefinite", "NumericalError", "SchemaMismatch",
    "SingularConstraint", "UnknownTransform", "ValidationError",
    "WindowOutOfRange",
    "Dataset", "apply_transform", "ingest", "read_schema",
    "CompanionForm", "build_companion", "dk_posterior_mean", "dk_smoother",
    "ChainOutput",
    "ConstraintSet", "MQ_WEIGHTS", "ObservationMask", "aggregate_weekly",
    "build_mq_constraints", "build_selection", "build_var_stacking",
    "build_weekly_constraints", "weekly_weights",
    "RngStream",
    "CanonicalGaussian", "apply_soft", "assemble_conditional", "draw_hard",
    "draw_unconstrained", "hard_mean", "observed_loglik",
    "GibbsConfig", "MinnesotaPrior", "VarParams", "minnesota_prior",
    "run_gibbs_var",
    "__version__",
]
