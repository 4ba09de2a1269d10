"""Observation patterns, selection matrices and inter-temporal constraints.

A panel of T periods by n variables is stacked time-major:
stacked index s = (t - 1) * n + i for period t = 1..T and variable i = 0..n-1.
The observed and missing subvectors keep that order, so y = S_o y_o + S_m y_m
with selection matrices built here.

Low-frequency observations tie windows of consecutive missing values
together: monthly-quarterly windows carry weights (1/3, 2/3, 1, 2/3, 1/3),
weekly windows carry the triangular weights s/n_w and (2*n_w - s)/n_w.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse

from .band import SparseMatrix
from .errors import DimensionMismatch, ValidationError, WindowOutOfRange

logger = logging.getLogger(__name__)

MQ_WEIGHTS = np.array([1.0 / 3.0, 2.0 / 3.0, 1.0, 2.0 / 3.0, 1.0 / 3.0])


class ObservationMask:
    """Boolean observed/missing pattern for a T-by-n panel."""

    __slots__ = ("observed", "_miss_pos", "_obs_pos")

    def __init__(self, observed):
        self.observed = np.ascontiguousarray(observed, dtype=bool)
        if self.observed.ndim != 2:
            raise DimensionMismatch("mask must be 2-d (T, n)")
        self._miss_pos = None
        self._obs_pos = None

    @property
    def T(self):
        return self.observed.shape[0]

    @property
    def n(self):
        return self.observed.shape[1]

    @property
    def n_observed(self):
        return int(self.observed.sum())

    @property
    def n_missing(self):
        return int((~self.observed).sum())

    def _positions(self):
        if self._miss_pos is None:
            flat = self.observed.reshape(-1)
            obs = np.cumsum(flat) - 1
            mis = np.cumsum(~flat) - 1
            self._obs_pos = np.where(flat, obs, -1).reshape(self.T, self.n)
            self._miss_pos = np.where(~flat, mis, -1).reshape(self.T, self.n)
        return self._obs_pos, self._miss_pos

    def observed_position(self, t, i):
        """Position of (t, i) in y_o, 1-based t; -1 if missing."""
        return int(self._positions()[0][t - 1, i])

    def missing_position(self, t, i):
        return int(self._positions()[1][t - 1, i])

    def missing_position_matrix(self):
        return self._positions()[1]

    def __repr__(self):
        return f"ObservationMask(T={self.T}, n={self.n}, missing={self.n_missing})"


@dataclass
class SelectionPair:
    """Selection matrices with y = S_o y_o + S_m y_m."""

    S_o: SparseMatrix
    S_m: SparseMatrix

    def __post_init__(self):
        if self.S_o.rows != self.S_m.rows:
            raise DimensionMismatch("selection matrices must share the stacked dimension")


def build_selection(mask: ObservationMask) -> SelectionPair:
    """Build (S_o, S_m) for a mask; columns follow stacked (time-major) order."""
    flat = mask.observed.reshape(-1)
    N = flat.shape[0]
    obs_rows = np.flatnonzero(flat)
    mis_rows = np.flatnonzero(~flat)
    S_o = SparseMatrix.from_triples(N, len(obs_rows), [(int(r), j, 1.0) for j, r in enumerate(obs_rows)])
    S_m = SparseMatrix.from_triples(N, len(mis_rows), [(int(r), j, 1.0) for j, r in enumerate(mis_rows)])
    return SelectionPair(S_o, S_m)


def build_var_stacking(params, T, initials):
    """Stack a VAR(p) into H_B y = c_B + error over t = 1..T.

    params must expose b0 (n,) and B (p matrices of shape (n, n)).
    initials has shape (p, n) with initials[j] = y_{-j}, i.e. row 0 is the
    period immediately before the sample.  Lag terms that reach into the
    pre-sample are folded into c_B.

    Returns (H_B, c_B): H_B sparse (T n x T n) unit-diagonal lower block
    banded, c_B a (T n,) vector.
    """
    b0 = np.asarray(params.b0, dtype=np.float64)
    B = [np.asarray(Bl, dtype=np.float64) for Bl in params.B]
    p = len(B)
    n = b0.shape[0]
    initials = np.asarray(initials, dtype=np.float64)
    if initials.shape != (p, n):
        raise DimensionMismatch(f"initials shape {initials.shape} != {(p, n)}")

    c = np.tile(b0, T)
    rows = [np.arange(T * n, dtype=np.int64)]
    cols = [np.arange(T * n, dtype=np.int64)]
    vals = [np.ones(T * n)]
    ivar = np.arange(n, dtype=np.int64)
    for l in range(1, p + 1):
        nblk = T - l
        if nblk > 0:
            rblk = (np.arange(l, T, dtype=np.int64) * n)[:, None, None] + ivar[None, :, None]
            cblk = (np.arange(0, nblk, dtype=np.int64) * n)[:, None, None] + ivar[None, None, :]
            rows.append(np.broadcast_to(rblk, (nblk, n, n)).reshape(-1))
            cols.append(np.broadcast_to(cblk, (nblk, n, n)).reshape(-1))
            vals.append(np.broadcast_to(-B[l - 1], (nblk, n, n)).reshape(-1))
        # periods whose lag l reaches the pre-sample contribute to the intercept
        for t in range(1, min(l, T) + 1):
            c[(t - 1) * n : t * n] += B[l - 1] @ initials[l - t]
    H = SparseMatrix.from_scipy(
        scipy.sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(T * n, T * n),
        )
    )
    return H, c


@dataclass
class ConstraintSet:
    """Linear restrictions M y_m = z (hard) or z = M y_m + noise (soft).

    row_time / row_var / row_weights record, for each row, the 1-based
    release period, the variable index, and the weight vector over lags
    j = 0, 1, ... applied to y_{var, t - j}; the Kalman baseline rebuilds
    its aggregation measurements from these.
    """

    M: SparseMatrix
    z: np.ndarray
    kind: str
    o: np.ndarray | None = None
    row_time: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    row_var: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    row_weights: list = field(default_factory=list)
    n_dropped: int = 0

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64)
        if self.kind not in ("hard", "soft"):
            raise ValidationError(f"constraint kind must be hard or soft, got {self.kind!r}")
        if self.z.shape[0] != self.M.rows:
            raise DimensionMismatch("z length must equal constraint row count")
        if not np.isfinite(self.z).all():
            raise ValidationError("constraint values must be finite")
        if self.kind == "soft":
            if self.o is None:
                raise ValidationError("soft constraints need per-row variances o")
            self.o = np.asarray(self.o, dtype=np.float64)
            if self.o.shape[0] != self.M.rows or np.any(self.o <= 0.0):
                raise ValidationError("soft constraint variances must be positive, one per row")
        counts = np.diff(self.M.to_scipy().tocsr().indptr) if self.M.rows else np.zeros(0)
        if self.M.rows and np.any(counts == 0):
            raise ValidationError("constraint rows must reference at least one column")

    @property
    def n_rows(self):
        return self.M.rows


def _window_rows(mask, releases, weights_of, kind, o_of, label):
    """Shared builder: one constraint row per usable release.

    releases: iterable of (t, var, z) sorted deterministically.
    weights_of(t, var): weight vector over lags j = 0..J-1.
    """
    mpos = mask.missing_position_matrix()
    T = mask.T
    triples = []
    zs, os_, times, vars_, wlists = [], [], [], [], []
    dropped = 0
    row = 0
    for t, i, z, extra in releases:
        if not (1 <= t <= T):
            raise WindowOutOfRange(f"release period {t} outside sample 1..{T}")
        w = weights_of(t, i, extra)
        J = len(w)
        zadj = float(z)
        ok = True
        entries = []
        for j in range(J):
            tj = t - j
            if tj >= 1:
                if mask.observed[tj - 1, i]:
                    raise ValidationError(
                        f"{label} window touches an observed entry at (t={tj}, var={i}); "
                        "constraints may only reference missing values"
                    )
                entries.append((row, int(mpos[tj - 1, i]), float(w[j])))
            else:
                got = extra.get("initials") if isinstance(extra, dict) else None
                if got is not None and -tj < got.shape[0]:
                    zadj -= float(w[j]) * float(got[-tj, i])
                else:
                    ok = False
                    break
        if not ok:
            dropped += 1
            logger.warning(
                "%s release at t=%d for variable %d needs pre-sample values; dropped", label, t, i
            )
            continue
        triples.extend(entries)
        zs.append(zadj)
        times.append(t)
        vars_.append(i)
        wlists.append(np.asarray(w, dtype=np.float64))
        os_.append(o_of(t, i, extra))
        row += 1
    M = SparseMatrix.from_triples(row, mask.n_missing, triples)
    return ConstraintSet(
        M,
        np.array(zs),
        kind,
        o=np.array(os_) if kind == "soft" else None,
        row_time=np.array(times, dtype=np.int64),
        row_var=np.array(vars_, dtype=np.int64),
        row_weights=wlists,
        n_dropped=dropped,
    )


def build_mq_constraints(mask, quarterly_values, initial_values=None, kind="hard"):
    """Monthly-quarterly aggregation constraints.

    quarterly_values maps (t, var) -> observed quarterly value, with t the
    1-based month the observation attaches to (multiples of 3 in a balanced
    panel).  Each value constrains the five months t-4..t with weights
    (1/3, 2/3, 1, 2/3, 1/3).  Windows reaching before t = 1 use
    initial_values (rows y_0, y_{-1}, ...) when given; otherwise that
    observation is dropped with a warning.
    """
    initial_values = None if initial_values is None else np.asarray(initial_values, dtype=np.float64)
    releases = sorted(
        ((int(t), int(i), float(z), {"initials": initial_values})
         for (t, i), z in quarterly_values.items()),
        key=lambda r: (r[0], r[1]),
    )
    return _window_rows(
        mask,
        releases,
        lambda t, i, extra: MQ_WEIGHTS,
        kind,
        lambda t, i, extra: 1e-8,
        "monthly-quarterly",
    )


def weekly_weights(n_w):
    s = np.arange(1, 2 * n_w)
    return np.where(s <= n_w, s / n_w, (2 * n_w - s) / n_w)


def build_weekly_constraints(mask, release_schedule, o=1e-8, kind="soft"):
    """Weekly triangular constraints for monthly/quarterly series.

    release_schedule maps (t, var) -> (value, n_w) with n_w the number of
    weeks since the variable's previous release.  The row weights
    s/n_w (s <= n_w) and (2 n_w - s)/n_w apply to y_{var, t-s+1},
    s = 1..2 n_w - 1.  Windows reaching before t = 1 are dropped with a
    warning.  Soft by default with variance o per row.
    """
    releases = []
    for (t, i), (z, n_w) in release_schedule.items():
        if n_w < 1:
            raise ValidationError(f"n_w must be >= 1, got {n_w} at (t={t}, var={i})")
        releases.append((int(t), int(i), float(z), {"n_w": int(n_w), "initials": None}))
    releases.sort(key=lambda r: (r[0], r[1]))
    return _window_rows(
        mask,
        releases,
        lambda t, i, extra: weekly_weights(extra["n_w"]),
        kind,
        lambda t, i, extra: float(o),
        "weekly",
    )


def aggregate_weekly(weekly_path, n_w=13):
    """Aggregate a weekly path with the triangular window.

    Returns an array of length len(path) + 1 whose index matches the
    1-based release period convention: out[t] is the aggregate whose window
    ends at path period t, i.e. sum_s w_s y_{t-s+1}.  Entries whose window
    does not fully fit are NaN; the first defined index is 2*n_w - 1.
    A constant path c gives n_w * c at every defined index.
    """
    path = np.asarray(weekly_path, dtype=np.float64)
    if path.ndim != 1:
        raise DimensionMismatch("weekly path must be 1-d")
    n_w = int(n_w)
    L = path.shape[0]
    if L < 2 * n_w - 1:
        raise ValidationError(f"path length {L} < 2*n_w - 1 = {2 * n_w - 1}")
    w = weekly_weights(n_w)
    out = np.full(L + 1, np.nan)
    rev = w[::-1]
    for t in range(2 * n_w - 1, L + 1):
        out[t] = float(np.dot(rev, path[t - (2 * n_w - 1) : t]))
    return out


def column_fill_values(panel):
    """Per-variable mean over observed entries; 0 for all-missing columns."""
    panel = np.asarray(panel, dtype=np.float64)
    ok = np.isfinite(panel)
    counts = ok.sum(axis=0)
    sums = np.where(ok, panel, 0.0).sum(axis=0)
    return np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)


def backfill_initials(initial_block, fill_values):
    """Replace NaNs in a (p, n) pre-sample block by per-variable fills.

    Returns (filled block, boolean matrix of which entries were filled).
    """
    blk = np.array(initial_block, dtype=np.float64)
    filled = ~np.isfinite(blk)
    blk[filled] = np.broadcast_to(fill_values, blk.shape)[filled]
    return blk, filled


def constraint_level_fill(mask, constraints, fill_values):
    """Starting values for the missing cells implied by aggregation levels.

    Each constraint row pins a weighted window sum, so z divided by the
    weight sum is the level the window cells must average to.  Cells inside
    some window start there; uncovered cells copy the nearest covered cell
    of the same variable, falling back to the per-variable fill.  Starting a
    chain from these levels matters: a first draw taken at an arbitrary
    scale oscillates within the windows while matching the sums, and the
    coefficient step then locks onto that oscillation as if it were signal.

    Returns a vector over the missing cells in time-major order.
    """
    vals = np.zeros(mask.n_missing)
    cnt = np.zeros(mask.n_missing)
    coo = constraints.M.to_scipy().tocoo()
    wsum = np.bincount(coo.row, weights=coo.data, minlength=constraints.M.rows)
    z = np.asarray(constraints.z, dtype=np.float64)
    safe = np.where(np.abs(wsum) > 1e-12, wsum, 1.0)
    level = z / safe
    np.add.at(vals, coo.col, level[coo.row])
    np.add.at(cnt, coo.col, 1.0)
    out = np.where(cnt > 0, vals / np.maximum(cnt, 1.0), np.nan)

    mpos = mask.missing_position_matrix()
    for i in range(mask.n):
        idx = mpos[:, i]
        idx = idx[idx >= 0]
        if idx.size == 0:
            continue
        col = out[idx]
        good = np.flatnonzero(np.isfinite(col))
        if good.size == 0:
            col[:] = fill_values[i]
        else:
            # nearest covered neighbour in time
            pos = np.arange(col.size)
            nearest = good[np.searchsorted(good, pos).clip(0, good.size - 1)]
            prev = good[(np.searchsorted(good, pos, side="right") - 1).clip(0, good.size - 1)]
            pick = np.where(np.abs(nearest - pos) < np.abs(pos - prev), nearest, prev)
            col = col[pick]
        out[idx] = col
    return out
