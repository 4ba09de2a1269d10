"""CSV panel ingestion: frequency tags, per-series transforms, missing cells.

A data file holds one date column plus one column per series at the base
frequency (the finest frequency any series uses).  A schema file lists, for
every series, its frequency and the transform to apply.  Low-frequency
observations sit on the last base-period row of their span: a monthly value
in a weekly panel sits on the month's final ISO week, a quarterly value in a
monthly panel on the quarter's third month.  Cells off a series' frequency
grid are discarded to missing after transforming.
"""

from __future__ import annotations

import csv
import datetime
import logging
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import (NonMonotoneDates, SchemaMismatch, UnknownTransform,
                     ValidationError)

logger = logging.getLogger(__name__)

FREQUENCIES = ("weekly", "monthly", "quarterly")
_FINENESS = {"weekly": 0, "monthly": 1, "quarterly": 2}

# year-over-year growth for weekly series compares against the same week of
# the previous year, 52 rows back
YOY_LAG = 52

TRANSFORMS = ("level", "x/10", "ln", "100dln", "100dln52", "400dln")

_WEEK_KEY = re.compile(r"^(\d{4})-W(\d{2})$")
_MONTH_KEY = re.compile(r"^(\d{4})-(\d{2})$")
_QUARTER_KEY = re.compile(r"^(\d{4})-Q([1-4])$")

MISSING_TOKENS = ("", "nan")


def parse_date_key(text, freq):
    """Parse one date cell into a (year, period) tuple at the given frequency."""
    text = text.strip()
    if freq == "weekly":
        m = _WEEK_KEY.match(text)
        if m:
            y, w = int(m.group(1)), int(m.group(2))
            try:
                datetime.date.fromisocalendar(y, w, 1)
            except ValueError:
                raise NonMonotoneDates(f"{text!r} is not a valid ISO week")
            return (y, w)
    elif freq == "monthly":
        m = _MONTH_KEY.match(text)
        if m:
            y, mo = int(m.group(1)), int(m.group(2))
            if 1 <= mo <= 12:
                return (y, mo)
    else:
        m = _QUARTER_KEY.match(text)
        if m:
            return (int(m.group(1)), int(m.group(2)))
    raise NonMonotoneDates(f"{text!r} is not a valid {freq} date key")


def next_date_key(key, freq):
    y, sub = key
    if freq == "weekly":
        d = datetime.date.fromisocalendar(y, sub, 1) + datetime.timedelta(days=7)
        iso = d.isocalendar()
        return (iso[0], iso[1])
    if freq == "monthly":
        return (y + (sub == 12), sub % 12 + 1)
    return (y + (sub == 4), sub % 4 + 1)


def format_date_key(key, freq):
    y, sub = key
    if freq == "weekly":
        return f"{y:04d}-W{sub:02d}"
    if freq == "monthly":
        return f"{y:04d}-{sub:02d}"
    return f"{y:04d}-Q{sub}"


def _week_month(key):
    # an ISO week belongs to the month holding its Thursday, mirroring the
    # rule that assigns it an ISO year
    th = datetime.date.fromisocalendar(key[0], key[1], 4)
    return (th.year, th.month)


def _month_of(key, base):
    return _week_month(key) if base == "weekly" else key


def _quarter_of(key, base):
    y, mo = _month_of(key, base)
    return (y, (mo - 1) // 3 + 1)


def frequency_grid(date_keys, base, freq):
    """Boolean mask of the rows where a series of this frequency reports.

    A lower-frequency series reports on the last base row of its period:
    the row whose successor belongs to the next month or quarter.
    """
    T = len(date_keys)
    if freq == base:
        return np.ones(T, dtype=bool)
    if _FINENESS[freq] < _FINENESS[base]:
        raise SchemaMismatch(
            f"series frequency {freq} is finer than the panel base {base}")
    period = _month_of if freq == "monthly" else _quarter_of
    grid = np.empty(T, dtype=bool)
    for t, key in enumerate(date_keys):
        grid[t] = period(key, base) != period(next_date_key(key, base), base)
    return grid


def _safe_log(x):
    out = np.full_like(x, np.nan)
    ok = np.isfinite(x) & (x > 0.0)
    bad = np.isfinite(x) & ~ok
    if bad.any():
        logger.warning("log transform dropped %d non-positive values",
                       int(bad.sum()))
    out[ok] = np.log(x[ok])
    return out


def apply_transform(x, code):
    """Transform one raw column; differencing works on the series' own
    observation sequence, so each difference consumes one leading value."""
    x = np.asarray(x, dtype=np.float64)
    if code == "level":
        return x.copy()
    if code == "x/10":
        return x / 10.0
    if code == "ln":
        return _safe_log(x)
    if code in ("100dln", "400dln"):
        scale = 100.0 if code == "100dln" else 400.0
        lx = _safe_log(x)
        out = np.full_like(x, np.nan)
        obs = np.flatnonzero(np.isfinite(lx))
        if obs.size >= 2:
            out[obs[1:]] = scale * (lx[obs[1:]] - lx[obs[:-1]])
        return out
    if code == "100dln52":
        lx = _safe_log(x)
        out = np.full_like(x, np.nan)
        if lx.shape[0] > YOY_LAG:
            out[YOY_LAG:] = 100.0 * (lx[YOY_LAG:] - lx[:-YOY_LAG])
        return out
    raise UnknownTransform(f"unknown transform code {code!r}")


@dataclass
class Dataset:
    """A transformed panel with per-series frequency metadata.

    values is (T, n) with NaN for missing cells; dates holds canonical key
    strings at the base frequency.  loc and scale record the standardization
    applied to each series (identity when never standardized).
    """

    names: list
    frequencies: list
    transforms: list
    values: np.ndarray
    dates: list
    base: str
    loc: np.ndarray = None
    scale: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValidationError("values must be 2-d")
        T, n = self.values.shape
        if not (len(self.names) == len(self.frequencies) == len(self.transforms) == n):
            raise SchemaMismatch("metadata lists must match the value columns")
        if len(self.dates) != T:
            raise ValidationError("date index must match the value rows")
        if self.loc is None:
            self.loc = np.zeros(n)
        if self.scale is None:
            self.scale = np.ones(n)

    @property
    def T(self):
        return self.values.shape[0]

    @property
    def n(self):
        return self.values.shape[1]

    def grid(self, j):
        keys = [parse_date_key(d, self.base) for d in self.dates]
        return frequency_grid(keys, self.base, self.frequencies[j])

    def standardized(self):
        """Z-score each series over its observed entries."""
        vals = self.values.copy()
        loc = np.zeros(self.n)
        scale = np.ones(self.n)
        for j in range(self.n):
            col = vals[:, j]
            ok = np.isfinite(col)
            if ok.sum() < 2:
                continue
            loc[j] = float(col[ok].mean())
            sd = float(col[ok].std())
            if sd <= 0.0:
                logger.warning("series %s is constant; kept unscaled",
                               self.names[j])
                vals[ok, j] = 0.0
                continue
            scale[j] = sd
            vals[ok, j] = (col[ok] - loc[j]) / sd
        return Dataset(list(self.names), list(self.frequencies),
                       list(self.transforms), vals, list(self.dates),
                       self.base, self.loc + loc * self.scale,
                       self.scale * scale)

    def destandardize(self, j, x):
        """Map model-scale values of series j back to ingested units."""
        return np.asarray(x) * self.scale[j] + self.loc[j]

    def to_csv(self, data_path, schema_path, header_lines=()):
        """Write the panel and its schema; values go out post-transform.

        The schema marks every series as level so that re-ingesting the pair
        reproduces this dataset exactly.  header_lines are emitted as
        leading comment lines on both files.
        """
        with open(data_path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["date"] + list(self.names))
            for t in range(self.T):
                row = [self.dates[t]]
                for j in range(self.n):
                    v = self.values[t, j]
                    row.append(repr(float(v)) if np.isfinite(v) else "")
                w.writerow(row)
        with open(schema_path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["series", "frequency", "transform"])
            for j in range(self.n):
                w.writerow([self.names[j], self.frequencies[j], "level"])


def _read_rows(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh)
                if r and not r[0].lstrip().startswith("#")]
    if not rows:
        raise SchemaMismatch(f"{path} has no rows")
    return rows


def read_schema(schema_path):
    """Schema CSV -> ordered {series: (frequency, transform)}."""
    rows = _read_rows(schema_path)
    header = [c.strip().lower() for c in rows[0]]
    if header != ["series", "frequency", "transform"]:
        raise SchemaMismatch(
            f"schema header must be series,frequency,transform, got {rows[0]}")
    out = {}
    for r in rows[1:]:
        if len(r) != 3:
            raise SchemaMismatch(f"schema row {r} must have three fields")
        name, freq, tr = (c.strip() for c in r)
        if freq not in FREQUENCIES:
            raise SchemaMismatch(f"series {name!r}: unknown frequency {freq!r}")
        if tr not in TRANSFORMS:
            raise UnknownTransform(f"series {name!r}: unknown transform {tr!r}")
        if name in out:
            raise SchemaMismatch(f"series {name!r} listed twice")
        out[name] = (freq, tr)
    return out


def ingest(csv_path, schema_path, standardize=False):
    """Read a data/schema pair into a Dataset.

    Transforms run first on each raw column, then cells off the series'
    frequency grid are dropped to missing, then the optional z-scoring uses
    the surviving observed entries.
    """
    schema = read_schema(schema_path)
    rows = _read_rows(csv_path)
    header = [c.strip() for c in rows[0]]
    if len(header) < 2:
        raise SchemaMismatch("data file needs a date column plus one series")
    names = header[1:]
    if set(names) != set(schema):
        missing = sorted(set(schema) - set(names))
        extra = sorted(set(names) - set(schema))
        raise SchemaMismatch(
            f"schema and data disagree: missing from data {missing}, "
            f"unknown to schema {extra}")
    if len(set(names)) != len(names):
        raise SchemaMismatch("duplicate series column in data file")

    frequencies = [schema[nm][0] for nm in names]
    transforms = [schema[nm][1] for nm in names]
    base = FREQUENCIES[min(_FINENESS[f] for f in frequencies)]

    body = rows[1:]
    if not body:
        raise SchemaMismatch("data file has a header but no observations")
    keys = []
    raw = np.full((len(body), len(names)), np.nan)
    for t, r in enumerate(body):
        if len(r) != len(header):
            raise SchemaMismatch(
                f"row {t + 2} has {len(r)} fields, expected {len(header)}")
        keys.append(parse_date_key(r[0], base))
        for j, cell in enumerate(r[1:]):
            cell = cell.strip()
            if cell.lower() in MISSING_TOKENS:
                continue
            try:
                raw[t, j] = float(cell)
            except ValueError:
                raise SchemaMismatch(
                    f"row {t + 2}, series {names[j]!r}: bad number {cell!r}")
    for t in range(1, len(keys)):
        if keys[t] != next_date_key(keys[t - 1], base):
            raise NonMonotoneDates(
                f"rows {t + 1}->{t + 2}: {format_date_key(keys[t - 1], base)} "
                f"is not followed by {format_date_key(keys[t], base)}")

    values = np.full_like(raw, np.nan)
    for j in range(len(names)):
        col = apply_transform(raw[:, j], transforms[j])
        g = frequency_grid(keys, base, frequencies[j])
        off = ~g & np.isfinite(col)
        if off.any():
            logger.warning("series %s: %d values off its %s grid dropped",
                           names[j], int(off.sum()), frequencies[j])
        col[~g] = np.nan
        values[:, j] = col

    ds = Dataset(names, frequencies, transforms, values,
                 [format_date_key(k, base) for k in keys], base)
    return ds.standardized() if standardize else ds


def var_constraint_inputs(dataset):
    """Split a dataset into the latent-panel view used by the VAR sampler.

    Low-frequency series are modeled at the base frequency: their columns
    come back fully missing and their observed values become aggregation
    data instead.  Monthly values in a weekly panel (and quarterly values in
    either panel) map to (t, var) -> (value, n_w) release entries, with n_w
    the base periods since the variable's previous release; quarterly values
    in a monthly panel map to (t, var) -> value entries for the fixed
    five-month window.  t is 1-based to match constraint row times.
    """
    panel = dataset.values.copy()
    mq = {}
    weekly = {}
    for j, freq in enumerate(dataset.frequencies):
        if freq == dataset.base:
            continue
        col = dataset.values[:, j]
        rows = np.flatnonzero(np.isfinite(col))
        panel[:, j] = np.nan
        if rows.size == 0:
            logger.warning("series %s has no observations; left unconstrained",
                           dataset.names[j])
            continue
        if dataset.base == "monthly":
            for t in rows:
                mq[(int(t) + 1, j)] = float(col[t])
        else:
            gaps = np.diff(rows)
            for i, t in enumerate(rows):
                if i > 0:
                    n_w = int(gaps[i - 1])
                elif gaps.size:
                    # first release: assume the schedule's next gap
                    n_w = int(gaps[0])
                else:
                    n_w = max(1, (int(t) + 2) // 2)
                weekly[(int(t) + 1, j)] = (float(col[t]), n_w)
    return panel, mq, weekly
