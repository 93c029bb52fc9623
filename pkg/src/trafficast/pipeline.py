"""CSV ingestion, sliding-window restructuring, scaling and chronological splits.

CSV format: header row `timestamp,value`, timestamps ISO-8601 or integer epoch
seconds, uniformly spaced. A missing slot (gap larger than one interval) is an
ingestion error, not something to impute.
"""

import csv
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import DataError, ScaleError, ShapeError
from .validation import as_float_vector

DEFAULT_INTERVAL_S = 300  # five-minute telemetry


@dataclass
class TimeSeries:
    """Uniformly sampled traffic volumes."""

    name: str
    start: datetime
    interval_s: float
    values: np.ndarray

    def __post_init__(self):
        self.values = as_float_vector(self.values, "values")
        if self.values.size == 0:
            raise DataError("time series must be non-empty")
        if self.interval_s <= 0:
            raise DataError(f"interval must be positive, got {self.interval_s}")

    def __len__(self):
        return self.values.shape[0]

    def timestamp(self, i):
        return datetime.fromtimestamp(
            self.start.replace(tzinfo=timezone.utc).timestamp() + i * self.interval_s,
            tz=timezone.utc).replace(tzinfo=None)


@dataclass
class WindowedDataset:
    """Supervised pairs: row i of X is values[i..i+w), y[i] = values[i+w]."""

    X: np.ndarray
    y: np.ndarray
    w: int

    def __post_init__(self):
        if self.X.ndim != 2 or self.X.shape[1] != self.w:
            raise ShapeError(f"X must be (n, {self.w}), got {self.X.shape}")
        if self.y.shape != (self.X.shape[0],):
            raise ShapeError(f"y must be ({self.X.shape[0]},), got {self.y.shape}")

    @property
    def n_rows(self):
        return self.X.shape[0]


@dataclass
class ColumnSpec:
    timestamp: str = "timestamp"
    value: str = "value"


def _parse_timestamp(raw, path, line_no):
    raw = raw.strip()
    try:
        return datetime.fromtimestamp(int(raw), tz=timezone.utc).replace(tzinfo=None)
    except ValueError:
        pass
    try:
        ts = datetime.fromisoformat(raw)
    except ValueError as exc:
        raise DataError(f"{path}:{line_no}: unparsable timestamp {raw!r}") from exc
    if ts.tzinfo is not None:
        ts = ts.astimezone(timezone.utc).replace(tzinfo=None)
    return ts


def load_csv(path, column_spec=None):
    """Read an ordered, uniformly spaced series; gaps and disorder are errors."""
    column_spec = column_spec or ColumnSpec()
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in (column_spec.timestamp, column_spec.value):
            if col not in header:
                raise DataError(f"{path}: missing column {col!r} (header: {header})")
        stamps, values = [], []
        for line_no, row in enumerate(reader, start=2):
            stamps.append(_parse_timestamp(row[column_spec.timestamp], path, line_no))
            raw_value = row[column_spec.value]
            try:
                values.append(float(raw_value))
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}:{line_no}: unparsable value {raw_value!r}") from exc
    if not values:
        raise DataError(f"{path}: no data rows")
    if len(values) == 1:
        return TimeSeries(path.stem, stamps[0], DEFAULT_INTERVAL_S, np.array(values))
    interval = (stamps[1] - stamps[0]).total_seconds()
    if interval <= 0:
        raise DataError(f"{path}: non-monotonic timestamps at {stamps[1].isoformat()}")
    for i in range(1, len(stamps)):
        delta = (stamps[i] - stamps[i - 1]).total_seconds()
        if delta <= 0:
            raise DataError(f"{path}: non-monotonic timestamps at {stamps[i].isoformat()}")
        if delta != interval:
            raise DataError(
                f"{path}: gap at {stamps[i].isoformat()} "
                f"(step of {delta:.0f}s, expected {interval:.0f}s)")
    return TimeSeries(path.stem, stamps[0], interval, np.array(values))


def save_csv(series, path):
    """Write `timestamp,value` rows; floats round-trip exactly via repr."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "value"])
        for i, v in enumerate(series.values):
            writer.writerow([series.timestamp(i).isoformat(), repr(float(v))])


def make_windows(series, w):
    """Slide a length-w window over the series: n - w supervised rows."""
    values = series.values if isinstance(series, TimeSeries) else as_float_vector(series)
    n = values.shape[0]
    if w < 1:
        raise DataError(f"window must be >= 1, got {w}")
    if n <= w:
        raise DataError(f"series too short: {n} values cannot fill window {w} plus a target")
    n_rows = n - w
    X = np.empty((n_rows, w))
    for i in range(n_rows):
        X[i, :] = values[i:i + w]
    return WindowedDataset(X=X, y=values[w:].copy(), w=w)


def chronological_split(ds, train_frac):
    """First floor(train_frac * n) rows train, remainder test; order preserved."""
    if not 0.0 < train_frac < 1.0:
        raise DataError(f"train_frac must be in (0, 1), got {train_frac}")
    n = ds.n_rows
    k = int(np.floor(train_frac * n))
    if k == 0 or k == n:
        raise DataError(f"split of {n} rows at {train_frac} leaves an empty side")
    train = WindowedDataset(X=ds.X[:k].copy(), y=ds.y[:k].copy(), w=ds.w)
    test = WindowedDataset(X=ds.X[k:].copy(), y=ds.y[k:].copy(), w=ds.w)
    return train, test


class MinMaxScaler(TransformerMixin, BaseEstimator):
    """Linear map sending the fitted minimum to 0 and maximum to 1.

    Unlike the scikit-learn scaler of the same name, a constant input range is
    rejected rather than silently collapsed.
    """

    def fit(self, values, y=None):
        values = np.asarray(values, dtype=np.float64)
        if values.size == 0:
            raise ScaleError("cannot fit scaler on empty data")
        lo, hi = float(values.min()), float(values.max())
        if hi <= lo:
            raise ScaleError(f"degenerate scale: min == max == {lo}")
        self.lo_, self.hi_ = lo, hi
        return self

    @classmethod
    def from_bounds(cls, lo, hi):
        if hi <= lo:
            raise ScaleError(f"degenerate scale: lo={lo}, hi={hi}")
        scaler = cls()
        scaler.lo_, scaler.hi_ = float(lo), float(hi)
        return scaler

    def _check_fitted(self):
        if not hasattr(self, "lo_"):
            raise ScaleError("scaler is not fitted")

    def transform(self, X):
        self._check_fitted()
        return (np.asarray(X, dtype=np.float64) - self.lo_) / (self.hi_ - self.lo_)

    def inverse_transform(self, X):
        self._check_fitted()
        return np.asarray(X, dtype=np.float64) * (self.hi_ - self.lo_) + self.lo_


def fit_scaler(train_values):
    """Fit a MinMaxScaler on the training portion only."""
    return MinMaxScaler().fit(train_values)


def train_value_slice(series, n_train_rows, w):
    """Raw values covered by the first n_train_rows windows (scaler-fit range)."""
    values = series.values if isinstance(series, TimeSeries) else as_float_vector(series)
    return values[:n_train_rows + w]


def save_windows_csv(ds, path):
    """Export a windowed dataset as w feature columns plus a target column."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{j + 1}" for j in range(ds.w)] + ["y"])
        for i in range(ds.n_rows):
            writer.writerow([repr(float(v)) for v in ds.X[i]] + [repr(float(ds.y[i]))])
