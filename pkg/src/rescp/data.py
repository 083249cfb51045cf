"""CSV ingestion, chronological splits and synthetic series."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from ._rng import make_rng
from .exceptions import ConfigError, DataError
from .forecasting import ForecastSet

logger = logging.getLogger(__name__)

MISSING = {"", "na", "nan", "null", "none"}


@dataclass(frozen=True)
class SeriesBundle:
    """A target series with optional exogenous features.

    Attributes
    ----------
    times : ndarray of int
    target : ndarray of float
    exogenous : ndarray of shape (T, D_u) or None
    exogenous_names : tuple of str
    name : str
    """

    times: np.ndarray
    target: np.ndarray
    exogenous: Optional[np.ndarray] = None
    exogenous_names: Tuple[str, ...] = ()
    name: str = "series"

    def __post_init__(self):
        target = np.asarray(self.target, dtype=float).reshape(-1)
        times = np.asarray(self.times, dtype=np.int64).reshape(-1)
        if times.shape != target.shape:
            raise DataError(f"{times.shape[0]} times but {target.shape[0]} targets")
        if not np.all(np.isfinite(target)):
            raise DataError("target contains non-finite values")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "target", target)
        if self.exogenous is not None:
            ex = np.asarray(self.exogenous, dtype=float)
            if ex.ndim == 1:
                ex = ex[:, None]
            if ex.shape[0] != target.shape[0]:
                raise DataError(f"exogenous has {ex.shape[0]} rows, target has {target.shape[0]}")
            if not np.all(np.isfinite(ex)):
                raise DataError("exogenous features contain non-finite values")
            object.__setattr__(self, "exogenous", ex)

    def __len__(self):
        return self.target.shape[0]


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.4
    cal_frac: float = 0.4
    test_frac: float = 0.2

    def validate(self):
        fracs = (self.train_frac, self.cal_frac, self.test_frac)
        if any(f < 0 for f in fracs) or abs(sum(fracs) - 1) > 1e-9:
            raise ConfigError(f"split fractions must be nonnegative and sum to 1, got {fracs}")
        return self


def _parse_cell(text, row, column):
    s = text.strip()
    if s.lower() in MISSING:
        return math.nan
    try:
        return float(s)
    except ValueError:
        raise DataError(f"unparseable value {text!r} at row {row}, column {column!r}") from None


def load_csv(path, target_column, feature_columns: Optional[Sequence[str]] = None,
             prediction_column: Optional[str] = None, time_column="time"):
    """Read a comma-separated UTF-8 file with a header row.

    Rows with a missing target or feature are dropped (the count is logged).
    Returns ``(bundle, forecasts)``; ``forecasts`` is None without a
    ``prediction_column`` and otherwise covers the rows whose prediction is
    present, with residuals recomputed as ``target - prediction``. Row
    numbers in error messages count the header as row 1.
    """
    feature_columns = list(feature_columns or [])
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        wanted = [target_column, *feature_columns]
        if prediction_column:
            wanted.append(prediction_column)
        missing = [c for c in wanted if c not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {missing}; available columns: {header}")
        col = {name: header.index(name) for name in header}
        has_time = time_column in col

        times, target, feats, preds = [], [], [], []
        dropped = 0
        for i, row in enumerate(reader):
            rownum = i + 2
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {rownum} has {len(row)} fields, header has {len(header)}")
            y = _parse_cell(row[col[target_column]], rownum, target_column)
            f = [_parse_cell(row[col[c]], rownum, c) for c in feature_columns]
            if math.isnan(y) or any(math.isnan(v) for v in f):
                dropped += 1
                continue
            if has_time:
                t = _parse_cell(row[col[time_column]], rownum, time_column)
                if math.isnan(t) or t != int(t):
                    raise DataError(f"{path}: non-integer time at row {rownum}")
                times.append(int(t))
            else:
                times.append(i)
            target.append(y)
            feats.append(f)
            if prediction_column:
                preds.append(_parse_cell(row[col[prediction_column]], rownum, prediction_column))

    if dropped:
        logger.warning("%s: dropped %d row(s) with missing values", path, dropped)
    if not target:
        raise DataError(f"{path}: no usable rows")
    times = np.array(times, dtype=np.int64)
    if np.any(np.diff(times) <= 0):
        raise DataError(f"{path}: time column must be strictly increasing")
    bundle = SeriesBundle(
        times=times,
        target=np.array(target),
        exogenous=np.array(feats) if feature_columns else None,
        exogenous_names=tuple(feature_columns),
        name=str(path),
    )
    forecasts = None
    if prediction_column:
        p = np.array(preds)
        ok = np.isfinite(p)
        forecasts = ForecastSet(np.flatnonzero(ok), bundle.target[ok], p[ok])
    return bundle, forecasts


def write_csv(path, bundle: SeriesBundle, predictions=None, target_column="y", prediction_column="y_hat"):
    """Write ``bundle`` (and optionally a prediction column) in the format :func:`load_csv` reads."""
    header = ["time", target_column, *bundle.exogenous_names]
    if predictions is not None:
        predictions = np.asarray(predictions, dtype=float).reshape(-1)
        if predictions.shape[0] != len(bundle):
            raise DataError(f"{predictions.shape[0]} predictions for {len(bundle)} rows")
        header.append(prediction_column)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(len(bundle)):
            row = [int(bundle.times[i]), repr(float(bundle.target[i]))]
            if bundle.exogenous is not None:
                row += [repr(float(v)) for v in bundle.exogenous[i]]
            if predictions is not None:
                row.append("" if not np.isfinite(predictions[i]) else repr(float(predictions[i])))
            w.writerow(row)


def split_series(bundle, spec: SplitSpec = SplitSpec()):
    """Chronological train/calibration/test index ranges.

    Boundaries sit at ``floor(T * train_frac)`` and
    ``floor(T * (train_frac + cal_frac))``; the remainder goes to test.
    ``bundle`` may also be a plain length.
    """
    spec.validate()
    T = bundle if isinstance(bundle, (int, np.integer)) else len(bundle)
    if T < 5:
        raise DataError(f"need at least 5 observations to split, got {T}")
    # 1e-9 keeps e.g. 10000 * 0.9 from flooring to 8999
    a = int(math.floor(T * spec.train_frac + 1e-9))
    b = int(math.floor(T * (spec.train_frac + spec.cal_frac) + 1e-9))
    parts = (range(0, a), range(a, b), range(b, T))
    for name, r in zip(("train", "calibration", "test"), parts):
        if len(r) == 0:
            raise DataError(f"empty {name} split for T={T} and {spec}")
    return parts


SYNTHETIC_DEFAULTS: Dict[str, dict] = {
    "ar1": {"a": 0.8, "sigma": 1.0, "y0": 0.0},
    "regime_switch_hetero": {"a": 0.8, "sigma_lo": 0.1, "sigma_hi": 1.0, "period": 200, "y0": 0.0},
}


def gen_synthetic(kind, params=None, length=1000, seed=0) -> SeriesBundle:
    """Simulate an AR(1) series ``y_t = a y_{t-1} + s_t eps_t`` from ``y_0``.

    ``kind="ar1"`` uses a constant noise scale ``sigma``.
    ``kind="regime_switch_hetero"`` alternates the scale between
    ``sigma_lo`` and ``sigma_hi`` every ``period`` steps, starting low, and
    exports the regime (0 low, 1 high) as exogenous column ``"regime"``.
    """
    if kind not in SYNTHETIC_DEFAULTS:
        raise ConfigError(f"unknown generator {kind!r}; expected one of {sorted(SYNTHETIC_DEFAULTS)}")
    p = {**SYNTHETIC_DEFAULTS[kind], **(params or {})}
    unknown = set(p) - set(SYNTHETIC_DEFAULTS[kind])
    if unknown:
        raise ConfigError(f"unknown parameter(s) for {kind}: {sorted(unknown)}")
    if int(length) != length or length < 1:
        raise ConfigError(f"length must be a positive integer, got {length!r}")
    a = float(p["a"])
    if abs(a) >= 1:
        raise ConfigError("non-stationary coefficient")
    length = int(length)
    t = np.arange(length)
    if kind == "ar1":
        scale = np.full(length, float(p["sigma"]))
        regime = None
    else:
        period = int(p["period"])
        if period < 1:
            raise ConfigError(f"period must be a positive integer, got {p['period']!r}")
        regime = (t // period) % 2
        scale = np.where(regime == 0, float(p["sigma_lo"]), float(p["sigma_hi"]))
    if np.any(scale < 0):
        raise ConfigError("noise scales must be nonnegative")

    eps = make_rng(seed, 0xA1).standard_normal(length)
    y = np.empty(length)
    prev = float(p["y0"])
    for i in range(length):
        prev = a * prev + scale[i] * eps[i]
        y[i] = prev
    return SeriesBundle(
        times=t + 1,
        target=y,
        exogenous=None if regime is None else regime[:, None].astype(float),
        exogenous_names=() if regime is None else ("regime",),
        name=kind,
    )
