"""Point forecasts and residuals feeding the conformal layer.

The built-in forecaster is a direct H-step autoregression fitted by ridge
least squares. Any other model can be used by loading its predictions from a
CSV file (see :mod:`rescp.data`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigError, DataError, NumericError


@dataclass(frozen=True)
class ForecastSet:
    """Aligned targets, forecasts and residuals ``y_true - y_hat``.

    Residuals are always recomputed from ``y_true`` and ``y_hat``.
    """

    times: np.ndarray
    y_true: np.ndarray
    y_hat: np.ndarray
    horizon: int = 1

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.int64).reshape(-1)
        y = np.asarray(self.y_true, dtype=float).reshape(-1)
        yh = np.asarray(self.y_hat, dtype=float).reshape(-1)
        if not (times.shape == y.shape == yh.shape):
            raise DataError(
                f"misaligned forecast set: {times.shape[0]} times, "
                f"{y.shape[0]} targets, {yh.shape[0]} predictions"
            )
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "y_true", y)
        object.__setattr__(self, "y_hat", yh)

    @property
    def residuals(self):
        return self.y_true - self.y_hat

    def __len__(self):
        return self.times.shape[0]

    def slice(self, start, stop):
        """Entries whose ``times`` fall in ``[start, stop)``."""
        m = (self.times >= start) & (self.times < stop)
        return ForecastSet(self.times[m], self.y_true[m], self.y_hat[m], self.horizon)


@dataclass(frozen=True)
class ARModel:
    """Direct autoregression ``y[t] ~ coef . y[t-H-W+1 .. t-H] + intercept``.

    ``coef`` is ordered oldest lag first.
    """

    coef: np.ndarray
    intercept: float
    window: int
    horizon: int

    @property
    def min_index(self):
        """Smallest target index with a full input window."""
        return self.window + self.horizon - 1


def _lag_matrix(y, window, horizon, start, stop):
    """Rows of lagged inputs for targets ``start..stop-1``."""
    idx = np.arange(start, stop)[:, None] - horizon - window + 1 + np.arange(window)[None, :]
    return y[idx]


def fit_ar_forecaster(series, window=16, horizon=1, ridge=1e-6) -> ARModel:
    """Ridge least-squares fit of ``y[t]`` on the ``window`` values ending at ``t - horizon``.

    The intercept is not penalized, so shifting the series by a constant
    shifts every prediction by the same constant.
    """
    y = np.asarray(series, dtype=float).reshape(-1)
    if int(window) != window or window < 1:
        raise ConfigError(f"window must be a positive integer, got {window!r}")
    if int(horizon) != horizon or horizon < 1:
        raise ConfigError(f"horizon must be a positive integer, got {horizon!r}")
    if ridge < 0:
        raise ConfigError(f"ridge must be nonnegative, got {ridge!r}")
    if y.shape[0] <= window + horizon:
        raise DataError(
            f"series of length {y.shape[0]} too short for window={window}, horizon={horizon}"
        )
    if not np.all(np.isfinite(y)):
        raise DataError("series contains non-finite values")

    X = _lag_matrix(y, window, horizon, window + horizon - 1, y.shape[0])
    target = y[window + horizon - 1:]
    x_mean, y_mean = X.mean(axis=0), target.mean()
    Xc, yc = X - x_mean, target - y_mean
    gram = Xc.T @ Xc + ridge * np.eye(window)
    scale = max(float(np.trace(gram)) / window, np.finfo(float).tiny)
    if ridge == 0 and np.linalg.cond(gram / scale) > 1e12:
        raise NumericError("singular normal equations; use ridge > 0")
    try:
        coef = np.linalg.solve(gram, Xc.T @ yc)
    except np.linalg.LinAlgError as exc:
        raise NumericError("singular normal equations; use ridge > 0") from exc
    return ARModel(coef=coef, intercept=float(y_mean - x_mean @ coef), window=int(window), horizon=int(horizon))


def predict_and_residuals(model: ARModel, series, split_range) -> ForecastSet:
    """H-step forecasts and residuals for every target index in ``split_range``."""
    y = np.asarray(series, dtype=float).reshape(-1)
    start, stop = split_range
    if start < model.min_index:
        raise DataError(
            f"insufficient context: forecasts need target index >= {model.min_index}, got {start}"
        )
    if stop > y.shape[0] or start > stop:
        raise DataError(f"range [{start}, {stop}) outside series of length {y.shape[0]}")
    y_hat = _lag_matrix(y, model.window, model.horizon, start, stop) @ model.coef + model.intercept
    return ForecastSet(np.arange(start, stop), y[start:stop], y_hat, model.horizon)


class ARForecaster(RegressorMixin, BaseEstimator):
    """Estimator wrapper around :func:`fit_ar_forecaster`.

    ``fit`` takes a 1-D training series; ``predict`` returns forecasts for
    target indices ``[start, stop)`` of a (possibly longer) series.
    """

    def __init__(self, window=16, horizon=1, ridge=1e-6):
        self.window = window
        self.horizon = horizon
        self.ridge = ridge

    def fit(self, y, _unused=None):
        self.model_ = fit_ar_forecaster(y, self.window, self.horizon, self.ridge)
        self.coef_ = self.model_.coef
        self.intercept_ = self.model_.intercept
        return self

    def forecast_set(self, series, start=None, stop=None):
        check_is_fitted(self, "model_")
        y = np.asarray(series, dtype=float).reshape(-1)
        start = self.model_.min_index if start is None else start
        stop = y.shape[0] if stop is None else stop
        return predict_and_residuals(self.model_, y, (start, stop))

    def predict(self, series, start=None, stop=None):
        return self.forecast_set(series, start, stop).y_hat
