"""Reference conformal baselines: split CP and exponentially decayed CP."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .conformal import OnlineConformalRegressor, PredictionInterval, _StepCDF
from .exceptions import ConfigError, DataError

NEXCP_RHO_GRID = (0.999, 0.99, 0.95, 0.9)


@dataclass(frozen=True)
class NexcpConfig:
    rho: float = 0.99

    def validate(self):
        if not 0 < self.rho <= 1:
            raise ConfigError(f"rho must lie in (0, 1], got {self.rho!r}")
        return self


def _check_alpha(alpha):
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha!r}")


def scp_ranks(n, alpha):
    """1-based order-statistic ranks ``(k_lo, k_hi)`` of the split-CP interval."""
    # the 1e-9 nudges absorb products like 10 * 0.9 landing a hair off an integer
    k_lo = math.floor((n + 1) * alpha / 2 + 1e-9)
    k_hi = math.ceil((n + 1) * (1 - alpha / 2) - 1e-9)
    return max(k_lo, 1), min(k_hi, n)


def scp_interval(residuals, center, alpha) -> PredictionInterval:
    """Split conformal interval from signed residual order statistics.

    Uses ranks ``floor((n+1) alpha/2)`` and ``ceil((n+1)(1 - alpha/2))``,
    clamped to ``[1, n]``.
    """
    _check_alpha(alpha)
    r = np.sort(np.asarray(residuals, dtype=float).reshape(-1))
    if r.shape[0] == 0:
        raise DataError("empty calibration set")
    k_lo, k_hi = scp_ranks(r.shape[0], alpha)
    return PredictionInterval(
        lower=center + r[k_lo - 1], upper=center + r[k_hi - 1],
        alpha=alpha, beta_star=alpha / 2, ess=float(r.shape[0]), center=center,
    )


def nexcp_weights(calib_times, query_time, rho):
    """Normalized weights ``rho ** (query_time - time_i)``."""
    NexcpConfig(rho).validate()
    times = np.asarray(calib_times, dtype=np.int64).reshape(-1)
    if times.size == 0:
        raise DataError("empty calibration set")
    if times.max() >= query_time:
        raise DataError("calibration point not in the past")
    lags = (query_time - times).astype(float)
    # shift by the smallest lag so the largest factor is exactly 1
    raw = rho ** (lags - lags.min())
    return raw / raw.sum()


def nexcp_interval(residuals, calib_times, query_time, center, alpha, cfg=NexcpConfig()) -> PredictionInterval:
    """Weighted-quantile interval with exponentially decaying weights."""
    _check_alpha(alpha)
    r = np.asarray(residuals, dtype=float).reshape(-1)
    if r.shape[0] == 0:
        raise DataError("empty calibration set")
    w = nexcp_weights(calib_times, query_time, cfg.rho)
    if w.shape != r.shape:
        raise DataError(f"{r.shape[0]} residuals but {w.shape[0]} calibration times")
    lo, hi = _StepCDF(r, w).quantile(np.array([alpha / 2, 1 - alpha / 2]))
    return PredictionInterval(
        lower=center + float(lo), upper=center + float(hi), alpha=alpha,
        beta_star=alpha / 2, ess=float(1.0 / np.sum(w * w)), center=center,
    )


class SplitConformal(OnlineConformalRegressor):
    """Split conformal prediction on signed residuals.

    Parameters
    ----------
    alpha : float, default=0.1
    horizon : int, default=1
    window : int or None, default=None
        FIFO capacity; None keeps every calibration residual.
    online : bool, default=True
        Add each observed test residual to the calibration set.
    """

    def __init__(self, alpha=0.1, horizon=1, window=None, online=True):
        self.alpha = alpha
        self.horizon = horizon
        self.window = window
        self.online = online

    def _interval(self, state, origin, center, store):
        return scp_interval(store.residuals, center, self.alpha)


class NexCP(OnlineConformalRegressor):
    """Conformal intervals with exponentially time-decayed residual weights.

    Parameters
    ----------
    alpha : float, default=0.1
    horizon : int, default=1
    rho : float, default=0.99
        Decay base; each step of age multiplies a residual's weight by ``rho``.
    window : int or None, default=None
    online : bool, default=True
    """

    def __init__(self, alpha=0.1, horizon=1, rho=0.99, window=None, online=True):
        self.alpha = alpha
        self.horizon = horizon
        self.rho = rho
        self.window = window
        self.online = online

    def _after_fit(self):
        self.config_ = NexcpConfig(self.rho).validate()

    def _interval(self, state, origin, center, store):
        return nexcp_interval(store.residuals, store.times, origin, center, self.alpha, self.config_)
