"""Reservoir conformal prediction intervals.

Residuals stored in a :class:`CalibrationStore` are reweighted by how close
their reservoir state is to the current (query) state. Interval endpoints are
quantiles of the resulting weighted step CDF, optionally shifted within the
miscoverage budget to minimize width.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._rng import make_rng
from .exceptions import ConfigError, DataError
from .reservoir import ReservoirConfig, build_reservoir, encode
from .weighting import (
    SIMILARITIES,
    WeightVector,
    _parse_schedule,
    apply_temporal_decay,
    similarity_scores,
    softmax_weights,
)

# Cumulative weights within this distance of a level count as reaching it.
# Large enough to absorb the <= 5e-10 drift of near-uniform softmax weights
# (temperature 1e9, cosine scores) so that limit matches plain uniform weights.
CDF_TOL = 1e-9


@dataclass(frozen=True)
class PredictionInterval:
    lower: float
    upper: float
    alpha: float
    beta_star: float
    ess: float
    center: float

    @property
    def width(self):
        return self.upper - self.lower

    def contains(self, y):
        return self.lower <= y <= self.upper


class CalibrationStore:
    """Time-ordered ``(time, state, residual)`` entries with optional FIFO capacity.

    Each entry pairs the reservoir state at ``time`` with the residual
    observed ``horizon`` steps later. ``capacity=None`` keeps everything.
    Entries live in a preallocated buffer; the accessors return read-only
    views of the live window.
    """

    def __init__(self, horizon=1, capacity=None, dim=None):
        if int(horizon) != horizon or horizon < 1:
            raise ConfigError(f"horizon must be a positive integer, got {horizon!r}")
        if capacity is not None and (int(capacity) != capacity or capacity < 1):
            raise ConfigError(f"capacity must be a positive integer or None, got {capacity!r}")
        self.horizon = int(horizon)
        self.capacity = None if capacity is None else int(capacity)
        self.dim = dim
        self._start = 0
        self._end = 0
        self._alloc(64 if capacity is None else 2 * self.capacity)

    def _alloc(self, n):
        self._times = np.empty(n, dtype=np.int64)
        self._residuals = np.empty(n)
        self._norms = np.empty(n)
        self._states = None if self.dim is None else np.empty((n, self.dim))

    def __len__(self):
        return self._end - self._start

    def __repr__(self):
        return (
            f"CalibrationStore(n={len(self)}, horizon={self.horizon}, "
            f"capacity={self.capacity}, dim={self.dim})"
        )

    def _view(self, arr):
        v = arr[self._start:self._end]
        v.flags.writeable = False
        return v

    @property
    def times(self):
        return self._view(self._times)

    @property
    def residuals(self):
        return self._view(self._residuals)

    @property
    def norms(self):
        return self._view(self._norms)

    @property
    def states(self):
        if self._states is None:
            return np.empty((0, 0))
        return self._view(self._states)

    @property
    def last_time(self):
        return int(self._times[self._end - 1]) if len(self) else None

    def push(self, time, state, residual):
        """Append one entry, evicting the oldest when over capacity."""
        time = int(time)
        if len(self) and time <= self.last_time:
            raise DataError(
                f"calibration times must be strictly increasing: got {time} "
                f"after {self.last_time}"
            )
        state = np.asarray(state, dtype=float).reshape(-1)
        if self.dim is None:
            self.dim = state.shape[0]
            self._states = np.empty((self._times.shape[0], self.dim))
        elif state.shape[0] != self.dim:
            raise DataError(f"state dimension mismatch: expected {self.dim}, got {state.shape[0]}")
        if not math.isfinite(residual):
            raise DataError(f"non-finite residual at time {time}")

        if self._end == self._times.shape[0]:
            self._make_room()
        i = self._end
        self._times[i] = time
        self._states[i] = state
        self._residuals[i] = residual
        self._norms[i] = np.linalg.norm(state)
        self._end += 1
        if self.capacity is not None and len(self) > self.capacity:
            self._start += 1
        return self

    def _make_room(self):
        n = len(self)
        if self.capacity is None and n * 2 > self._times.shape[0]:
            size = 2 * self._times.shape[0]
        else:
            size = self._times.shape[0]
        sl = slice(self._start, self._end)
        times, res, norms, states = (
            self._times[sl].copy(), self._residuals[sl].copy(),
            self._norms[sl].copy(), self._states[sl].copy(),
        )
        if size != self._times.shape[0]:
            self._alloc(size)
        self._times[:n], self._residuals[:n], self._norms[:n] = times, res, norms
        self._states[:n] = states
        self._start, self._end = 0, n

    def extend(self, times, states, residuals):
        for t, h, r in zip(times, states, residuals):
            self.push(t, h, r)
        return self


def push_calibration(store: CalibrationStore, time, state, residual) -> CalibrationStore:
    """Append ``(time, state, residual)`` to ``store`` (FIFO eviction) and return it."""
    return store.push(time, state, residual)


class _StepCDF:
    """Sorted atoms and cumulative weights of a weighted empirical distribution."""

    def __init__(self, residuals, weights):
        r = np.asarray(residuals, dtype=float).reshape(-1)
        w = weights.weights if isinstance(weights, WeightVector) else np.asarray(weights, dtype=float)
        w = w.reshape(-1)
        if r.shape[0] == 0:
            raise DataError("empty calibration set")
        if r.shape != w.shape:
            raise DataError(f"{r.shape[0]} residuals but {w.shape[0]} weights")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise DataError("weights must be finite and nonnegative")
        order = np.argsort(r, kind="stable")
        self.values = r[order]
        cum = np.cumsum(w[order])
        total = cum[-1]
        if not total > 0:
            raise DataError("unnormalized weights")
        if abs(total - 1.0) > 1e-9:
            cum = cum / total
        self.cum = cum

    def quantile(self, beta):
        """Smallest atom whose cumulative weight reaches ``beta`` (vectorized)."""
        b = np.asarray(beta, dtype=float)
        if np.any((b < 0) | (b > 1)):
            raise ConfigError(f"quantile level must lie in [0, 1], got {beta!r}")
        idx = np.searchsorted(self.cum, b - CDF_TOL, side="left")
        return self.values[np.minimum(idx, self.values.shape[0] - 1)]


def weighted_quantile(residuals, weights, beta) -> float:
    """``inf{r : F(r) >= beta}`` for the weighted step CDF of ``residuals``.

    ``beta = 0`` returns the smallest residual rather than minus infinity.
    """
    return float(_StepCDF(residuals, weights).quantile(beta))


def _rank(beta, n):
    # 1-based order-statistic rank ceil(beta * n); rounding guards against 0.95*1e5 = 95000.00000000001
    return np.maximum(1, np.ceil(np.round(np.asarray(beta, dtype=float) * n, 9)).astype(np.int64))


def _mc_draw(cdf: _StepCDF, n_samples, seed, stream=0):
    if int(n_samples) != n_samples or n_samples < 1:
        raise ConfigError(f"n_samples must be a positive integer, got {n_samples!r}")
    u = make_rng(seed, 0x3C, stream).random(int(n_samples))
    idx = np.searchsorted(cdf.cum, u, side="right")
    return np.sort(cdf.values[np.minimum(idx, cdf.values.shape[0] - 1)])


def mc_quantile(residuals, weights, beta, n_samples=10_000, seed=0) -> float:
    """Empirical ``beta``-quantile of ``n_samples`` residuals resampled by weight.

    Returns the order statistic of rank ``ceil(beta * n_samples)`` (rank 1 for
    ``beta = 0``); deterministic in ``seed``.
    """
    if not 0 <= beta <= 1:
        raise ConfigError(f"quantile level must lie in [0, 1], got {beta!r}")
    sample = _mc_draw(_StepCDF(residuals, weights), n_samples, seed)
    return float(sample[_rank(beta, sample.shape[0]) - 1])


def beta_grid(alpha, grid_step):
    """``{0, step, 2*step, ...}`` up to and always including ``alpha``."""
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha!r}")
    if not 0 < grid_step <= alpha + CDF_TOL:
        raise ConfigError(f"grid_step must lie in (0, alpha], got {grid_step!r}")
    k = int(math.floor(alpha / grid_step + 1e-9))
    grid = [i * grid_step for i in range(k + 1)]
    if abs(grid[-1] - alpha) > CDF_TOL:
        grid.append(alpha)
    else:
        grid[-1] = alpha
    return np.array(grid)


def _narrowest(quantile, alpha, grid):
    lo = quantile(grid)
    hi = quantile(np.minimum(1.0 - alpha + grid, 1.0))
    i = int(np.argmin(hi - lo))
    return float(grid[i]), float(lo[i]), float(hi[i])


def beta_star(residuals, weights, alpha, grid_step=None):
    """Width-minimizing lower tail mass on a grid over ``[0, alpha]``.

    Returns ``(beta_star, lower_q, upper_q)``; ties go to the smallest beta.
    ``grid_step`` defaults to ``alpha / 20``.
    """
    grid = beta_grid(alpha, alpha / 20 if grid_step is None else grid_step)
    return _narrowest(_StepCDF(residuals, weights).quantile, alpha, grid)


@dataclass(frozen=True)
class RescpParams:
    """Interval-construction settings for :func:`rescp_interval`.

    ``quantile_mode`` is ``"exact"`` or ``"mc"``; the Monte Carlo mode draws
    ``n_samples`` residuals with seed ``mc_seed``. ``decay`` accepts the
    schedules of :func:`rescp.weighting.apply_temporal_decay`.
    """

    alpha: float = 0.1
    temperature: float = 0.1
    similarity: str = "cosine"
    decay: Union[str, tuple] = "none"
    beta_search: bool = False
    grid_step: Optional[float] = None
    quantile_mode: str = "exact"
    n_samples: int = 10_000
    mc_seed: int = 0

    def validate(self):
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature!r}")
        if self.similarity not in SIMILARITIES:
            raise ConfigError(f"unknown similarity {self.similarity!r}; expected one of {SIMILARITIES}")
        _parse_schedule(self.decay)
        if self.quantile_mode not in ("exact", "mc"):
            raise ConfigError(f"quantile_mode must be 'exact' or 'mc', got {self.quantile_mode!r}")
        if self.grid_step is not None:
            beta_grid(self.alpha, self.grid_step)
        return self


def rescp_weights(query_state, query_time, store: CalibrationStore, params: RescpParams) -> WeightVector:
    """Similarity softmax over ``store`` followed by temporal decay."""
    if len(store) == 0:
        raise DataError("no calibration data")
    scores = similarity_scores(query_state, store.states, params.similarity, calib_norms=store.norms)
    w = softmax_weights(scores, params.temperature)
    return apply_temporal_decay(w, store.times, query_time, params.decay)


def interval_from_weights(residuals, weights: WeightVector, center, params: RescpParams,
                          mc_stream=0) -> PredictionInterval:
    """Assemble an interval around ``center`` from weighted residuals.

    ``mc_stream`` selects an independent Monte Carlo stream (one per query)
    under ``params.mc_seed``.
    """
    alpha = params.alpha
    cdf = _StepCDF(residuals, weights)
    if params.quantile_mode == "mc":
        sample = _mc_draw(cdf, params.n_samples, params.mc_seed, mc_stream)
        quantile = lambda b: sample[_rank(b, sample.shape[0]) - 1]  # noqa: E731
    else:
        quantile = cdf.quantile
    if params.beta_search:
        step = alpha / 20 if params.grid_step is None else params.grid_step
        beta, lo, hi = _narrowest(quantile, alpha, beta_grid(alpha, step))
    else:
        beta = alpha / 2
        lo, hi = (float(q) for q in quantile(np.array([alpha / 2, 1 - alpha / 2])))
    return PredictionInterval(
        lower=center + lo, upper=center + hi, alpha=alpha,
        beta_star=beta, ess=weights.ess, center=center,
    )


def rescp_interval(query_state, query_time, center, store: CalibrationStore,
                   params: Optional[RescpParams] = None, **overrides) -> PredictionInterval:
    """Prediction interval for the value forecast as ``center``.

    ``query_state`` is the reservoir state at the forecast origin
    ``query_time``; ``store`` must only hold entries observed by then.
    Keyword overrides replace fields of ``params``.
    """
    params = replace(params or RescpParams(), **overrides).validate()
    if len(store) == 0:
        raise DataError("no calibration data")
    w = rescp_weights(query_state, query_time, store, params)
    return interval_from_weights(store.residuals, w, float(center), params)


class OnlineConformalRegressor(BaseEstimator):
    """Shared streaming logic for conformal interval estimators.

    ``fit`` takes the calibration residual stream ``r_0..r_{n-1}`` (in time
    order). ``predict_interval`` then walks a test stream: the interval for
    test target ``p`` is built at forecast origin ``u = p - horizon`` from
    the fitted calibration pairs plus, with ``online=True``, every test pair
    whose residual time is at most ``u``. With ``online=False`` the store
    stays as fitted.

    Subclasses provide ``_encode`` (states for stream positions) and
    ``_interval(state, origin, center, store)``.
    """

    def _check_common(self):
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ConfigError(f"horizon must be a positive integer, got {self.horizon!r}")

    def _encode(self, inputs, h0=None):
        return np.zeros((inputs.shape[0], 1))

    def _fit_inputs(self, residuals, X, reference):
        pass

    def _inputs(self, residuals, X):
        return residuals[:, None]

    def _after_fit(self):
        pass

    def fit(self, residuals, X=None, reference=None):
        """Fit on the calibration residual stream.

        ``X`` holds optional exogenous features aligned with ``residuals``;
        ``reference`` optionally supplies earlier (training-split) residuals
        used for input standardization instead of the calibration stream.
        """
        self._check_common()
        r = _stream(residuals, "residuals")
        H = int(self.horizon)
        if r.shape[0] <= H:
            raise DataError(f"need more than horizon={H} calibration residuals, got {r.shape[0]}")
        X = _exog(X, r.shape[0])
        self._fit_inputs(r, X, reference)
        self.states_ = self._encode(self._inputs(r, X))
        self.residuals_ = r
        self.n_calibration_ = r.shape[0]
        store = CalibrationStore(horizon=H, capacity=self.window, dim=self.states_.shape[1])
        n_pairs = r.shape[0] - H
        store.extend(range(n_pairs), self.states_[:n_pairs], r[H:])
        self.store_ = store
        self._after_fit()
        return self

    def predict_interval(self, centers, residuals, X=None):
        """Intervals for consecutive test targets following the calibration stream.

        ``centers[i]`` is the point forecast of test target ``i`` and
        ``residuals[i]`` its realized residual. Residual ``i`` only affects
        intervals of later targets. Returns a list of
        :class:`PredictionInterval`.
        """
        check_is_fitted(self, "store_")
        c = _stream(centers, "centers")
        r = _stream(residuals, "residuals", allow_nan=True)
        if c.shape != r.shape:
            raise DataError(f"{c.shape[0]} centers but {r.shape[0]} residuals")
        X = _exog(X, r.shape[0])
        H = int(self.horizon)
        n_cal = self.n_calibration_
        n_test = r.shape[0]
        # Only residuals up to the last forecast origin are ever encoded.
        n_obs = max(0, n_test - H)
        if n_obs and not np.all(np.isfinite(r[:n_obs])):
            raise DataError("non-finite test residual")
        if n_obs:
            test_states = self._encode(self._inputs(r[:n_obs], None if X is None else X[:n_obs]),
                                       h0=self.states_[-1])
            states = np.vstack([self.states_, test_states])
        else:
            states = self.states_
        all_r = np.concatenate([self.residuals_, r])

        store = _clone_store(self.store_) if self.online else self.store_
        next_pair = n_cal - H
        out = []
        for i in range(n_test):
            u = n_cal + i - H
            if self.online:
                while next_pair + H <= u:
                    store.push(next_pair, states[next_pair], all_r[next_pair + H])
                    next_pair += 1
            out.append(self._interval(states[u], u, float(c[i]), store))
        return out

    def predict(self, centers, residuals, X=None):
        """``(n, 2)`` array of interval bounds; see :meth:`predict_interval`."""
        iv = self.predict_interval(centers, residuals, X)
        return np.array([[p.lower, p.upper] for p in iv]).reshape(-1, 2)


def _clone_store(store):
    new = CalibrationStore(horizon=store.horizon, capacity=store.capacity, dim=store.dim)
    return new.extend(store.times, store.states, store.residuals)


def _stream(x, name, allow_nan=False):
    a = np.asarray(x, dtype=float).reshape(-1)
    if not allow_nan and not np.all(np.isfinite(a)):
        raise DataError(f"{name} contain non-finite values")
    return a


def _exog(X, n):
    if X is None:
        return None
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != n:
        raise DataError(f"exogenous features have {X.shape[0]} rows, expected {n}")
    return X


class _ReservoirMixin:
    """Input standardization and reservoir encoding shared by ResCP and ResCQR."""

    def _reservoir_config(self):
        return ReservoirConfig(
            size=self.reservoir_size,
            spectral_radius=self.spectral_radius,
            leak_rate=self.leak_rate,
            input_scaling=self.input_scaling,
            connectivity=self.connectivity,
            seed=self.random_state,
        )

    def _fit_inputs(self, residuals, X, reference):
        self.use_exog_ = X is not None and getattr(self, "use_exogenous", False)
        ref = residuals if reference is None else _stream(reference, "reference")
        ref = ref[np.isfinite(ref)]
        if ref.size < 2:
            ref = residuals
        mean, scale = [ref.mean()], [ref.std()]
        if self.use_exog_:
            mean += list(X.mean(axis=0))
            scale += list(X.std(axis=0))
        self.input_mean_ = np.array(mean)
        scale = np.array(scale)
        self.input_scale_ = np.where(scale > 0, scale, 1.0)
        self.reservoir_ = build_reservoir(self._reservoir_config(), len(mean))

    def _inputs(self, residuals, X):
        cols = [residuals[:, None]]
        if self.use_exog_:
            if X is None:
                raise DataError("model was fitted with exogenous features; pass X")
            cols.append(X)
        return (np.hstack(cols) - self.input_mean_) / self.input_scale_

    def _encode(self, inputs, h0=None):
        return encode(self.reservoir_, inputs, h0).states


class ResCP(_ReservoirMixin, OnlineConformalRegressor):
    """Reservoir conformal prediction.

    The residual stream drives a random echo state network; each interval
    reweights stored residuals by the similarity of their states to the
    current state.

    Parameters
    ----------
    alpha : float, default=0.1
        Miscoverage level.
    horizon : int, default=1
        Forecast horizon in steps.
    temperature : float, default=0.1
        Softmax temperature on similarity scores.
    similarity : {"cosine", "dot"}, default="cosine"
    decay : str or tuple, default="linear"
        Temporal discount: ``"none"``, ``"linear"`` or ``("exponential", rho)``.
    window : int or None, default=None
        FIFO capacity of the calibration store; None keeps all entries.
    beta_search : bool, default=False
        Shift the lower tail mass within ``[0, alpha]`` to minimize width.
    grid_step : float or None, default=None
        Step of the beta grid; None means ``alpha / 20``.
    quantile_mode : {"exact", "mc"}, default="exact"
    n_samples : int, default=10000
        Monte Carlo sample size when ``quantile_mode="mc"``.
    online : bool, default=True
        Add each observed test residual to the calibration store.
    reservoir_size, spectral_radius, leak_rate, input_scaling, connectivity
        Reservoir hyperparameters.
    random_state : int, default=0
        Seed of the reservoir and of Monte Carlo draws.
    """

    def __init__(
        self,
        alpha=0.1,
        horizon=1,
        temperature=0.1,
        similarity="cosine",
        decay="linear",
        window=None,
        beta_search=False,
        grid_step=None,
        quantile_mode="exact",
        n_samples=10_000,
        online=True,
        reservoir_size=512,
        spectral_radius=0.9,
        leak_rate=1.0,
        input_scaling=1.0,
        connectivity=0.2,
        random_state=0,
    ):
        self.alpha = alpha
        self.horizon = horizon
        self.temperature = temperature
        self.similarity = similarity
        self.decay = decay
        self.window = window
        self.beta_search = beta_search
        self.grid_step = grid_step
        self.quantile_mode = quantile_mode
        self.n_samples = n_samples
        self.online = online
        self.reservoir_size = reservoir_size
        self.spectral_radius = spectral_radius
        self.leak_rate = leak_rate
        self.input_scaling = input_scaling
        self.connectivity = connectivity
        self.random_state = random_state

    def _after_fit(self):
        self.params_ = RescpParams(
            alpha=self.alpha,
            temperature=self.temperature,
            similarity=self.similarity,
            decay=self.decay,
            beta_search=self.beta_search,
            grid_step=self.grid_step,
            quantile_mode=self.quantile_mode,
            n_samples=self.n_samples,
            mc_seed=self.random_state,
        ).validate()

    def _interval(self, state, origin, center, store):
        w = rescp_weights(state, origin, store, self.params_)
        return interval_from_weights(store.residuals, w, center, self.params_, mc_stream=origin)
