"""Quantile-regression readout on reservoir states.

A linear map from the state at a forecast origin to several quantiles of the
future residual, trained with the pinball loss by mini-batch Adam.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from ._rng import make_rng
from .conformal import OnlineConformalRegressor, PredictionInterval, _ReservoirMixin
from .exceptions import ConfigError, DataError, NumericError

logger = logging.getLogger(__name__)

FORMAT_NAME = "rescqr-linear-quantile"
FORMAT_VERSION = 1
LEVEL_TOL = 1e-9


@dataclass(frozen=True)
class LinearQuantileModel:
    """One affine quantile predictor per level (rows of ``weights``)."""

    weights: np.ndarray
    biases: np.ndarray
    levels: np.ndarray

    def __post_init__(self):
        W = np.array(self.weights, dtype=float, ndmin=2)
        b = np.array(self.biases, dtype=float).reshape(-1)
        lv = np.array(self.levels, dtype=float).reshape(-1)
        if W.shape[0] != lv.shape[0] or b.shape[0] != lv.shape[0]:
            raise DataError(
                f"inconsistent model shapes: weights {W.shape}, biases {b.shape}, levels {lv.shape}"
            )
        if np.any(np.diff(lv) <= 0) or np.any((lv <= 0) | (lv >= 1)):
            raise ConfigError(f"levels must be strictly increasing in (0, 1), got {lv.tolist()}")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise NumericError("model parameters must be finite")
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "biases", b)
        object.__setattr__(self, "levels", lv)

    @property
    def state_dim(self):
        return self.weights.shape[1]

    def predict(self, states):
        """Raw (possibly crossing) quantiles, shape ``(n, M)`` or ``(M,)``."""
        h = np.asarray(states, dtype=float)
        return h @ self.weights.T + self.biases

    def level_index(self, level):
        i = int(np.argmin(np.abs(self.levels - level)))
        if abs(self.levels[i] - level) > LEVEL_TOL:
            raise ConfigError(
                f"level {level} was not fitted; fitted levels: {self.levels.tolist()}"
            )
        return i


def pinball_loss(q_pred, r, beta):
    """``(1-beta)(q-r)`` when ``q >= r`` else ``beta(r-q)``; broadcasts."""
    q = np.asarray(q_pred, dtype=float)
    diff = q - np.asarray(r, dtype=float)
    out = np.where(diff >= 0, (1 - beta) * diff, -beta * diff)
    return float(out) if out.ndim == 0 else out


def pinball_objective(weights, biases, states, residuals, levels):
    """Sum over levels of the mean pinball loss, with its (sub)gradient.

    Returns ``(loss, grad_weights, grad_biases)``. At a kink the gradient
    takes the ``q >= r`` branch.
    """
    h = np.asarray(states, dtype=float)
    r = np.asarray(residuals, dtype=float).reshape(-1, 1)
    lv = np.asarray(levels, dtype=float).reshape(1, -1)
    q = h @ weights.T + biases
    diff = q - r
    over = diff >= 0
    loss = np.where(over, (1 - lv) * diff, -lv * diff).sum(axis=1).mean()
    g = np.where(over, 1 - lv, -lv) / h.shape[0]
    return float(loss), g.T @ h, g.sum(axis=0)


@dataclass(frozen=True)
class TrainConfig:
    """Readout training recipe.

    The step size starts at ``learning_rate`` and, with
    ``schedule="plateau"``, is multiplied by ``factor`` whenever the monitored
    loss has not improved for ``patience`` consecutive epochs. The monitored
    loss is the validation loss when a validation slice exists (the first
    ``validation_fraction`` of the samples), else the training loss.
    """

    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 0.003
    schedule: str = "plateau"
    patience: int = 10
    factor: float = 0.5
    seed: int = 0
    validation_fraction: float = 0.25

    def validate(self):
        if int(self.epochs) != self.epochs or self.epochs < 0:
            raise ConfigError(f"epochs must be a nonnegative integer, got {self.epochs!r}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ConfigError(f"batch_size must be a positive integer, got {self.batch_size!r}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate!r}")
        if self.schedule not in ("plateau", "constant"):
            raise ConfigError(f"schedule must be 'plateau' or 'constant', got {self.schedule!r}")
        if not 0 <= self.validation_fraction < 1:
            raise ConfigError(f"validation_fraction must lie in [0, 1), got {self.validation_fraction!r}")
        return self


def fit_readout(states, residuals, levels, train_cfg: TrainConfig = TrainConfig()) -> LinearQuantileModel:
    """Fit a :class:`LinearQuantileModel` by mini-batch Adam on the pinball loss.

    ``states[i]`` must be paired with the residual it should predict.
    Parameters start at zero; the parameters with the lowest validation loss
    seen (including the starting point) are returned.
    """
    cfg = train_cfg.validate()
    H = np.asarray(states, dtype=float)
    if H.ndim == 1:
        H = H[:, None]
    r = np.asarray(residuals, dtype=float).reshape(-1)
    if H.shape[0] == 0:
        raise DataError("cannot fit a readout on empty data")
    if H.shape[0] != r.shape[0]:
        raise DataError(f"{H.shape[0]} states but {r.shape[0]} residuals")
    if not (np.all(np.isfinite(H)) and np.all(np.isfinite(r))):
        raise DataError("training data contain non-finite values")
    lv = np.asarray(levels, dtype=float).reshape(-1)
    M, D = lv.shape[0], H.shape[1]
    W = np.zeros((M, D))
    b = np.zeros(M)
    LinearQuantileModel(W, b, lv)  # validates levels

    n = H.shape[0]
    n_val = int(math.floor(n * cfg.validation_fraction))
    if n_val == 0 or n_val == n:
        val_idx = train_idx = np.arange(n)
    else:
        val_idx, train_idx = np.arange(n_val), np.arange(n_val, n)
    Hv, rv = H[val_idx], r[val_idx]

    def val_loss(W, b):
        return pinball_objective(W, b, Hv, rv, lv)[0]

    best = (val_loss(W, b), W.copy(), b.copy())
    monitored_best, stale = best[0], 0
    lr = cfg.learning_rate
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    mW, vW, mb, vb = np.zeros_like(W), np.zeros_like(W), np.zeros_like(b), np.zeros_like(b)
    step = 0
    rng = make_rng(cfg.seed, 0xB7)
    for epoch in range(cfg.epochs):
        order = train_idx[rng.permutation(train_idx.shape[0])]
        for s in range(0, order.shape[0], cfg.batch_size):
            batch = order[s:s + cfg.batch_size]
            _, gW, gb = pinball_objective(W, b, H[batch], r[batch], lv)
            step += 1
            mW = beta1 * mW + (1 - beta1) * gW
            vW = beta2 * vW + (1 - beta2) * gW * gW
            mb = beta1 * mb + (1 - beta1) * gb
            vb = beta2 * vb + (1 - beta2) * gb * gb
            c1, c2 = 1 - beta1 ** step, 1 - beta2 ** step
            W = W - lr * (mW / c1) / (np.sqrt(vW / c2) + eps)
            b = b - lr * (mb / c1) / (np.sqrt(vb / c2) + eps)
        loss = val_loss(W, b)
        if not math.isfinite(loss):
            raise NumericError(f"diverged at epoch {epoch}")
        if loss < best[0]:
            best = (loss, W.copy(), b.copy())
        if cfg.schedule == "plateau":
            if loss < monitored_best:
                monitored_best, stale = loss, 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    lr *= cfg.factor
                    stale = 0
                    logger.debug("epoch %d: learning rate reduced to %g", epoch, lr)
    return LinearQuantileModel(best[1], best[2], lv)


def rescqr_levels(alpha, beta_search=False):
    """Quantile levels a readout needs for intervals at miscoverage ``alpha``.

    Without search: ``alpha/2`` and ``1 - alpha/2``. With search: the interior
    grid ``k*alpha/20`` and ``1 - alpha + k*alpha/20`` for ``k = 1..19``.
    """
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha!r}")
    if not beta_search:
        return np.array([alpha / 2, 1 - alpha / 2])
    betas = [k * alpha / 20 for k in range(1, 20)]
    levels = sorted({round(x, 12) for b in betas for x in (b, 1 - alpha + b)})
    return np.array(levels)


def rescqr_interval(model: LinearQuantileModel, state, center, alpha,
                    use_beta_search=False, grid_levels=None) -> PredictionInterval:
    """Interval from the readout's quantiles at ``state``.

    Predicted quantiles are sorted across levels before use, so the returned
    bounds never cross. With ``use_beta_search`` the narrowest pair
    ``(beta, 1 - alpha + beta)`` over ``grid_levels`` (default: every fitted
    level ``<= alpha`` whose partner is fitted too) is chosen.
    """
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha!r}")
    q = np.sort(model.predict(np.asarray(state, dtype=float).reshape(-1)))
    if use_beta_search:
        if grid_levels is None:
            grid_levels = [b for b in model.levels if b <= alpha + LEVEL_TOL
                           and np.any(np.abs(model.levels - (1 - alpha + b)) <= LEVEL_TOL)]
        if len(grid_levels) == 0:
            raise ConfigError(
                f"no level pairs (beta, 1-alpha+beta) fitted; fitted levels: {model.levels.tolist()}"
            )
        pairs = [(float(b), model.level_index(b), model.level_index(1 - alpha + b)) for b in grid_levels]
        widths = [q[j] - q[i] for _, i, j in pairs]
        beta, i, j = pairs[int(np.argmin(widths))]
    else:
        beta = alpha / 2
        i, j = model.level_index(alpha / 2), model.level_index(1 - alpha / 2)
    return PredictionInterval(
        lower=center + float(q[i]), upper=center + float(q[j]), alpha=alpha,
        beta_star=beta, ess=math.nan, center=center,
    )


def save_model(model: LinearQuantileModel, path):
    """Write ``model`` as versioned JSON."""
    payload = {
        "format": FORMAT_NAME,
        "format_version": FORMAT_VERSION,
        "n_levels": int(model.levels.shape[0]),
        "state_dim": int(model.state_dim),
        "levels": model.levels.tolist(),
        "biases": model.biases.tolist(),
        "weights": model.weights.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_model(path) -> LinearQuantileModel:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != FORMAT_NAME:
        raise DataError(f"{path}: not a {FORMAT_NAME} file")
    if payload.get("format_version") != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format_version {payload.get('format_version')!r}")
    model = LinearQuantileModel(payload["weights"], payload["biases"], payload["levels"])
    if model.levels.shape[0] != payload["n_levels"] or model.state_dim != payload["state_dim"]:
        raise DataError(f"{path}: declared dimensions do not match stored arrays")
    return model


class ResCQR(_ReservoirMixin, OnlineConformalRegressor):
    """Reservoir states mapped to residual quantiles by a pinball-loss readout.

    Exogenous features passed as ``X`` are appended to the residual input of
    the reservoir when ``use_exogenous`` is set. The readout is fitted once on
    the calibration pairs and is not refitted while predicting.

    Parameters
    ----------
    alpha : float, default=0.1
    horizon : int, default=1
    beta_search : bool, default=False
        Fit a grid of levels and pick the narrowest pair per step.
    use_exogenous : bool, default=True
    epochs, batch_size, learning_rate, validation_fraction
        See :class:`TrainConfig`.
    reservoir_size, spectral_radius, leak_rate, input_scaling, connectivity
        Reservoir hyperparameters.
    random_state : int, default=0
        Seed of the reservoir and of mini-batch shuffling.
    """

    window = None
    online = False

    def __init__(
        self,
        alpha=0.1,
        horizon=1,
        beta_search=False,
        use_exogenous=True,
        epochs=200,
        batch_size=64,
        learning_rate=0.003,
        validation_fraction=0.25,
        reservoir_size=512,
        spectral_radius=0.9,
        leak_rate=1.0,
        input_scaling=1.0,
        connectivity=0.2,
        random_state=0,
    ):
        self.alpha = alpha
        self.horizon = horizon
        self.beta_search = beta_search
        self.use_exogenous = use_exogenous
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.validation_fraction = validation_fraction
        self.reservoir_size = reservoir_size
        self.spectral_radius = spectral_radius
        self.leak_rate = leak_rate
        self.input_scaling = input_scaling
        self.connectivity = connectivity
        self.random_state = random_state

    def _after_fit(self):
        cfg = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=self.random_state,
            validation_fraction=self.validation_fraction,
        )
        H = int(self.horizon)
        self.model_ = fit_readout(
            self.states_[:-H], self.residuals_[H:], rescqr_levels(self.alpha, self.beta_search), cfg
        )

    def _interval(self, state, origin, center, store):
        return rescqr_interval(self.model_, state, center, self.alpha, self.beta_search)
