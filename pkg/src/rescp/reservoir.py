"""Echo state network reservoir: construction and state encoding.

The reservoir is a fixed random recurrent map. Nothing in it is trained;
:func:`build_reservoir` draws the weights once from a seeded stream and
:func:`encode` runs the leaky-integrator recurrence

    h_t = (1 - l) h_{t-1} + l * tanh(W_x x_t + W_h h_{t-1} + b)

over an input sequence.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._rng import make_rng
from .exceptions import ConfigError, DataError, NumericError

logger = logging.getLogger(__name__)

ACTIVATIONS = {"tanh": np.tanh}

MAX_DRAW_ATTEMPTS = 8


@dataclass(frozen=True)
class ReservoirConfig:
    """Hyperparameters of a reservoir.

    Validation happens in :meth:`validate`, which :func:`build_reservoir`
    calls. Hand-assembled reservoirs (used in tests for limiting cases such
    as a zero leak rate) skip it.
    """

    size: int = 512
    spectral_radius: float = 0.9
    leak_rate: float = 1.0
    input_scaling: float = 1.0
    connectivity: float = 0.2
    seed: int = 0
    activation: str = "tanh"

    def validate(self):
        if int(self.size) != self.size or self.size < 1:
            raise ConfigError(f"reservoir size must be a positive integer, got {self.size!r}")
        if not self.spectral_radius > 0:
            raise ConfigError(f"spectral_radius must be > 0, got {self.spectral_radius!r}")
        if not 0 < self.leak_rate <= 1:
            raise ConfigError(f"leak_rate must lie in (0, 1], got {self.leak_rate!r}")
        if not self.input_scaling > 0:
            raise ConfigError(f"input_scaling must be > 0, got {self.input_scaling!r}")
        if not 0 < self.connectivity <= 1:
            raise ConfigError(f"connectivity must lie in (0, 1], got {self.connectivity!r}")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(
                f"unknown activation {self.activation!r}; available: {sorted(ACTIVATIONS)}"
            )
        return self


@dataclass(frozen=True, eq=False)
class Reservoir:
    """Frozen reservoir weights.

    Attributes
    ----------
    w_in : ndarray of shape (size, input_dim)
    w_rec : ndarray of shape (size, size)
    bias : ndarray of shape (size,)
    config : ReservoirConfig
    input_dim : int
    """

    w_in: np.ndarray
    w_rec: np.ndarray
    bias: np.ndarray
    config: ReservoirConfig
    input_dim: int = field(default=0)

    def __post_init__(self):
        w_in = np.array(self.w_in, dtype=float, ndmin=2)
        w_rec = np.array(self.w_rec, dtype=float, ndmin=2)
        bias = np.array(self.bias, dtype=float).reshape(-1)
        size = w_rec.shape[0]
        if w_rec.shape != (size, size):
            raise DataError(f"w_rec must be square, got shape {w_rec.shape}")
        if w_in.shape[0] != size or bias.shape[0] != size:
            raise DataError(
                f"inconsistent reservoir shapes: w_in {w_in.shape}, "
                f"w_rec {w_rec.shape}, bias {bias.shape}"
            )
        for arr in (w_in, w_rec, bias):
            arr.setflags(write=False)
        object.__setattr__(self, "w_in", w_in)
        object.__setattr__(self, "w_rec", w_rec)
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "input_dim", w_in.shape[1])

    @property
    def size(self):
        return self.w_rec.shape[0]


@dataclass(frozen=True)
class StateTrajectory:
    """States ``h_1..h_T`` (rows of ``states``); ``h_1`` sits at ``start_index``."""

    states: np.ndarray
    start_index: int = 0

    def __len__(self):
        return self.states.shape[0]

    @property
    def last(self):
        return self.states[-1]


def estimate_spectral_radius(m, seed=0, tol=1e-10, max_iter=10_000):
    """Largest eigenvalue magnitude of a square matrix by power iteration.

    A two-column block is iterated so that a dominant complex-conjugate pair,
    the usual case for nonsymmetric random matrices, converges as well as a
    real dominant eigenvalue does. The Rayleigh quotient of the block
    (its 2x2 projection) is re-solved each sweep and the largest modulus of
    its eigenvalues is returned once its relative change drops below ``tol``.

    Returns 0.0 for a matrix whose iterates vanish (zero or nilpotent).
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DataError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DataError("matrix has non-finite entries")
    n = m.shape[0]
    if n == 0 or not np.any(m):
        return 0.0

    k = min(2, n)
    rng = make_rng(seed, 0x5EC7)
    v, _ = np.linalg.qr(rng.standard_normal((n, k)))
    prev = None
    est = 0.0
    for _ in range(max_iter):
        w = m @ v
        rayleigh = v.T @ w
        est = float(np.max(np.abs(np.linalg.eigvals(rayleigh))))
        if not np.any(w):
            return 0.0
        if prev is not None and abs(est - prev) <= tol * max(est, prev):
            break
        prev = est
        v, _ = np.linalg.qr(w)
    if est < 1e-12 * np.max(np.abs(m)):
        return 0.0
    return est


def build_reservoir(config: ReservoirConfig, input_dim: int) -> Reservoir:
    """Draw a random reservoir and rescale its recurrent matrix.

    Nonzero recurrent entries appear independently with probability
    ``config.connectivity`` and are uniform on [-1, 1]; the matrix is then
    multiplied by ``spectral_radius / estimated radius``. Input weights are
    uniform on [-1, 1] times ``input_scaling`` and the bias is uniform on
    [-0.1, 0.1]. A draw whose recurrent matrix has zero spectral radius is
    discarded and redrawn from the next stream, up to 8 times.
    """
    config.validate()
    if int(input_dim) != input_dim or input_dim < 1:
        raise ConfigError(f"input_dim must be a positive integer, got {input_dim!r}")
    size = int(config.size)
    input_dim = int(input_dim)

    for attempt in range(MAX_DRAW_ATTEMPTS):
        rng = make_rng(config.seed, attempt)
        w_in = rng.uniform(-1.0, 1.0, size=(size, input_dim)) * config.input_scaling
        bias = rng.uniform(-0.1, 0.1, size=size)
        mask = rng.random((size, size)) < config.connectivity
        w_rec = np.where(mask, rng.uniform(-1.0, 1.0, size=(size, size)), 0.0)
        radius = estimate_spectral_radius(w_rec, seed=config.seed)
        if radius > 0:
            w_rec = w_rec * (config.spectral_radius / radius)
            return Reservoir(w_in=w_in, w_rec=w_rec, bias=bias, config=config)
        logger.debug("degenerate recurrent draw (attempt %d), redrawing", attempt)
    raise NumericError("degenerate recurrent matrix")


def encode(r: Reservoir, inputs, h0=None, start_index=0) -> StateTrajectory:
    """Run the reservoir over ``inputs`` (shape ``(T, input_dim)``) from ``h0``.

    ``h0`` defaults to the zero state. One-dimensional inputs are read as a
    single-feature sequence when the reservoir has one input.
    """
    x = np.asarray(inputs, dtype=float)
    if x.ndim == 1 and r.input_dim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[1] != r.input_dim:
        raise DataError(
            f"input dimension mismatch: expected (T, {r.input_dim}), got {x.shape}"
        )
    bad = ~np.isfinite(x)
    if bad.any():
        idx = int(np.argwhere(bad)[0, 0])
        raise DataError(f"non-finite input at index {idx}")

    if h0 is None:
        h = np.zeros(r.size)
    else:
        h = np.array(h0, dtype=float).reshape(-1)
        if h.shape[0] != r.size:
            raise DataError(f"h0 dimension mismatch: expected {r.size}, got {h.shape[0]}")

    sigma = ACTIVATIONS[r.config.activation]
    leak = r.config.leak_rate
    keep = 1.0 - leak
    drive = x @ r.w_in.T + r.bias
    w_rec = r.w_rec
    states = np.empty((x.shape[0], r.size))
    for t in range(x.shape[0]):
        h = keep * h + leak * sigma(drive[t] + w_rec @ h)
        states[t] = h
    return StateTrajectory(states=states, start_index=int(start_index))


class ReservoirEncoder(TransformerMixin, BaseEstimator):
    """Transformer mapping a multivariate sequence to reservoir states.

    ``fit`` records per-column mean and standard deviation and draws the
    reservoir; ``transform`` z-scores its input with those statistics and
    returns the state trajectory as an array of shape ``(T, size)``.

    Parameters
    ----------
    size, spectral_radius, leak_rate, input_scaling, connectivity, activation
        See :class:`ReservoirConfig`.
    standardize : bool, default=True
        Z-score inputs with the statistics seen in ``fit``.
    random_state : int, default=0
        Reservoir seed.
    """

    def __init__(
        self,
        size=512,
        spectral_radius=0.9,
        leak_rate=1.0,
        input_scaling=1.0,
        connectivity=0.2,
        activation="tanh",
        standardize=True,
        random_state=0,
    ):
        self.size = size
        self.spectral_radius = spectral_radius
        self.leak_rate = leak_rate
        self.input_scaling = input_scaling
        self.connectivity = connectivity
        self.activation = activation
        self.standardize = standardize
        self.random_state = random_state

    def _config(self):
        return ReservoirConfig(
            size=self.size,
            spectral_radius=self.spectral_radius,
            leak_rate=self.leak_rate,
            input_scaling=self.input_scaling,
            connectivity=self.connectivity,
            seed=self.random_state,
            activation=self.activation,
        )

    def fit(self, X, y=None):
        X = _as_2d(X)
        if self.standardize:
            self.mean_ = X.mean(axis=0)
            scale = X.std(axis=0)
            self.scale_ = np.where(scale > 0, scale, 1.0)
        else:
            self.mean_ = np.zeros(X.shape[1])
            self.scale_ = np.ones(X.shape[1])
        self.n_features_in_ = X.shape[1]
        self.reservoir_ = build_reservoir(self._config(), X.shape[1])
        return self

    def transform(self, X, h0: Optional[np.ndarray] = None):
        check_is_fitted(self, "reservoir_")
        X = _as_2d(X)
        return encode(self.reservoir_, (X - self.mean_) / self.scale_, h0).states


def _as_2d(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError(f"expected a nonempty (T, D) array, got shape {X.shape}")
    return X
