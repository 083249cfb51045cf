"""Similarity-derived weights over calibration entries.

Scores between a query state and the stored calibration states pass through
a temperature softmax, optionally get discounted by their age, and are
summarized by the effective sample size ``1 / sum(w**2)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, DataError

logger = logging.getLogger(__name__)

SIMILARITIES = ("cosine", "dot")


@dataclass(frozen=True)
class WeightVector:
    """Normalized nonnegative weights and their effective sample size."""

    weights: np.ndarray
    ess: float

    def __len__(self):
        return self.weights.shape[0]

    @classmethod
    def from_weights(cls, weights):
        w = np.asarray(weights, dtype=float).reshape(-1)
        return cls(weights=w, ess=effective_sample_size(w))


def similarity_scores(query, calib_states, kind="cosine", calib_norms=None):
    """Similarity between ``query`` and every row of ``calib_states``.

    For ``kind="cosine"`` any pair involving a zero-norm vector scores 0.
    ``calib_norms`` may carry precomputed row norms of ``calib_states``.
    """
    q = np.asarray(query, dtype=float).reshape(-1)
    states = np.asarray(calib_states, dtype=float)
    if states.ndim == 1:
        states = states[None, :]
    if states.ndim != 2 or states.shape[1] != q.shape[0]:
        raise DataError(
            f"dimension mismatch: query has {q.shape[0]} entries, "
            f"calibration states have shape {states.shape}"
        )
    dots = states @ q
    if kind == "dot":
        return dots
    if kind != "cosine":
        raise ConfigError(f"unknown similarity {kind!r}; expected one of {SIMILARITIES}")

    norms = np.linalg.norm(states, axis=1) if calib_norms is None else np.asarray(calib_norms)
    qn = np.linalg.norm(q)
    denom = norms * qn
    zero = denom == 0
    if zero.any():
        logger.debug("cosine similarity with %d zero-norm vector(s) set to 0", int(zero.sum()))
        scores = np.zeros_like(dots)
        np.divide(dots, denom, out=scores, where=~zero)
    else:
        scores = dots / denom
    return np.clip(scores, -1.0, 1.0)


def softmax_weights(scores, temperature) -> WeightVector:
    """Softmax of ``scores / temperature`` with max-subtraction."""
    if not temperature > 0:
        raise ConfigError(f"temperature must be > 0, got {temperature!r}")
    z = np.asarray(scores, dtype=float).reshape(-1)
    if z.shape[0] == 0:
        raise DataError("empty calibration set")
    if not np.all(np.isfinite(z)):
        raise DataError("similarity scores must be finite")
    e = np.exp((z - z.max()) / temperature)
    w = e / e.sum()
    return WeightVector(weights=w, ess=effective_sample_size(w))


def _decay_factors(lags, schedule):
    kind, rho = _parse_schedule(schedule)
    if kind == "none":
        return None
    if kind == "linear":
        return 1.0 / lags
    # common factor rho**min(lag) cancels on renormalization; dropping it avoids underflow
    return rho ** (lags - lags.min())


def _parse_schedule(schedule):
    """Accept ``"none"``, ``"linear"``, ``("exponential", rho)`` or ``"exponential:rho"``."""
    if schedule is None:
        return "none", None
    if isinstance(schedule, str):
        name, _, arg = schedule.partition(":")
        name = name.strip().lower()
        if name in ("none", "linear") and not arg:
            return name, None
        if name == "exponential" and arg:
            schedule = (name, float(arg))
        else:
            raise ConfigError(f"unknown decay schedule {schedule!r}")
    name, rho = schedule
    if name != "exponential":
        raise ConfigError(f"unknown decay schedule {schedule!r}")
    if not 0 < rho <= 1:
        raise ConfigError(f"exponential decay base must lie in (0, 1], got {rho!r}")
    return "exponential", float(rho)


def apply_temporal_decay(w, calib_times, query_time, schedule="none") -> WeightVector:
    """Discount each weight by the age of its calibration entry and renormalize.

    The age is ``query_time - calib_time`` in steps and must be at least 1.
    ``schedule`` is ``"none"``, ``"linear"`` (factor ``1/age``) or
    ``("exponential", rho)`` (factor ``rho**age``).
    """
    if not isinstance(w, WeightVector):
        w = WeightVector.from_weights(w)
    times = np.asarray(calib_times, dtype=np.int64).reshape(-1)
    if times.shape[0] != len(w):
        raise DataError(f"{len(w)} weights but {times.shape[0]} calibration times")
    if times.size and times.max() >= query_time:
        raise DataError("calibration point not in the past")
    factors = _decay_factors((query_time - times).astype(float), schedule)
    if factors is None:
        return w
    raw = w.weights * factors
    total = raw.sum()
    if not total > 0:
        raise DataError("temporal decay removed all weight mass")
    decayed = raw / total
    return WeightVector(weights=decayed, ess=effective_sample_size(decayed))


def effective_sample_size(weights) -> float:
    """``1 / sum(w_i**2)`` for normalized weights.

    Uniform weights over ``n`` entries give exactly ``n``; a point mass gives 1.
    """
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.size == 0 or not np.any(w > 0):
        raise DataError("unnormalized weights")
    if np.all(w == w[0]):
        return float(w.size)
    ess = 1.0 / float(w @ w)
    return float(min(max(ess, 1.0), np.count_nonzero(w)))
