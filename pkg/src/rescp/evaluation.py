"""Interval metrics: coverage gap, width and Winkler score."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .conformal import PredictionInterval
from .exceptions import ConfigError, DataError


@dataclass
class StepRecord:
    time: int
    center: float
    lower: float
    upper: float
    y: float
    covered: bool
    winkler: float
    ess: float


@dataclass
class EvalReport:
    """Aggregate metrics of one run.

    ``delta_cov`` is in percentage points; ``per_step`` is filled by
    :func:`evaluate_run` when ``times`` are given.
    """

    delta_cov: float
    mean_pi_width: float
    mean_winkler: float
    n_test: int
    alpha: float
    per_step: Optional[List[StepRecord]] = field(default=None, repr=False)

    @property
    def coverage(self):
        return self.delta_cov / 100 + (1 - self.alpha)

    def summary(self):
        d = asdict(self)
        d.pop("per_step")
        d["coverage"] = self.coverage
        return d


def _check_alpha(alpha):
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha!r}")


def coverage_gap(covered: Sequence[bool], alpha) -> float:
    """``100 * (mean coverage - (1 - alpha))``."""
    _check_alpha(alpha)
    c = np.asarray(covered, dtype=bool).reshape(-1)
    if c.size == 0:
        raise DataError("coverage_gap of an empty sequence")
    return 100.0 * (float(np.mean(c)) - (1.0 - alpha))


def winkler_score(interval: PredictionInterval, y, alpha=None) -> float:
    """Interval width plus ``2/alpha`` times the distance of a miss.

    ``alpha`` defaults to the interval's own level. Bounds are inclusive.
    """
    a = interval.alpha if alpha is None else alpha
    _check_alpha(a)
    lo, hi = interval.lower, interval.upper
    width = hi - lo
    if y < lo:
        return width + (2.0 / a) * (lo - y)
    if y > hi:
        return width + (2.0 / a) * (y - hi)
    return width


def winkler_scores(lower, upper, y, alpha):
    """Vectorized :func:`winkler_score` over arrays of bounds and outcomes."""
    _check_alpha(alpha)
    lower, upper, y = (np.asarray(a, dtype=float) for a in (lower, upper, y))
    below = np.clip(lower - y, 0, None)
    above = np.clip(y - upper, 0, None)
    return (upper - lower) + (2.0 / alpha) * (below + above)


def evaluate_run(intervals: Sequence[PredictionInterval], y_true, alpha, times=None) -> EvalReport:
    """Coverage gap, mean width and mean Winkler score of a test run."""
    _check_alpha(alpha)
    y = np.asarray(y_true, dtype=float).reshape(-1)
    if len(intervals) != y.shape[0]:
        raise DataError(f"{len(intervals)} intervals but {y.shape[0]} observations")
    if y.shape[0] == 0:
        raise DataError("cannot evaluate an empty run")
    lower = np.array([iv.lower for iv in intervals])
    upper = np.array([iv.upper for iv in intervals])
    covered = (lower <= y) & (y <= upper)
    wink = winkler_scores(lower, upper, y, alpha)
    per_step = None
    if times is not None:
        per_step = [
            StepRecord(int(t), iv.center, iv.lower, iv.upper, float(v), bool(c), float(w), iv.ess)
            for t, iv, v, c, w in zip(times, intervals, y, covered, wink)
        ]
    return EvalReport(
        delta_cov=coverage_gap(covered, alpha),
        mean_pi_width=float(np.mean(upper - lower)),
        mean_winkler=float(np.mean(wink)),
        n_test=int(y.shape[0]),
        alpha=alpha,
        per_step=per_step,
    )


def aggregate_reports(reports: Sequence[EvalReport]):
    """Mean and sample standard deviation of each metric across runs."""
    if not reports:
        raise DataError("no reports to aggregate")
    out = {"n_runs": len(reports), "alpha": reports[0].alpha}
    for key in ("delta_cov", "mean_pi_width", "mean_winkler", "coverage"):
        vals = np.array([getattr(r, key) for r in reports], dtype=float)
        out[key] = {
            "mean": float(vals.mean()),
            "std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0,
        }
    return out
