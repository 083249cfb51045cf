"""End-to-end experiments: data, forecaster, conformal method, metrics, files.

A run walks the test split one target at a time. Each interval is built from
data observed strictly before its target; with online updating, every
residual joins the calibration store once observed.
"""

from __future__ import annotations

import contextlib
import csv
import itertools
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .baselines import NexCP, SplitConformal
from .conformal import ResCP
from .data import SplitSpec, gen_synthetic, load_csv, split_series
from .evaluation import EvalReport, aggregate_reports, evaluate_run
from .exceptions import ConfigError, DataError, NumericError, RescpError
from .forecasting import ARForecaster
from .reservoir import ReservoirConfig
from .rescqr import ResCQR
from .weighting import _parse_schedule

logger = logging.getLogger(__name__)

OUTPUT_VERSION = 1
METHODS = ("rescp", "rescqr", "scp", "nexcp")
STEP_COLUMNS = ("time", "center", "lower", "upper", "y", "covered", "winkler", "ess")

# default model-selection grid
DEFAULT_GRID = {
    "spectral_radius": [0.5, 0.9, 1.2, 1.5],
    "leak_rate": [0.5, 0.8, 1.0],
    "input_scaling": [0.1, 0.5, 1.0, 3.0],
    "temperature": [0.01, 0.05, 0.1, 0.5, 2.0],
}

_RESERVOIR_KEYS = {
    "reservoir_size": "size",
    "spectral_radius": "spectral_radius",
    "leak_rate": "leak_rate",
    "input_scaling": "input_scaling",
    "connectivity": "connectivity",
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Every setting of an experiment.

    The series comes from ``data`` (a CSV path) or, when that is None, from
    the ``synthetic`` generator settings ``{"kind", "params", "length", "seed"}``.
    Supplying ``pred_col`` uses the file's predictions instead of fitting the
    built-in autoregressive forecaster.
    """

    method: str = "rescp"
    alpha: float = 0.1
    horizon: int = 1
    reservoir: ReservoirConfig = field(default_factory=ReservoirConfig)
    temperature: float = 0.1
    similarity: str = "cosine"
    decay: Any = "linear"
    window: Optional[int] = None
    beta_search: bool = False
    grid_step: Optional[float] = None
    quantile_mode: str = "exact"
    n_samples: int = 10_000
    online: bool = True
    rho: float = 0.99
    epochs: int = 200
    use_exogenous: bool = True
    forecaster_window: int = 16
    ridge: float = 1e-6
    data: Optional[str] = None
    target_col: str = "y"
    pred_col: Optional[str] = None
    feature_cols: Sequence[str] = ()
    synthetic: Optional[Dict[str, Any]] = None
    split: SplitSpec = field(default_factory=SplitSpec)
    seeds: Sequence[int] = (0,)
    out: Optional[str] = None

    def validate(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ConfigError(f"horizon must be a positive integer, got {self.horizon!r}")
        self.reservoir.validate()
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature!r}")
        if self.similarity not in ("cosine", "dot"):
            raise ConfigError(f"unknown similarity {self.similarity!r}")
        _parse_schedule(self.decay)
        if self.window is not None and (int(self.window) != self.window or self.window < 1):
            raise ConfigError(f"window must be a positive integer or None, got {self.window!r}")
        if self.quantile_mode not in ("exact", "mc"):
            raise ConfigError(f"quantile_mode must be 'exact' or 'mc', got {self.quantile_mode!r}")
        if not 0 < self.rho <= 1:
            raise ConfigError(f"rho must lie in (0, 1], got {self.rho!r}")
        if self.data is None and self.synthetic is None:
            raise ConfigError("either a data file or a synthetic generator is required")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        self.split.validate()
        return self

    def with_overrides(self, **kw):
        """Copy with fields replaced; reservoir fields may be given flat."""
        res = {_RESERVOIR_KEYS[k]: kw.pop(k) for k in list(kw) if k in _RESERVOIR_KEYS}
        names = {f.name for f in fields(self)}
        unknown = set(kw) - names
        if unknown:
            raise ConfigError(f"unknown config field(s): {sorted(unknown)}")
        if res:
            kw["reservoir"] = replace(kw.get("reservoir", self.reservoir), **res)
        return replace(self, **kw)

    def to_dict(self):
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        d["feature_cols"] = list(self.feature_cols)
        if isinstance(self.decay, tuple):
            d["decay"] = f"{self.decay[0]}:{self.decay[1]}"
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        names = {f.name for f in fields(cls)}
        flat_res = {k: d.pop(k) for k in list(d) if k in _RESERVOIR_KEYS}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config field(s): {sorted(unknown)}")
        if "reservoir" in d and isinstance(d["reservoir"], dict):
            d["reservoir"] = ReservoirConfig(**d["reservoir"])
        if "split" in d and isinstance(d["split"], dict):
            d["split"] = SplitSpec(**d["split"])
        if "split" in d and isinstance(d["split"], (list, tuple)):
            d["split"] = SplitSpec(*d["split"])
        for key in ("seeds", "feature_cols"):
            if key in d:
                d[key] = tuple(d[key])
        cfg = cls(**d)
        return cfg.with_overrides(**flat_res) if flat_res else cfg


@dataclass
class Streams:
    """Residual streams of one series, positioned on the calibration+test span."""

    times: np.ndarray
    y: np.ndarray
    centers: np.ndarray
    residuals: np.ndarray
    exog: Optional[np.ndarray]
    reference: Optional[np.ndarray]
    n_cal: int


@dataclass
class ExperimentResult:
    reports: List[EvalReport]
    seeds: List[int]
    summary: Dict[str, Any]
    intervals: List[list] = field(default_factory=list, repr=False)

    @property
    def report(self):
        return self.reports[0]


@contextlib.contextmanager
def _stage(name):
    try:
        yield
    except RescpError as exc:
        raise type(exc)(f"[{name}] {exc}") from exc
    except (OSError, ValueError) as exc:
        raise DataError(f"[{name}] {exc}") from exc
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        raise NumericError(f"[{name}] {exc}") from exc


def prepare_streams(config: ExperimentConfig) -> Streams:
    """Load or generate the series, split it and compute residuals."""
    with _stage("data"):
        if config.data is not None:
            bundle, forecasts = load_csv(config.data, config.target_col, config.feature_cols,
                                         config.pred_col)
        else:
            spec = dict(config.synthetic)
            bundle = gen_synthetic(spec["kind"], spec.get("params"), spec.get("length", 1000),
                                   spec.get("seed", 0))
            forecasts = None
        train, cal, test = split_series(bundle, config.split)

    with _stage("forecast"):
        y = bundle.target
        if forecasts is not None:
            have = np.zeros(len(bundle), dtype=bool)
            have[forecasts.times] = True
            missing = np.flatnonzero(~have[cal.start:test.stop])
            if missing.size:
                raise DataError(
                    f"external predictions missing for {missing.size} calibration/test row(s), "
                    f"first at row {cal.start + missing[0]}"
                )
            span = forecasts.slice(cal.start, test.stop)
            ref = forecasts.slice(train.start, train.stop).residuals
        else:
            model = ARForecaster(config.forecaster_window, config.horizon, config.ridge)
            model.fit(y[train.start:train.stop])
            span = model.forecast_set(y, cal.start, test.stop)
            ref = model.forecast_set(y[:train.stop]).residuals
    exog = None
    if bundle.exogenous is not None:
        exog = bundle.exogenous[cal.start:test.stop]
    return Streams(
        times=bundle.times[cal.start:test.stop],
        y=span.y_true,
        centers=span.y_hat,
        residuals=span.residuals,
        exog=exog,
        reference=ref if ref.size >= 2 else None,
        n_cal=len(cal),
    )


def build_estimator(config: ExperimentConfig, seed: int):
    """Estimator for ``config.method`` with reservoir/Monte Carlo seed ``seed``."""
    res = config.reservoir
    common = dict(alpha=config.alpha, horizon=config.horizon)
    reservoir = dict(
        reservoir_size=res.size, spectral_radius=res.spectral_radius, leak_rate=res.leak_rate,
        input_scaling=res.input_scaling, connectivity=res.connectivity, random_state=int(seed),
    )
    if config.method == "rescp":
        return ResCP(
            temperature=config.temperature, similarity=config.similarity, decay=config.decay,
            window=config.window, beta_search=config.beta_search, grid_step=config.grid_step,
            quantile_mode=config.quantile_mode, n_samples=config.n_samples,
            online=config.online, **common, **reservoir,
        )
    if config.method == "rescqr":
        return ResCQR(beta_search=config.beta_search, use_exogenous=config.use_exogenous,
                      epochs=config.epochs, **common, **reservoir)
    if config.method == "nexcp":
        return NexCP(rho=config.rho, window=config.window, online=config.online, **common)
    return SplitConformal(window=config.window, online=config.online, **common)


def run_streams(config: ExperimentConfig, seed: int, streams: Streams, n_cal=None, stop=None):
    """Fit on ``[0, n_cal)`` of the streams and predict ``[n_cal, stop)``.

    Returns ``(intervals, report)``.
    """
    n_cal = streams.n_cal if n_cal is None else n_cal
    stop = streams.residuals.shape[0] if stop is None else stop
    est = build_estimator(config, seed)
    ex = streams.exog
    with _stage("calibrate"):
        est.fit(streams.residuals[:n_cal], None if ex is None else ex[:n_cal],
                reference=streams.reference)
    with _stage("predict"):
        iv = est.predict_interval(streams.centers[n_cal:stop], streams.residuals[n_cal:stop],
                                  None if ex is None else ex[n_cal:stop])
    with _stage("evaluate"):
        report = evaluate_run(iv, streams.y[n_cal:stop], config.alpha, times=streams.times[n_cal:stop])
    return iv, report


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run every seed of ``config`` and, if ``config.out`` is set, write files.

    Files: ``steps_seed<k>.csv`` per seed (columns ``STEP_COLUMNS``) and
    ``summary.json``. If writing fails, files written so far are removed.
    """
    config.validate()
    streams = prepare_streams(config)
    reports, intervals = [], []
    for seed in config.seeds:
        iv, rep = run_streams(config, seed, streams)
        reports.append(rep)
        intervals.append(iv)
    summary = {
        "format_version": OUTPUT_VERSION,
        "method": config.method,
        "config": config.to_dict(),
        "per_seed": [{"seed": int(s), **r.summary()} for s, r in zip(config.seeds, reports)],
        "aggregate": aggregate_reports(reports),
    }
    result = ExperimentResult(reports, list(config.seeds), summary, intervals)
    if config.out:
        write_outputs(config.out, result)
    return result


def write_outputs(out_dir, result: ExperimentResult):
    written = []
    try:
        os.makedirs(out_dir, exist_ok=True)
        for seed, rep in zip(result.seeds, result.reports):
            path = os.path.join(out_dir, f"steps_seed{seed}.csv")
            written.append(path)
            write_steps(path, rep)
        path = os.path.join(out_dir, "summary.json")
        written.append(path)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(result.summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except BaseException:
        for p in written:
            with contextlib.suppress(OSError):
                os.remove(p)
        raise
    return written


def write_steps(path, report: EvalReport):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STEP_COLUMNS)
        for s in report.per_step:
            w.writerow([s.time, repr(s.center), repr(s.lower), repr(s.upper), repr(s.y),
                        int(s.covered), repr(s.winkler), repr(s.ess)])


def _expand_grid(grid):
    if isinstance(grid, dict):
        keys = list(grid)
        return [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]
    return [dict(g) for g in grid]


def evaluate_grid(config: ExperimentConfig, grid, validation_fraction=0.1):
    """Validation Winkler score of every grid point.

    The last ``validation_fraction`` of the calibration split is held out:
    each candidate is calibrated on the rest and scored on that slice,
    averaging over ``config.seeds``. Returns ``[(overrides, score or exception)]``.
    """
    points = _expand_grid(grid)
    if not points:
        raise ConfigError("empty grid")
    if not 0 < validation_fraction < 1:
        raise ConfigError(f"validation_fraction must lie in (0, 1), got {validation_fraction!r}")
    config.validate()
    streams = prepare_streams(config)
    n_fit = streams.n_cal - int(round(streams.n_cal * validation_fraction))
    if n_fit <= config.horizon or n_fit >= streams.n_cal:
        raise DataError(f"calibration split of {streams.n_cal} too small for validation")
    results = []
    for overrides in points:
        try:
            cand = config.with_overrides(**overrides).validate()
            scores = [run_streams(cand, s, streams, n_cal=n_fit, stop=streams.n_cal)[1].mean_winkler
                      for s in cand.seeds]
            results.append((overrides, float(np.mean(scores))))
        except RescpError as exc:
            logger.warning("grid point %s failed: %s", overrides, exc)
            results.append((overrides, exc))
    return results


def grid_search(config: ExperimentConfig, grid=None, validation_fraction=0.1) -> ExperimentConfig:
    """Config with the grid point of lowest validation Winkler score (first on ties)."""
    results = evaluate_grid(config, DEFAULT_GRID if grid is None else grid, validation_fraction)
    ok = [(o, s) for o, s in results if not isinstance(s, Exception)]
    if not ok:
        causes = "; ".join(f"{o}: {s}" for o, s in results)
        raise NumericError(f"every grid point failed: {causes}")
    best, score = min(ok, key=lambda pair: pair[1])
    logger.info("grid search selected %s (validation Winkler %.6g)", best, score)
    return config.with_overrides(**best)
