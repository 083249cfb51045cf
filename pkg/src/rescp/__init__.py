"""Reservoir conformal prediction for time-series forecasts.

Training-free, locally adaptive prediction intervals: residuals from a
calibration period are reweighted by the similarity of echo-state-network
states, and interval bounds are read off the weighted residual distribution.
"""

from .baselines import NexCP, NexcpConfig, SplitConformal, nexcp_interval, scp_interval
from .conformal import (
    CalibrationStore,
    PredictionInterval,
    ResCP,
    RescpParams,
    beta_star,
    mc_quantile,
    push_calibration,
    rescp_interval,
    weighted_quantile,
)
from .data import SeriesBundle, SplitSpec, gen_synthetic, load_csv, split_series, write_csv
from .evaluation import EvalReport, coverage_gap, evaluate_run, winkler_score
from .exceptions import ConfigError, DataError, NumericError, RescpError
from .experiment import ExperimentConfig, grid_search, run_experiment
from .forecasting import ARForecaster, ARModel, ForecastSet, fit_ar_forecaster, predict_and_residuals
from .rescqr import (
    LinearQuantileModel,
    ResCQR,
    TrainConfig,
    fit_readout,
    pinball_loss,
    rescqr_interval,
)
from .reservoir import (
    Reservoir,
    ReservoirConfig,
    ReservoirEncoder,
    StateTrajectory,
    build_reservoir,
    encode,
    estimate_spectral_radius,
)
from .weighting import (
    WeightVector,
    apply_temporal_decay,
    effective_sample_size,
    similarity_scores,
    softmax_weights,
)

__version__ = "0.1.0"

__all__ = [
    "ARForecaster",
    "ARModel",
    "CalibrationStore",
    "ConfigError",
    "DataError",
    "EvalReport",
    "ExperimentConfig",
    "ForecastSet",
    "LinearQuantileModel",
    "NexCP",
    "NexcpConfig",
    "NumericError",
    "PredictionInterval",
    "ResCP",
    "ResCQR",
    "RescpError",
    "RescpParams",
    "Reservoir",
    "ReservoirConfig",
    "ReservoirEncoder",
    "SeriesBundle",
    "SplitConformal",
    "SplitSpec",
    "StateTrajectory",
    "TrainConfig",
    "WeightVector",
    "apply_temporal_decay",
    "beta_star",
    "build_reservoir",
    "coverage_gap",
    "effective_sample_size",
    "encode",
    "estimate_spectral_radius",
    "evaluate_run",
    "fit_ar_forecaster",
    "fit_readout",
    "gen_synthetic",
    "grid_search",
    "load_csv",
    "mc_quantile",
    "nexcp_interval",
    "pinball_loss",
    "predict_and_residuals",
    "push_calibration",
    "rescp_interval",
    "rescqr_interval",
    "run_experiment",
    "scp_interval",
    "similarity_scores",
    "softmax_weights",
    "split_series",
    "weighted_quantile",
    "winkler_score",
    "write_csv",
]
