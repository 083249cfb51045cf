"""Command-line entry point.

    rescp run [--config FILE] [flags]          run an experiment
    rescp grid-search --grid FILE [flags]      select hyperparameters, then run
    rescp generate KIND --length N --out CSV   write a synthetic series

Settings resolve as flags > config file > defaults. Exit codes: 0 success,
1 configuration error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .data import SplitSpec, gen_synthetic, write_csv
from .exceptions import ConfigError, DataError, NumericError
from .experiment import METHODS, ExperimentConfig, grid_search, run_experiment

logger = logging.getLogger("rescp")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# flag dest -> ExperimentConfig field (reservoir fields are routed by with_overrides)
FLAG_FIELDS = {
    "method": "method",
    "alpha": "alpha",
    "horizon": "horizon",
    "data": "data",
    "target_col": "target_col",
    "pred_col": "pred_col",
    "feature_cols": "feature_cols",
    "reservoir_size": "reservoir_size",
    "spectral_radius": "spectral_radius",
    "leak_rate": "leak_rate",
    "input_scaling": "input_scaling",
    "connectivity": "connectivity",
    "temperature": "temperature",
    "similarity": "similarity",
    "decay": "decay",
    "window": "window",
    "beta_search": "beta_search",
    "grid_step": "grid_step",
    "quantile_mode": "quantile_mode",
    "n_samples": "n_samples",
    "online": "online",
    "rho": "rho",
    "epochs": "epochs",
    "forecaster_window": "forecaster_window",
    "ridge": "ridge",
    "seeds": "seeds",
    "out": "out",
}


def _window(text):
    return None if text.lower() == "all" else int(text)


def _split(text):
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated fractions")
    return parts


def _kv(text):
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    return key, float(value)


def _add_experiment_flags(p):
    g = p.add_argument_group("experiment")
    g.add_argument("--config", help="JSON file with ExperimentConfig fields")
    g.add_argument("--method", choices=METHODS)
    g.add_argument("--alpha", type=float)
    g.add_argument("--horizon", type=int)
    g.add_argument("--seed", "--seeds", dest="seeds", type=int, nargs="+")
    g.add_argument("--out", help="output directory")
    g.add_argument("--split", type=_split, help="train,cal,test fractions (default 0.4,0.4,0.2)")

    g = p.add_argument_group("data")
    g.add_argument("--data", help="CSV file")
    g.add_argument("--target-col")
    g.add_argument("--pred-col", help="column with external point forecasts")
    g.add_argument("--feature-cols", nargs="+")
    g.add_argument("--synthetic", choices=("ar1", "regime_switch_hetero"),
                   help="generate the series instead of reading --data")
    g.add_argument("--length", type=int, default=None)
    g.add_argument("--data-seed", type=int, default=None)
    g.add_argument("--param", dest="synthetic_params", type=_kv, action="append",
                   metavar="KEY=VALUE", help="generator parameter (repeatable)")
    g.add_argument("--forecaster-window", type=int)
    g.add_argument("--ridge", type=float)

    g = p.add_argument_group("reservoir")
    g.add_argument("--reservoir-size", type=int)
    g.add_argument("--spectral-radius", type=float)
    g.add_argument("--leak-rate", type=float)
    g.add_argument("--input-scaling", type=float)
    g.add_argument("--connectivity", type=float)

    g = p.add_argument_group("conformal")
    g.add_argument("--temperature", type=float)
    g.add_argument("--similarity", choices=("cosine", "dot"))
    g.add_argument("--decay", help="none | linear | exponential:RHO")
    g.add_argument("--window", type=_window, help="calibration window size or 'all'")
    g.add_argument("--beta-search", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--grid-step", type=float)
    g.add_argument("--quantile-mode", choices=("exact", "mc"))
    g.add_argument("--n-samples", type=int)
    g.add_argument("--online", action=argparse.BooleanOptionalAction, default=None,
                   help="update the calibration set with test residuals (--no-online freezes it)")
    g.add_argument("--rho", type=float, help="NexCP decay base")
    g.add_argument("--epochs", type=int, help="ResCQR training epochs")


def build_parser():
    parser = argparse.ArgumentParser(prog="rescp", description="Reservoir conformal prediction")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment")
    _add_experiment_flags(run)

    gs = sub.add_parser("grid-search", help="select hyperparameters on validation Winkler, then run")
    _add_experiment_flags(gs)
    gs.add_argument("--grid", help="JSON file: {field: [values, ...]} or [{field: value}, ...]")
    gs.add_argument("--validation-fraction", type=float, default=0.1)

    gen = sub.add_parser("generate", help="write a synthetic series to CSV")
    gen.add_argument("kind", choices=("ar1", "regime_switch_hetero"))
    gen.add_argument("--length", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--param", dest="synthetic_params", type=_kv, action="append", metavar="KEY=VALUE")
    gen.add_argument("--out", required=True)
    return parser


def config_from_args(args) -> ExperimentConfig:
    """Merge defaults, the optional config file and explicit flags."""
    base = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                base = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from exc
        if not isinstance(base, dict):
            raise ConfigError("config file must hold a JSON object")
    cfg = ExperimentConfig.from_dict(base) if base else ExperimentConfig(synthetic=None)

    overrides = {}
    for dest, name in FLAG_FIELDS.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides[name] = tuple(value) if isinstance(value, list) else value
    if args.split is not None:
        overrides["split"] = SplitSpec(*args.split)
    if args.synthetic is not None or args.length is not None or args.synthetic_params or args.data_seed is not None:
        syn = dict(cfg.synthetic or {})
        if args.synthetic is not None:
            syn["kind"] = args.synthetic
        if args.length is not None:
            syn["length"] = args.length
        if args.data_seed is not None:
            syn["seed"] = args.data_seed
        if args.synthetic_params:
            syn["params"] = {**syn.get("params", {}), **dict(args.synthetic_params)}
        if "kind" not in syn:
            raise ConfigError("--length/--param/--data-seed need --synthetic KIND")
        overrides["synthetic"] = syn
    if args.data is not None:
        overrides.setdefault("synthetic", None)
    return cfg.with_overrides(**overrides).validate()


def _print_summary(result):
    agg = result.summary["aggregate"]
    print(
        f"{result.summary['method']}: delta_cov={agg['delta_cov']['mean']:.3f}"
        f"±{agg['delta_cov']['std']:.3f}  width={agg['mean_pi_width']['mean']:.6g}"
        f"±{agg['mean_pi_width']['std']:.3g}  winkler={agg['mean_winkler']['mean']:.6g}"
        f"±{agg['mean_winkler']['std']:.3g}  (n_runs={agg['n_runs']})"
    )


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "generate":
            bundle = gen_synthetic(args.kind, dict(args.synthetic_params or []), args.length, args.seed)
            write_csv(args.out, bundle)
            return EXIT_OK
        cfg = config_from_args(args)
        if args.command == "grid-search":
            grid = None
            if args.grid:
                try:
                    with open(args.grid, encoding="utf-8") as fh:
                        grid = json.load(fh)
                except (OSError, json.JSONDecodeError) as exc:
                    raise ConfigError(f"cannot read grid file {args.grid}: {exc}") from exc
            cfg = grid_search(cfg, grid, args.validation_fraction)
            print(json.dumps({"selected": cfg.to_dict()}, sort_keys=True))
        _print_summary(run_experiment(cfg))
        return EXIT_OK
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_DATA
    except (NumericError, ArithmeticError) as exc:
        logger.error("%s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
