"""
Command-line entry point.

Subcommands run one pipeline stage each and communicate only through files
in the output directory: ingest writes augmented.csv, fit writes the draws,
predict/simulate/ppc/bet read them. Every command saves the resolved
run_config.yaml next to its outputs and later commands start from it, so the
file left at the end of a pipeline reruns the whole pipeline.
"""
from __future__ import annotations

import argparse
import json
import logging
import logging.handlers
import math
import os
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import __version__
from .betting import accuracy_table, backtest, bookmaker_forecasts, get_strategy
from .config import LoggingConfig, RunConfig
from .data import (
    AttachStats,
    Dataset,
    ProbMethod,
    load_augmented,
    load_league,
    read_frame,
    save_augmented,
    split_by_season,
)
from .errors import ConfigError, ConvergenceFailure, ExitCode, MissingDraws, OddsModelError, log_error
from .mcmc import ConvergenceStatus, PosteriorDraws, run_sampler
from .metrics import MetricsManager
from .model import ModelData
from .odds import ProbTriple, convert_frame
from .predict import (
    Forecaster,
    fixtures_from_dataset,
    forecasts_frame,
    goal_difference_table,
    posterior_predictive_check,
    replicate_scores,
    score_grids_frame,
    simulate_season,
)
from .synthetic import generate_league

log = logging.getLogger(__name__)

RUN_CONFIG_FILE = "run_config.yaml"
AUGMENTED_FILE = "augmented.csv"
FLOAT_FORMAT = "%.17g"


class _Parser(argparse.ArgumentParser):
    """Usage errors become ConfigError so they map to exit code 1."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        raise ConfigError(message)


# (flag, dest, dotted config keys, argparse kwargs)
_OPTIONS: List[Tuple[str, str, Tuple[str, ...], Dict[str, Any]]] = [
    ("--output-dir", "output_dir", ("run.output_dir",), {}),
    ("--data-dir", "data_dir", ("run.data_dir",), {}),
    ("--league", "league", ("run.league",), {}),
    ("--method", "method", ("run.method",), {"choices": [m.value for m in ProbMethod]}),
    ("--test-season", "test_season", ("run.test_season",), {"type": int}),
    ("--seed", "seed", ("run.seed",), {"type": int}),
    ("--use-test-odds", "use_test_odds", ("run.use_test_odds",), {"action": argparse.BooleanOptionalAction}),
    ("--only-positive-ev", "only_positive_ev", ("run.only_positive_ev",),
     {"action": argparse.BooleanOptionalAction}),
    ("--away-intercept", "away_intercept", ("run.away_intercept",), {"action": argparse.BooleanOptionalAction}),
    ("--iterations", "iterations", ("sampler.n_iterations",), {"type": int}),
    ("--burnin", "burnin", ("sampler.n_burnin",), {"type": int}),
    ("--chains", "chains", ("sampler.n_chains",), {"type": int}),
    ("--workers", "workers", ("sampler.workers", "data.workers"), {"type": int}),
    ("--max-draws", "max_draws", ("predict.max_draws",), {"type": int}),
    ("--simulations", "simulations", ("predict.n_simulations",), {"type": int}),
    ("--strategy", "strategy", ("betting.strategies",), {"action": "append"}),
    ("--bookmaker", "bookmaker", ("betting.bookmakers",), {"action": "append"}),
    ("--forecast-source", "forecast_source", ("betting.forecast_source",),
     {"choices": ["model", "basic", "shin"]}),
    ("--log-level", "log_level", ("logging.level",), {}),
]


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", dest="config", default=None, help="YAML or JSON run configuration")
    for flag, dest, _, kwargs in _OPTIONS:
        parser.add_argument(flag, dest=dest, default=None, **kwargs)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="odds-bayes", description="Bookmaker-informed Bayesian football forecasting")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("convert", help="convert an odds file to three-way probabilities")
    p.add_argument("input", help="CSV file with bookmaker odds columns")
    p.add_argument("--output", default=None, help="output CSV (default: <output-dir>/probabilities.csv)")
    _add_common(p)

    for name, text in (
        ("ingest", "load season files and attach implicit scoring rates"),
        ("fit", "sample the posterior on the training seasons"),
        ("predict", "forecast the test-season matches"),
        ("simulate", "simulate the test season's final table"),
        ("ppc", "posterior predictive checks on the training seasons"),
        ("bet", "backtest the betting strategies on the test season"),
    ):
        _add_common(sub.add_parser(name, help=text))

    p = sub.add_parser("synth", help="write a synthetic league into the data directory")
    p.add_argument("--teams", type=int, default=6)
    p.add_argument("--seasons", type=int, default=3)
    p.add_argument("--rounds", type=int, default=1, help="double round robins per season")
    p.add_argument("--bookmakers", type=int, default=3)
    _add_common(p)
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    for _, dest, keys, _ in _OPTIONS:
        value = getattr(args, dest, None)
        if value is None:
            continue
        for key in keys:
            overrides[key] = value
    return overrides


def _load_config(args: argparse.Namespace) -> RunConfig:
    """
    Resolve the run configuration. A run_config.yaml already saved in the output
    directory sits beneath the --config file and flags, so later commands keep the
    settings earlier ones were run with.
    """
    overrides = _overrides(args)
    config = RunConfig(args.config, overrides=overrides)
    saved = Path(config.run.output_dir) / RUN_CONFIG_FILE
    if not saved.exists() or (args.config and saved.resolve() == Path(args.config).resolve()):
        return config
    return RunConfig(args.config, overrides=overrides, base_path=str(saved))


def _setup_logging(config: LoggingConfig) -> None:
    """Root logger from LoggingConfig; LOG_LEVEL / LOG_FORMAT override it."""
    level = os.getenv("LOG_LEVEL", config.level).upper()
    fmt = os.getenv("LOG_FORMAT", config.format)
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format=fmt)
    root = logging.getLogger()
    root.setLevel(getattr(logging, level, logging.INFO))
    if config.file_path:
        handler = logging.handlers.RotatingFileHandler(
            config.file_path, maxBytes=config.max_file_size, backupCount=config.backup_count
        )
        handler.setFormatter(logging.Formatter(fmt))
        root.addHandler(handler)
    log.debug("logging.configured level=%s file=%s", level, config.file_path)


def _output_dir(config: RunConfig) -> Path:
    out = Path(config.run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.save_config(str(out / RUN_CONFIG_FILE))
    return out


def _ingest(config: RunConfig, out: Path) -> Dataset:
    stats = AttachStats()
    dataset = load_league(
        config.run.data_dir, config.run.league, config.run.method,
        bookmakers=config.data.bookmakers, pattern=config.data.file_pattern,
        explicit=config.data.season_files or None, cap=config.data.rate_cap,
        workers=config.data.workers, stats=stats,
    )
    save_augmented(dataset, out / AUGMENTED_FILE)
    log.info("cli.ingested matches=%d teams=%d seasons=%d inversions=%d failed=%d",
             len(dataset), dataset.n_teams, len(dataset.seasons), stats.succeeded, stats.failed)
    return dataset


def _dataset(config: RunConfig, out: Path) -> Dataset:
    """Cached augmented dataset when it matches the configured method, else a fresh ingest."""
    path = out / AUGMENTED_FILE
    if path.exists():
        dataset = load_augmented(path)
        if dataset.method.value == config.run.method and dataset.bookmakers == config.data.bookmakers:
            return dataset
        log.info("cli.augmented_stale path=%s method=%s", path, dataset.method.value)
    return _ingest(config, out)


def _split(config: RunConfig, dataset: Dataset) -> Tuple[Dataset, Dataset]:
    test_season = config.run.test_season or max(dataset.seasons)
    return split_by_season(dataset, test_season)


def _forecaster(config: RunConfig, out: Path, dataset: Dataset) -> Forecaster:
    posterior = PosteriorDraws.load(out)
    return Forecaster(posterior, dataset.teams, config.prior, config.predict,
                      seed=config.run.seed, use_odds=config.run.use_test_odds)


def _posterior_summary(posterior: PosteriorDraws) -> pd.DataFrame:
    """Global scalars first, then the per-match weights and bookmaker-layer rates."""
    flat = posterior.flat()
    q = np.quantile(flat, [0.025, 0.25, 0.5, 0.75, 0.975], axis=0)
    scalars = pd.DataFrame({
        "name": posterior.names,
        "mean": flat.mean(axis=0),
        "sd": flat.std(axis=0, ddof=1) if flat.shape[0] > 1 else np.nan,
        "q2.5": q[0], "q25": q[1], "q50": q[2], "q75": q[3], "q97.5": q[4],
    })
    return pd.concat([scalars, posterior.match_summary()], ignore_index=True)


def cmd_convert(config: RunConfig, args: argparse.Namespace) -> None:
    out = _output_dir(config)
    frame = read_frame(args.input)
    table = convert_frame(frame, config.run.method, config.data.bookmakers)
    target = Path(args.output) if args.output else out / "probabilities.csv"
    table.to_csv(target, index=False, float_format=FLOAT_FORMAT)
    log.info("cli.converted input=%s rows=%d method=%s output=%s", args.input, len(table), config.run.method, target)


def cmd_ingest(config: RunConfig, args: argparse.Namespace) -> None:
    _ingest(config, _output_dir(config))


def cmd_fit(config: RunConfig, args: argparse.Namespace) -> None:
    out = _output_dir(config)
    dataset = _dataset(config, out)
    train, _ = _split(config, dataset)
    data = ModelData.from_dataset(train)
    sampler = config.sampler
    total = sampler.n_chains * sampler.n_retained
    rate_thin = max(sampler.rate_thin, math.ceil(total / config.predict.ppc_max_draws))
    posterior = run_sampler(data, config.prior, sampler, seed=config.sampler_seed,
                            away_intercept=config.run.away_intercept, rate_thin=rate_thin)
    posterior.save(out)
    report = posterior.report
    assert report is not None
    report.to_csv(out / "diagnostics.csv")
    _posterior_summary(posterior).to_csv(out / "posterior_summary.csv", index=False, float_format=FLOAT_FORMAT)
    if report.status is ConvergenceStatus.FAILED:
        raise ConvergenceFailure(f"Maximum R-hat {report.max_rhat:.4f} exceeds {sampler.rhat_fail}",
                                 max_rhat=round(report.max_rhat, 4), flagged=len(report.flagged))
    if report.status is ConvergenceStatus.WARNING:
        log.warning("cli.convergence_warning max_rhat=%.4f flagged=%d undefined=%d",
                    report.max_rhat, len(report.flagged), len(report.undefined))


def cmd_predict(config: RunConfig, args: argparse.Namespace) -> None:
    out = _output_dir(config)
    dataset = _dataset(config, out)
    _, test = _split(config, dataset)
    forecaster = _forecaster(config, out, dataset)
    fixtures = fixtures_from_dataset(test)
    forecasts = forecaster.forecast_all(fixtures)
    forecasts_frame(forecasts, fixtures).to_csv(out / "forecasts.csv", index=False, float_format=FLOAT_FORMAT)
    score_grids_frame(forecasts).to_csv(out / "score_grids.csv", index=False, float_format=FLOAT_FORMAT)


def cmd_simulate(config: RunConfig, args: argparse.Namespace) -> None:
    out = _output_dir(config)
    dataset = _dataset(config, out)
    _, test = _split(config, dataset)
    forecaster = _forecaster(config, out, dataset)
    simulation = simulate_season(forecaster, fixtures_from_dataset(test), config.predict.n_simulations,
                                 seed=config.run.seed)
    table = simulation.rank_table()
    table.to_csv(out / "rank_probabilities.csv", index=False, float_format=FLOAT_FORMAT)
    simulation.points_quantiles().to_csv(out / "points_quantiles.csv", index=False, float_format=FLOAT_FORMAT)
    leader = table.iloc[0]
    log.info("cli.simulated leader=%s p_first=%.4f", leader["team"], leader["rank_1"])


def cmd_ppc(config: RunConfig, args: argparse.Namespace) -> None:
    out = _output_dir(config)
    dataset = _dataset(config, out)
    train, _ = _split(config, dataset)
    posterior = PosteriorDraws.load(out)
    y_home, y_away = train.goals()
    replicated = replicate_scores(posterior, config.predict.ppc_max_draws, seed=config.run.seed)
    table = posterior_predictive_check(replicated, y_home, y_away, config.predict.statistics)
    table.to_csv(out / "ppc_pvalues.csv", index=False, float_format=FLOAT_FORMAT)
    goal_difference_table(replicated, y_home, y_away).to_csv(
        out / "ppc_goal_difference.csv", index=False, float_format=FLOAT_FORMAT)


def _model_forecasts(out: Path, n_matches: int) -> List[Optional[ProbTriple]]:
    path = out / "forecasts.csv"
    if not path.exists():
        raise MissingDraws(f"Model forecasts not found: {path}", recovery_suggestion="Run the predict command first",
                           path=str(path))
    frame = pd.read_csv(path, float_precision="round_trip")
    forecasts: List[Optional[ProbTriple]] = [None] * n_matches
    for row in frame.itertuples(index=False):
        forecasts[int(row.match)] = ProbTriple(p_win=row.p_win, p_draw=row.p_draw, p_loss=row.p_loss)
    return forecasts


def cmd_bet(config: RunConfig, args: argparse.Namespace) -> None:
    out = _output_dir(config)
    dataset = _dataset(config, out)
    _, test = _split(config, dataset)
    outcomes = [m.record.outcome for m in test.matches]
    sources: Dict[str, List[Optional[ProbTriple]]] = {
        method: bookmaker_forecasts(test.matches, method) for method in ("shin", "basic")
    }
    if config.betting.forecast_source == "model" or (out / "forecasts.csv").exists():
        sources = {"model": _model_forecasts(out, len(test)), **sources}
    forecasts = sources[config.betting.forecast_source]

    reports = []
    for name in config.betting.strategies:
        strategy = get_strategy(name, config.run.only_positive_ev)
        reports.append(backtest(forecasts, test, strategy, config.betting.bookmakers or None,
                                league=config.run.league))
    pd.concat([r.to_frame() for r in reports], ignore_index=True).to_csv(
        out / "backtest.csv", index=False, float_format=FLOAT_FORMAT)
    pd.concat([r.bets_frame() for r in reports], ignore_index=True).to_csv(
        out / "bets.csv", index=False, float_format=FLOAT_FORMAT)
    with open(out / "backtest.json", "w", encoding="utf-8") as f:
        json.dump({"forecast_source": config.betting.forecast_source,
                   "reports": [r.to_dict() for r in reports]}, f, indent=2, sort_keys=True)
    accuracy_table(sources, outcomes).to_csv(out / "accuracy.csv", index=False, float_format=FLOAT_FORMAT)


def cmd_synth(config: RunConfig, args: argparse.Namespace) -> None:
    _output_dir(config)
    league = generate_league(n_teams=args.teams, n_seasons=args.seasons, rounds=args.rounds,
                             n_bookmakers=args.bookmakers, seed=config.run.seed)
    league.write(config.run.data_dir, config.run.league)


COMMANDS: Dict[str, Callable[[RunConfig, argparse.Namespace], None]] = {
    "convert": cmd_convert,
    "ingest": cmd_ingest,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "simulate": cmd_simulate,
    "ppc": cmd_ppc,
    "bet": cmd_bet,
    "synth": cmd_synth,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        config = _load_config(args)
    except OddsModelError as e:
        print(f"error: {e}", file=sys.stderr)
        return int(e.exit_code)

    _setup_logging(config.logging)
    metrics = MetricsManager.get()
    metrics.enabled = config.metrics.enabled
    try:
        with metrics.track(args.command):
            COMMANDS[args.command](config, args)
        return int(ExitCode.SUCCESS)
    except OddsModelError as e:
        log_error(e)
        print(f"error: {e}", file=sys.stderr)
        return int(e.exit_code)
    finally:
        if config.metrics.enabled and config.metrics.export_path:
            metrics.export(config.metrics.export_path)


if __name__ == "__main__":
    sys.exit(main())
