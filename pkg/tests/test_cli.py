import json

import pandas as pd
import pytest
import yaml

from odds_bayes.cli import build_parser, main

FAST = ["--iterations", "60", "--burnin", "20", "--chains", "2", "--seed", "3"]


@pytest.fixture
def workspace(tmp_path):
    data = tmp_path / "data"
    out = tmp_path / "out"
    common = ["--data-dir", str(data), "--output-dir", str(out), "--league", "SYN"]
    assert main(["synth", "--teams", "4", "--seasons", "3", *common, "--seed", "11"]) == 0
    return tmp_path, common


def test_usage_errors_exit_one(capsys):
    assert main(["fit", "--method", "power"]) == 1
    assert main(["no-such-command"]) == 1
    assert "error" in capsys.readouterr().err


def test_version(capsys):
    with pytest.raises(SystemExit) as info:
        build_parser().parse_args(["--version"])
    assert info.value.code == 0
    assert "odds-bayes" in capsys.readouterr().out


def test_bad_config_file_exits_one(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("sampler:\n  bogus: 1\n")
    assert main(["ingest", "--config", str(path)]) == 1


def test_missing_data_exits_two(tmp_path):
    assert main(["ingest", "--data-dir", str(tmp_path / "none"), "--output-dir", str(tmp_path / "out")]) == 2


def test_predict_before_fit_exits_two(workspace):
    _, common = workspace
    assert main(["predict", *common]) == 2


def test_synth_writes_season_files(workspace):
    tmp_path, _ = workspace
    assert sorted(p.name for p in (tmp_path / "data").iterdir()) == ["SYN_01.csv", "SYN_02.csv", "SYN_03.csv"]


def test_convert(workspace):
    tmp_path, common = workspace
    target = tmp_path / "probs.csv"
    assert main(["convert", str(tmp_path / "data" / "SYN_01.csv"), "--output", str(target),
                 "--method", "basic", *common]) == 0
    table = pd.read_csv(target)
    assert len(table) == 12 * 3
    assert ((table["p_win"] + table["p_draw"] + table["p_loss"]) - 1.0).abs().max() < 1e-12


def test_bet_without_forecasts_exits_two(workspace):
    tmp_path, common = workspace
    assert main(["ingest", *common]) == 0
    assert main(["bet", *common]) == 2
    assert main(["bet", "--forecast-source", "shin", *common]) == 0
    table = pd.read_csv(tmp_path / "out" / "accuracy.csv")
    assert set(table["source"]) == {"shin", "basic"}


def test_full_pipeline(workspace):
    tmp_path, common = workspace
    out = tmp_path / "out"
    assert main(["ingest", *common]) == 0
    assert (out / "augmented.csv").exists()

    # a short fit may not converge; its draws are written either way
    assert main(["fit", *common, *FAST]) in (0, 3)
    for name in ("draws.csv", "rate_draws.npz", "match_means.csv", "fit_meta.yaml",
                 "diagnostics.csv", "posterior_summary.csv"):
        assert (out / name).exists(), name
    summary = pd.read_csv(out / "posterior_summary.csv")
    assert {"mu", "p_home[0]", "lambda_away[0]"} <= set(summary["name"])
    saved = yaml.safe_load((out / "run_config.yaml").read_text())
    assert saved["sampler"]["n_iterations"] == 60
    assert saved["run"]["seed"] == 3

    assert main(["predict", *common, "--max-draws", "50"]) == 0
    forecasts = pd.read_csv(out / "forecasts.csv")
    assert len(forecasts) == 12
    assert set(forecasts["season"]) == {3}
    assert ((forecasts["p_win"] + forecasts["p_draw"] + forecasts["p_loss"]) - 1.0).abs().max() < 1e-9
    assert (out / "score_grids.csv").exists()

    assert main(["simulate", *common, "--simulations", "300"]) == 0
    ranks = pd.read_csv(out / "rank_probabilities.csv")
    assert len(ranks) == 4
    assert ranks["rank_1"].sum() == pytest.approx(1.0)
    assert (out / "points_quantiles.csv").exists()

    assert main(["ppc", *common]) == 0
    pvalues = pd.read_csv(out / "ppc_pvalues.csv")
    assert list(pvalues["statistic"])[0] == "mean_goal_difference"
    assert (out / "ppc_goal_difference.csv").exists()

    assert main(["bet", *common, "--strategy", "A", "--strategy", "B"]) == 0
    backtest = pd.read_csv(out / "backtest.csv")
    assert set(backtest["strategy"]) == {"A", "B"}
    assert set(backtest["league"]) == {"SYN"}
    summary = json.loads((out / "backtest.json").read_text())
    assert summary["forecast_source"] == "model"
    accuracy = pd.read_csv(out / "accuracy.csv")
    assert list(accuracy["source"]) == ["model", "shin", "basic"]


def test_metrics_export(workspace):
    tmp_path, common = workspace
    path = tmp_path / "metrics.prom"
    config = tmp_path / "run.yaml"
    config.write_text(yaml.safe_dump({"metrics": {"export_path": str(path)}}))
    assert main(["ingest", "--config", str(config), *common]) == 0
    assert "odds_stage_runs_total" in path.read_text()


def test_later_commands_keep_earlier_settings(workspace):
    tmp_path, common = workspace
    out = tmp_path / "out"
    assert main(["fit", *common, *FAST]) in (0, 3)
    assert main(["predict", *common, "--max-draws", "50"]) == 0
    saved = yaml.safe_load((out / "run_config.yaml").read_text())
    assert saved["sampler"]["n_iterations"] == 60
    assert saved["sampler"]["n_chains"] == 2
    assert saved["run"]["seed"] == 3
    assert saved["predict"]["max_draws"] == 50


def test_rerun_from_saved_config_is_identical(workspace):
    tmp_path, common = workspace
    first = tmp_path / "out"
    assert main(["ingest", *common]) == 0
    fitted = main(["fit", *common, *FAST])
    assert fitted in (0, 3)
    assert main(["predict", *common, "--max-draws", "50"]) == 0
    assert main(["bet", *common]) == 0

    second = tmp_path / "rerun"
    saved = ["--config", str(first / "run_config.yaml"), "--output-dir", str(second)]
    assert main(["fit", *saved]) == fitted
    assert main(["predict", *saved]) == 0
    assert main(["bet", *saved]) == 0
    for name in ("draws.csv", "match_means.csv", "forecasts.csv", "backtest.csv", "bets.csv", "accuracy.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes(), name
