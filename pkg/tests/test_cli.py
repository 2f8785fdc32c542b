"""Tests for the CLI module."""

import csv
import json
from io import StringIO
from pathlib import Path
from types import SimpleNamespace
from unittest.mock import patch

import pytest

from hparam_mapper.cli import EXIT_ERROR, EXIT_USAGE, main, parse_args
from hparam_mapper.datasets import save_tabular
from hparam_mapper.errors import PipelineStageError
from hparam_mapper.synthetic import noisy_blobs


@pytest.fixture
def blob_csv(tmp_path):
    path = tmp_path / "blobs.csv"
    save_tabular(noisy_blobs(60, n_features=3, separation=4.0, seed=2), path)
    return path


@pytest.fixture
def quick_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"lopt": {"eval_budget": 12}, "output_dir": str(tmp_path / "run")}))
    return path


def test_parse_args_stages():
    """Test parsing the pipeline stage commands."""
    args = parse_args(["--seed", "3", "--out", "runs/a", "--workers", "2", "prepare"])
    assert args.command == "prepare"
    assert (args.seed, args.out, args.workers) == (3, "runs/a", 2)

    args = parse_args(["report", "--dest", "figures"])
    assert args.command == "report"
    assert args.dest == "figures"


def test_parse_args_predict_and_lopt():
    """Test parsing the single-dataset commands."""
    args = parse_args(["predict", "data.csv", "--model", "model.json"])
    assert (args.command, args.data, args.model) == ("predict", "data.csv", "model.json")

    args = parse_args(["lopt", "data.csv", "--start", '{"l2": 0.1}', "--trace", "t.csv"])
    assert args.command == "lopt"
    assert args.start == '{"l2": 0.1}'
    assert args.trace == "t.csv"
    assert args.model is None


def test_predict_requires_model():
    """Test that predict refuses to run without a model."""
    with pytest.raises(SystemExit), patch("sys.stderr", new=StringIO()):
        parse_args(["predict", "data.csv"])


def test_main_no_command():
    """Test main function with no command."""
    with patch("sys.stdout", new=StringIO()) as fake_out:
        result = main([])
        assert result == EXIT_USAGE
        assert "Error: Please specify a command" in fake_out.getvalue()


def test_main_config_show():
    """Test showing configuration via CLI."""
    with patch("sys.stdout", new=StringIO()) as fake_out:
        result = main(["--seed", "4", "config", "show"])
        assert result == 0
        shown = json.loads(fake_out.getvalue())
        assert shown["seed"] == 4
        assert "encoder" in shown


def test_main_config_save(tmp_path):
    """Test saving configuration via CLI."""
    config_file = tmp_path / "config.json"
    with patch("sys.stdout", new=StringIO()) as fake_out:
        result = main(["--budget", "25", "config", "save", str(config_file)])
        assert result == 0
        assert "Configuration saved to" in fake_out.getvalue()
    assert json.loads(config_file.read_text())["labeling"]["budget"] == 25


def test_main_config_without_subcommand():
    """Test the config command without a subcommand."""
    with patch("sys.stdout", new=StringIO()) as fake_out:
        assert main(["config"]) == EXIT_USAGE
        assert "config command" in fake_out.getvalue()


def test_main_bad_config_file(tmp_path):
    """Test that an unreadable config file fails the command."""
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with patch("sys.stderr", new=StringIO()) as fake_err:
        assert main(["--config", str(bad), "config", "show"]) == EXIT_ERROR
        assert "error[config]" in fake_err.getvalue()


def test_main_prepare(tmp_path):
    """Test that prepare reports what it produced."""
    prepared = SimpleNamespace(examples=[1, 2, 3], root=tmp_path / "prepare")
    with (
        patch("hparam_mapper.cli.run_prepare", return_value=prepared) as mock_prepare,
        patch("sys.stdout", new=StringIO()) as fake_out,
    ):
        result = main(["--out", str(tmp_path), "--seed", "8", "prepare"])
    assert result == 0
    assert "Prepared 3 datasets" in fake_out.getvalue()
    config = mock_prepare.call_args[0][0]
    assert config.seed == 8
    assert config.output_dir == Path(tmp_path)


def test_main_stage_failure_names_stage(tmp_path):
    """Test that a failing stage exits with code 2 and names the stage."""
    failure = PipelineStageError("prepare", "no prepared artifacts")
    with (
        patch("hparam_mapper.cli.run_train", side_effect=failure),
        patch("sys.stderr", new=StringIO()) as fake_err,
    ):
        result = main(["--out", str(tmp_path), "train"])
    assert result == EXIT_ERROR
    assert fake_err.getvalue().startswith("error[prepare]: ")


def test_main_report_before_evaluate(tmp_path):
    """Test that report needs an evaluation first."""
    with patch("sys.stderr", new=StringIO()) as fake_err:
        assert main(["--out", str(tmp_path), "report"]) == EXIT_ERROR
        assert "error[report]" in fake_err.getvalue()


def test_main_predict_with_missing_model(tmp_path, blob_csv):
    """Test predicting with a model file that does not exist."""
    with patch("sys.stderr", new=StringIO()) as fake_err:
        result = main(["predict", str(blob_csv), "--model", str(tmp_path / "none.json")])
        assert result == EXIT_ERROR
        assert "error[predict]" in fake_err.getvalue()


@pytest.mark.parametrize("extra", [[], ["--start", "{}", "--model", "m.json"]])
def test_main_lopt_needs_one_start(blob_csv, extra):
    """Test that lopt needs exactly one of --model and --start."""
    with patch("sys.stdout", new=StringIO()) as fake_out:
        assert main(["lopt", str(blob_csv), *extra]) == EXIT_USAGE
        assert "exactly one" in fake_out.getvalue()


def test_main_lopt_from_start(tmp_path, blob_csv, quick_config):
    """Test refining an explicit start vector and tracing the search."""
    start = json.dumps({"learning_rate": 0.01, "l2": 0.1, "epochs": 20})
    trace = tmp_path / "trace.csv"
    argv = ["--config", str(quick_config), "lopt", str(blob_csv), "--start", start]
    with patch("sys.stdout", new=StringIO()) as fake_out:
        result = main([*argv, "--trace", str(trace)])
    assert result == 0
    out = json.loads(fake_out.getvalue())
    assert out["start"]["epochs"] == 20
    assert out["accuracy"] >= out["initial_accuracy"]
    assert out["evaluations"] <= 12
    with open(trace, newline="") as handle:
        assert len(list(csv.reader(handle))) == out["evaluations"] + 1


def test_main_lopt_out_of_bounds_start(blob_csv):
    """Test that an out-of-bounds start vector is reported, not clamped."""
    start = json.dumps({"learning_rate": 5.0, "l2": 0.1, "epochs": 20})
    with patch("sys.stderr", new=StringIO()) as fake_err:
        assert main(["lopt", str(blob_csv), "--start", start]) == EXIT_ERROR
        assert "learning_rate" in fake_err.getvalue()
