"""Tests for the config module."""

import json
import os
from pathlib import Path
from tempfile import NamedTemporaryFile, TemporaryDirectory
from unittest.mock import patch

import pytest

from hparam_mapper.config import CONFIG_ENV_VAR, DEFAULT_CONFIG, PipelineConfig
from hparam_mapper.errors import ConfigError


def test_config_defaults():
    """Test default configuration values."""
    config = PipelineConfig(use_env=False)
    assert config.seed == DEFAULT_CONFIG["seed"]
    assert config.workers == 1
    assert config.corpus_path is None
    assert config.labeling_budget == DEFAULT_CONFIG["labeling"]["budget"]
    assert config.encoder_spec().variant == "table_npe"
    assert config.cn_config().train.clip_norm is not None
    assert config.environment().names == ("learning_rate", "l2", "epochs")


def test_nested_sections_merge():
    """Test that a partial section keeps the defaults it does not name."""
    config = PipelineConfig.from_dict({"encoder": {"train": {"epochs": 3}}})
    encoder = config.encoder_spec()
    assert encoder.train.epochs == 3
    assert encoder.train.learning_rate == DEFAULT_CONFIG["encoder"]["train"]["learning_rate"]
    assert encoder.bottleneck_dim == DEFAULT_CONFIG["encoder"]["bottleneck_dim"]


@pytest.mark.parametrize(
    "doc",
    [
        {"colour": "blue"},
        {"seed": -1},
        {"workers": 0},
        {"encoder": {"variant": "graph_npe"}},
        {"core_network": {"train": {"clip_norm": None}}},
        {"environment": {"kind": "svm"}},
        {"sampling": {"delta": 1.5}},
        {"labeling": {"budget": 2}},
    ],
)
def test_config_validation(doc):
    """Test that invalid sections are rejected."""
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict(doc)


def test_config_as_dict():
    """Test converting config to dictionary."""
    config = PipelineConfig(use_env=False)
    config_dict = config.as_dict()

    # Check it's a copy, not the original
    assert config_dict is not config._config
    config_dict["synthetic"]["n_rows"] = -5
    assert config.as_dict()["synthetic"]["n_rows"] == DEFAULT_CONFIG["synthetic"]["n_rows"]


def test_config_load_from_file():
    """Test loading configuration from file."""
    with NamedTemporaryFile(mode="w", suffix=".json", delete=False) as tmp:
        json.dump({"seed": 5, "lopt": {"epsilon": 0.2}}, tmp)

    try:
        config = PipelineConfig(Path(tmp.name))
        assert config.seed == 5
        assert config.lopt_config().epsilon == 0.2
        assert config.lopt_config().max_sweeps == DEFAULT_CONFIG["lopt"]["max_sweeps"]
        assert config.path == Path(tmp.name)
    finally:
        os.unlink(tmp.name)


def test_config_load_from_env():
    """Test loading configuration from environment variable."""
    with NamedTemporaryFile(mode="w", suffix=".json", delete=False) as tmp:
        json.dump({"output_dir": "runs/env"}, tmp)

    try:
        with patch.dict(os.environ, {CONFIG_ENV_VAR: tmp.name}):
            config = PipelineConfig()
            assert config.output_dir == Path("runs/env")
            assert PipelineConfig(use_env=False).output_dir == Path(DEFAULT_CONFIG["output_dir"])
    finally:
        os.unlink(tmp.name)


def test_config_invalid_file():
    """Test that an unreadable config file is an error, not a silent default."""
    with NamedTemporaryFile(mode="w", suffix=".json", delete=False) as tmp:
        tmp.write("This is not valid JSON")

    try:
        with pytest.raises(ConfigError):
            PipelineConfig(Path(tmp.name))
    finally:
        os.unlink(tmp.name)

    with pytest.raises(ConfigError):
        PipelineConfig(Path(tmp.name))


def test_with_overrides():
    """Test command-line overrides."""
    config = PipelineConfig(use_env=False)
    updated = config.with_overrides(seed=9, output_dir="elsewhere", budget=50, workers=4)
    assert (updated.seed, updated.labeling_budget, updated.workers) == (9, 50, 4)
    assert updated.output_dir == Path("elsewhere")
    assert config.seed == DEFAULT_CONFIG["seed"]


def test_config_hash():
    """Test that only result-relevant settings change the hash."""
    config = PipelineConfig(use_env=False)
    assert config.with_overrides(workers=3, output_dir="x").config_hash() == config.config_hash()
    assert config.with_overrides(seed=1).config_hash() != config.config_hash()


def test_config_save():
    """Test saving configuration to file."""
    with TemporaryDirectory() as tmp_dir:
        config_path = Path(tmp_dir) / "config.json"
        config = PipelineConfig.from_dict({"seed": 11})
        config.save_config(config_path)

        with open(config_path) as f:
            saved_config = json.load(f)

        assert saved_config["seed"] == 11
        assert PipelineConfig(config_path).config_hash() == config.config_hash()


def test_config_save_to_current_path():
    """Test saving to the current config path."""
    with TemporaryDirectory() as tmp_dir:
        config_path = Path(tmp_dir) / "config.json"
        config_path.write_text(json.dumps({"workers": 2}))

        config = PipelineConfig(config_path)
        config.with_overrides(seed=3).save_config()

        with open(config_path) as f:
            saved_config = json.load(f)

        assert saved_config["seed"] == 3
        assert saved_config["workers"] == 2


def test_config_save_without_path():
    """Test that a config with no source file needs an explicit path."""
    with pytest.raises(ConfigError):
        PipelineConfig(use_env=False).save_config()
