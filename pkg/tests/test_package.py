"""Tests for the package __init__ module."""

import doctest
import importlib
import re
from unittest.mock import patch

import hparam_mapper


def test_package_version():
    """Test that the package has a valid version string."""
    assert isinstance(hparam_mapper.__version__, str)
    assert re.match(r"^\d+\.\d+\.\d+", hparam_mapper.__version__)


def test_package_author():
    """Test that the package has an author string."""
    assert hparam_mapper.__author__ == "Diogo Ribeiro"


def test_package_exports():
    """Test that every name in ``__all__`` is exported."""
    assert isinstance(hparam_mapper.__all__, list)
    for name in ("encode_dataset", "lopt", "train_cn", "compute_p0"):
        assert name in hparam_mapper.__all__
    for name in hparam_mapper.__all__:
        assert hasattr(hparam_mapper, name)


def test_module_imports():
    """Test that all package imports work properly."""
    importlib.reload(hparam_mapper)

    from hparam_mapper import cli, config, logging, pipeline, serialization

    assert hasattr(config, "PipelineConfig")
    assert hasattr(pipeline, "run_prepare")
    assert hasattr(serialization, "load_model")
    assert hasattr(cli, "main")
    assert hasattr(logging, "logger")


def test_main_function():
    """Test the _main function that handles module execution."""
    with patch("hparam_mapper.cli.main", return_value=2) as mock_main:
        with patch("sys.exit") as mock_exit:
            hparam_mapper._main()
            mock_main.assert_called_once()
            mock_exit.assert_called_once_with(2)


def test_doctest_examples():
    """Test that the doctest examples in __init__ work correctly."""
    result = doctest.testmod(hparam_mapper)
    assert result.failed == 0
    assert result.attempted > 0
