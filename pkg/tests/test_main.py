"""Tests for invoking the package as a module."""

import json
import subprocess
import sys

from hparam_mapper import __version__


def test_module_version():
    """Running ``python -m hparam_mapper --version`` should print the version."""
    result = subprocess.run(  # noqa: S603
        [sys.executable, "-m", "hparam_mapper", "--version"],
        capture_output=True,
        text=True,
        check=True,
    )
    assert result.stdout.strip() == f"hparam-mapper {__version__}"


def test_module_config_show():
    """``config show`` prints the merged configuration as JSON on stdout."""
    result = subprocess.run(  # noqa: S603
        [sys.executable, "-m", "hparam_mapper", "--seed", "2", "config", "show"],
        capture_output=True,
        text=True,
        check=True,
    )
    assert json.loads(result.stdout)["seed"] == 2


def test_module_usage_error():
    """A missing command exits with the usage code."""
    result = subprocess.run(  # noqa: S603
        [sys.executable, "-m", "hparam_mapper"],
        capture_output=True,
        text=True,
        check=False,
    )
    assert result.returncode == 1
