"""Pipeline configuration.

A configuration is a JSON document of sections merged over
:data:`DEFAULT_CONFIG`. The file is named explicitly or through the
``HPARAM_MAPPER_CONFIG`` environment variable; a named file that cannot be
read or parsed is an error rather than a silent fall-back to defaults.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from collections.abc import Mapping
from dataclasses import asdict
from pathlib import Path
from typing import Any, cast

from .core_network import CnConfig
from .environments import TOY_LEARNERS, Environment, toy_learner_env
from .errors import ConfigError
from .lopt import LoptConfig
from .npe import EncoderSpec

CONFIG_ENV_VAR = "HPARAM_MAPPER_CONFIG"

DEFAULT_CONFIG: dict[str, Any] = {
    "seed": 0,
    "corpus": None,
    "synthetic": {
        "n_datasets": 30,
        "n_rows": 120,
        "n_features": 4,
        "n_classes": 2,
        "noise_range": [0.0, 0.4],
        "separation": 3.0,
    },
    "sampling": {
        "subset_size": 60,
        "min_subsets": 20,
        "delta": 0.5,
        "m": None,
        "margin": 1.0,
    },
    "encoder": EncoderSpec().to_dict(),
    "environment": {"kind": "ridge_logistic", "seed": 0},
    "labeling": {"budget": 40},
    "core_network": CnConfig().to_dict(),
    "lopt": asdict(LoptConfig()),
    "evaluation": {
        "split_ratio": 0.9,
        "meta_split_ratio": 0.9,
        "baseline_budget": None,
    },
    "workers": 1,
    "output_dir": "hparam-mapper-run",
}

# Keys that do not change any result; left out of the config hash.
_UNHASHED = ("workers", "output_dir")


def _merge_section(base: dict[str, Any], update: Mapping[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in update.items():
        if isinstance(merged.get(key), dict) and isinstance(value, Mapping):
            merged[key] = _merge_section(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _merge(base: dict[str, Any], update: Mapping[str, Any]) -> dict[str, Any]:
    """Merge ``update`` over ``base`` recursively; top-level keys must exist."""
    unknown = sorted(set(update) - set(base))
    if unknown:
        raise ConfigError(f"unknown configuration key '{unknown[0]}'")
    return _merge_section(copy.deepcopy(base), update)


class PipelineConfig:
    """Configuration of a pipeline run.

    Examples:
        >>> cfg = PipelineConfig()
        >>> cfg.seed
        0
        >>> cfg.with_overrides(seed=7).seed
        7
        >>> cfg.encoder_spec().variant
        'table_npe'
    """

    def __init__(
        self,
        config_path: Path | str | None = None,
        overrides: Mapping[str, Any] | None = None,
        *,
        use_env: bool = True,
    ) -> None:
        """Load defaults, then the config file, then ``overrides``.

        Args:
            config_path: JSON file to merge over the defaults. When ``None``,
                ``HPARAM_MAPPER_CONFIG`` is consulted.
            overrides: Sections merged last.
            use_env: Whether to consult the environment variable.

        Raises:
            ConfigError: If a named file cannot be read or the merged
                configuration is invalid.
        """
        self._config: dict[str, Any] = copy.deepcopy(DEFAULT_CONFIG)
        env_path = os.environ.get(CONFIG_ENV_VAR) if use_env else None
        self._config_path: Path | None = (
            Path(config_path) if config_path else (Path(env_path) if env_path else None)
        )
        if self._config_path is not None:
            self._config = _merge(self._config, self._read(self._config_path))
        if overrides:
            self._config = _merge(self._config, overrides)
        self.validate()

    @staticmethod
    def _read(path: Path) -> Mapping[str, Any]:
        try:
            with open(path) as f:
                doc = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load configuration {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"configuration {path} must hold a JSON object")
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> PipelineConfig:
        return cls(config_path=None, overrides=doc, use_env=False)

    def validate(self) -> None:
        """Build every typed view once.

        Raises:
            ConfigError: Naming the first invalid section.
        """
        checks = {
            "encoder": self.encoder_spec,
            "core_network": self.cn_config,
            "lopt": self.lopt_config,
            "environment": self.environment,
            "sampling": self.sampling_plan_args,
            "synthetic": self.synthetic_args,
        }
        for section, build in checks.items():
            try:
                build()
            except (TypeError, ValueError, KeyError) as exc:
                raise ConfigError(f"invalid '{section}' section: {exc}") from exc
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigError("workers must be a positive integer")
        if self.labeling_budget < len(self.environment().specs) + 1:
            raise ConfigError("labeling budget must exceed the number of hyperparameters")

    @property
    def path(self) -> Path | None:
        return self._config_path

    @property
    def seed(self) -> int:
        return cast(int, self._config["seed"])

    @property
    def workers(self) -> int:
        return cast(int, self._config["workers"])

    @property
    def output_dir(self) -> Path:
        return Path(self._config["output_dir"])

    @property
    def corpus_path(self) -> Path | None:
        corpus = self._config["corpus"]
        return Path(corpus) if corpus else None

    @property
    def labeling_budget(self) -> int:
        return int(self._config["labeling"]["budget"])

    @property
    def evaluation(self) -> dict[str, Any]:
        return dict(self._config["evaluation"])

    def sampling_plan_args(self) -> dict[str, Any]:
        """Sampling section with ``k`` for ``min_subsets``.

        Keys: ``subset_size``, ``k``, ``delta``, ``margin`` and ``m`` (an
        explicit draw count, or ``None`` to plan one).
        """
        s = self._config["sampling"]
        args = {
            "subset_size": int(s["subset_size"]),
            "k": int(s["min_subsets"]),
            "delta": float(s["delta"]),
            "margin": float(s["margin"]),
            "m": None if s["m"] is None else int(s["m"]),
        }
        if args["subset_size"] < 1 or args["k"] < 1:
            raise ValueError("subset_size and min_subsets must be positive")
        if not 0.0 < args["delta"] < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if args["m"] is not None and args["m"] < args["k"]:
            raise ValueError("an explicit m must be at least min_subsets")
        return args

    def synthetic_args(self) -> dict[str, Any]:
        s = dict(self._config["synthetic"])
        s["noise_range"] = tuple(float(v) for v in s["noise_range"])
        if len(s["noise_range"]) != 2:
            raise ValueError("noise_range needs two values")
        return s

    def encoder_spec(self) -> EncoderSpec:
        return EncoderSpec.from_dict(self._config["encoder"])

    def cn_config(self) -> CnConfig:
        return CnConfig.from_dict(self._config["core_network"])

    def lopt_config(self) -> LoptConfig:
        return LoptConfig(**self._config["lopt"])

    def environment(self) -> Environment:
        env = self._config["environment"]
        if env["kind"] not in TOY_LEARNERS:
            raise ValueError(f"unknown environment kind '{env['kind']}'")
        return toy_learner_env(env["kind"], seed=int(env.get("seed", 0)))

    def with_overrides(
        self,
        seed: int | None = None,
        output_dir: Path | str | None = None,
        budget: int | None = None,
        workers: int | None = None,
    ) -> PipelineConfig:
        """Copy with command-line overrides applied.

        ``budget`` sets the labeling budget.
        """
        update: dict[str, Any] = {}
        if seed is not None:
            update["seed"] = seed
        if output_dir is not None:
            update["output_dir"] = str(output_dir)
        if budget is not None:
            update["labeling"] = {"budget": budget}
        if workers is not None:
            update["workers"] = workers
        updated = PipelineConfig.from_dict(_merge(self._config, update))
        updated._config_path = self._config_path
        return updated

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON of every result-relevant setting."""
        doc = {k: v for k, v in self._config.items() if k not in _UNHASHED}
        payload = json.dumps(doc, sort_keys=True, default=str)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def save_config(self, path: Path | str | None = None) -> None:
        """Write the merged configuration as JSON.

        Args:
            path: Target file, defaulting to the file the config was read from.

        Raises:
            ConfigError: If neither ``path`` nor a source file is known.
        """
        save_path = Path(path) if path else self._config_path
        if save_path is None:
            raise ConfigError("no path to save the configuration to")
        with open(save_path, "w") as f:
            json.dump(self._config, f, indent=2)

    def as_dict(self) -> dict[str, Any]:
        """Deep copy of the merged configuration."""
        return copy.deepcopy(self._config)
