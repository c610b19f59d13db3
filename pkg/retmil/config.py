"""
User level settings (retmil.ini, logging) and run configuration files.

A run configuration is one JSON document:

    {
      "name": "desk",
      "precision": "f64",
      "seed": 0,
      "workers": 1,
      "model": {"d": 64, "heads": 4, "subseq_len": 64, ...},
      "train": {"lr": 0.0001, "max_epochs": 100, ...},
      "synthetic": {...},
      "bench": {...},
      "paths": {"manifest": "data/manifest.json", "output_dir": "runs/desk"}
    }

All sections are optional. Unknown keys anywhere are an error, so typos
don't silently fall back to defaults.
"""

import configparser
from dataclasses import dataclass, field, fields, replace
import json
import logging
from pathlib import Path
from typing import Optional

from appdirs import AppDirs

from .bench import BenchConfig
from .errors import ConfigError
from .model import ModelConfig
from .synthetic import SyntheticTaskConfig
from .tensor import PRECISIONS
from .train import TrainConfig


retmil_dirs = AppDirs("retmil")

CONFIG_HOME = Path(retmil_dirs.user_config_dir)
CONFIG_FILE = CONFIG_HOME / "retmil.ini"
CACHE_DIR = Path(retmil_dirs.user_cache_dir)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def load_config(log_level=None):
    "Read retmil.ini, if any, and set up logging. An explicit log_level wins."
    config_file = configparser.ConfigParser()
    config_file.read(CONFIG_FILE)
    settings = {}

    level = log_level
    if level is None and "logging" in config_file:
        level = config_file["logging"].get("level", "INFO")
    level = (level or "INFO").upper()
    if not isinstance(getattr(logging, level, None), int):
        raise ConfigError(f"Unknown log level {level!r}")
    logging.basicConfig(level=getattr(logging, level), format=LOG_FORMAT)
    settings["log_level"] = level

    if "defaults" in config_file:
        workers = config_file["defaults"].get("workers")
        if workers is not None:
            settings["workers"] = int(workers)
    return settings


def get_run_dir(name):
    "Default output directory for a named run, below the user cache."
    path = CACHE_DIR / "runs" / name
    path.mkdir(parents=True, exist_ok=True)
    return path


@dataclass(frozen=True)
class PathsConfig:
    manifest: Optional[str] = None
    output_dir: Optional[str] = None


@dataclass(frozen=True)
class RunConfig:

    name: str = "run"
    precision: str = "f32"
    seed: int = 0
    workers: int = 1
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synthetic: SyntheticTaskConfig = field(default_factory=SyntheticTaskConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def __post_init__(self):
        if self.precision not in PRECISIONS:
            raise ConfigError(f"Unknown precision {self.precision!r}, expected one of {sorted(PRECISIONS)}")
        if self.workers < 1:
            raise ConfigError(f"workers must be at least 1, got {self.workers}")

    def output_dir(self):
        if self.paths.output_dir:
            path = Path(self.paths.output_dir)
            path.mkdir(parents=True, exist_ok=True)
            return path
        return get_run_dir(self.name)

    def with_overrides(self, precision=None, seed=None, workers=None):
        """
        Apply command line flags, which win over the file. A seed flag
        replaces the seed of every section that has one.
        """
        config = self
        if precision is not None:
            config = replace(config, precision=precision)
        if workers is not None:
            config = replace(config, workers=workers)
        if seed is not None:
            config = replace(config, seed=seed,
                             train=replace(config.train, seed=seed),
                             synthetic=replace(config.synthetic, seed=seed),
                             bench=replace(config.bench, seed=seed))
        return config


SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "synthetic": SyntheticTaskConfig,
    "bench": BenchConfig,
    "paths": PathsConfig,
}


def _section(cls, data, name, defaults=None):
    if not isinstance(data, dict):
        raise ConfigError(f"Section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"Unknown key(s) in {name!r}: {', '.join(sorted(unknown))}")
    try:
        return cls(**{**(defaults or {}), **data})
    except TypeError as e:
        raise ConfigError(f"Bad values in {name!r}: {e}")


def run_config_from_dict(data):
    if not isinstance(data, dict):
        raise ConfigError("A run configuration must be a JSON object")
    top_level = {"name", "precision", "seed", "workers"}
    unknown = set(data) - top_level - set(SECTIONS)
    if unknown:
        raise ConfigError(f"Unknown configuration key(s): {', '.join(sorted(unknown))}")
    values = {key: data[key] for key in top_level if key in data}
    # The top level seed is the default for every section that has one.
    seeded = {"seed": data["seed"]} if "seed" in data else {}
    for name, cls in SECTIONS.items():
        if name in data:
            defaults = seeded if "seed" in {f.name for f in fields(cls)} else None
            values[name] = _section(cls, data[name], name, defaults)
        elif seeded and "seed" in {f.name for f in fields(cls)}:
            values[name] = cls(**seeded)
    return RunConfig(**values)


def load_run_config(path):
    path = Path(path)
    try:
        with open(path) as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"Configuration file {path} does not exist")
    except json.JSONDecodeError as e:
        raise ConfigError(f"Configuration file {path} is not valid JSON: {e}")
    return run_config_from_dict(data)
