"""Experiment configuration: INI-style files with strict key validation.

A config names a task, a model, training settings, the UQ evaluation grid,
and the set of methods to compare. Unknown sections or keys are errors so
typos fail fast instead of silently running defaults. A handful of presets
cover the desk-scale experiments; ``load_config`` accepts either a preset
name or a path.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import GmmTask, ImageTask, MnistTask
from .models import MlpArch
from .numerics import RngState
from .oracle import GmmSpec
from .training import TrainConfig
from .uq import shift_time_grid

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "parse_config",
    "load_config",
    "PRESETS",
    "KNOWN_METHODS",
]


class ConfigError(ValueError):
    pass


KNOWN_METHODS = ("tweedie-fm", "tweedie-onestep", "ensemble", "mc-dropout")

# every legal key, per section; parsing rejects anything else
_SCHEMA = {
    "experiment": {"out", "seed"},
    "task": {"kind", "side", "path", "subsample", "means", "sigma", "weights"},
    "model": {"hidden", "depth", "n_freq", "activation", "dropout"},
    "training": {"epochs", "batch_size", "learning_rate", "lr_schedule",
                 "weight_decay", "pairs_per_epoch", "objective"},
    "uq": {"t_grid", "probes", "epsilon"},
    "methods": {"use", "ensemble_members", "dropout_passes", "dropout_rate"},
}


@dataclass(frozen=True)
class ExperimentConfig:
    out: Path
    seed: int
    task_kind: str
    task_side: int
    task_path: str | None
    task_subsample: int
    gmm_means: tuple
    gmm_sigma: float
    gmm_weights: tuple | None
    hidden: int
    depth: int
    n_freq: int
    activation: str
    dropout: float
    training: TrainConfig
    t_grid: tuple
    probes: int
    epsilon: float
    methods: tuple
    ensemble_members: int
    dropout_passes: int
    dropout_rate: float

    def build_task(self):
        if self.task_kind == "gmm":
            spec = (GmmSpec.isotropic(self.gmm_means, self.gmm_sigma,
                                      self.gmm_weights)
                    if self.gmm_weights is not None else
                    GmmSpec.isotropic(self.gmm_means, self.gmm_sigma))
            return GmmTask(spec)
        if self.task_kind in ("bars", "blobs"):
            return ImageTask(self.task_kind, self.task_side)
        if self.task_kind == "mnist":
            if self.task_path is None:
                raise ConfigError("mnist task needs a path")
            return MnistTask(self.task_path, self.task_subsample)
        raise ConfigError(f"unknown task kind: {self.task_kind!r}")

    def build_arch(self, dim: int, dropout: float | None = None) -> MlpArch:
        return MlpArch(dim=dim, hidden=self.hidden, depth=self.depth,
                       n_freq=self.n_freq, activation=self.activation,
                       dropout=self.dropout if dropout is None else dropout)

    def train_config(self, seed: RngState | None = None,
                     objective: str | None = None) -> TrainConfig:
        cfg = self.training
        if seed is not None:
            cfg = dataclasses.replace(cfg, seed=seed)
        if objective is not None:
            cfg = dataclasses.replace(cfg, objective=objective)
        return cfg


def _floats(text: str) -> tuple:
    return tuple(float(tok) for tok in text.replace(",", " ").split())


def _mean_rows(text: str) -> tuple:
    rows = [r.strip() for r in text.split(";") if r.strip()]
    return tuple(_floats(r) for r in rows)


def parse_config(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(strict=True, interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as ex:
        raise ConfigError(f"malformed config: {ex}") from ex

    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section: [{section}]")
        for key in cp[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")

    def get(section, key, default=None):
        if cp.has_option(section, key):
            return cp.get(section, key)
        return default

    try:
        seed = int(get("experiment", "seed", "0"))
        out = Path(get("experiment", "out", "runs/out"))

        kind = get("task", "kind", "gmm")
        side = int(get("task", "side", "8"))
        path = get("task", "path")
        subsample = int(get("task", "subsample", "2048"))
        means = _mean_rows(get("task", "means", "0.5 0 ; 3.5 0"))
        sigma = float(get("task", "sigma", "0.15"))
        weights_txt = get("task", "weights")
        weights = _floats(weights_txt) if weights_txt else None

        training = TrainConfig(
            epochs=int(get("training", "epochs", "30")),
            batch_size=int(get("training", "batch_size", "128")),
            learning_rate=float(get("training", "learning_rate", "2e-4")),
            lr_schedule=get("training", "lr_schedule", "cosine"),
            weight_decay=float(get("training", "weight_decay", "0.01")),
            pairs_per_epoch=int(get("training", "pairs_per_epoch", "8192")),
            objective=get("training", "objective", "fm"),
            seed=RngState(seed),
        )

        raw_grid = _floats(get("uq", "t_grid", "0.3 0.5 0.7 0.9"))
        t_grid = shift_time_grid(raw_grid)
        probes = int(get("uq", "probes", "50"))
        epsilon = float(get("uq", "epsilon", "0.01"))

        methods = tuple(get("methods", "use",
                            " ".join(KNOWN_METHODS)).split())
        ensemble_members = int(get("methods", "ensemble_members", "5"))
        dropout_passes = int(get("methods", "dropout_passes", "50"))
        dropout_rate = float(get("methods", "dropout_rate", "0.15"))

        cfg = ExperimentConfig(
            out=out, seed=seed, task_kind=kind, task_side=side,
            task_path=path, task_subsample=subsample, gmm_means=means,
            gmm_sigma=sigma, gmm_weights=weights,
            hidden=int(get("model", "hidden", "128")),
            depth=int(get("model", "depth", "2")),
            n_freq=int(get("model", "n_freq", "8")),
            activation=get("model", "activation", "tanh"),
            dropout=float(get("model", "dropout", "0.0")),
            training=training, t_grid=t_grid, probes=probes, epsilon=epsilon,
            methods=methods, ensemble_members=ensemble_members,
            dropout_passes=dropout_passes, dropout_rate=dropout_rate,
        )
    except (ValueError, TypeError) as ex:
        if isinstance(ex, ConfigError):
            raise
        raise ConfigError(f"bad config value: {ex}") from ex

    _validate(cfg, base_dir)
    return cfg


def _validate(cfg: ExperimentConfig, base_dir: Path | None):
    if not cfg.t_grid or not all(0.0 < t < 1.0 for t in cfg.t_grid):
        raise ConfigError("t grid must lie inside (0, 1) after endpoint shift")
    if not np.all(np.diff(cfg.t_grid) > 0):
        raise ConfigError("t grid must be strictly increasing")
    for m in cfg.methods:
        if m not in KNOWN_METHODS:
            raise ConfigError(f"unknown method: {m!r}")
    if cfg.probes < 1:
        raise ConfigError("probe count must be positive")
    if not 0.0 < cfg.epsilon <= 0.1:
        raise ConfigError("epsilon must lie in (0, 0.1]")
    if cfg.ensemble_members < 2:
        raise ConfigError("ensemble needs at least 2 members")
    if cfg.dropout_passes < 2:
        raise ConfigError("mc-dropout needs at least 2 passes")
    if not 0.0 < cfg.dropout_rate < 1.0:
        raise ConfigError("dropout rate must lie in (0, 1)")
    if cfg.task_kind == "mnist":
        p = Path(cfg.task_path) if cfg.task_path else None
        if base_dir is not None and p is not None and not p.is_absolute():
            p = base_dir / p
        if p is None or not p.exists():
            raise ConfigError(f"mnist path does not exist: {cfg.task_path}")


PRESETS = {
    "gmm2d": """
[experiment]
out = runs/gmm2d
seed = 42

[task]
kind = gmm
means = 0.5 0 ; 3.5 0
sigma = 0.15

[uq]
t_grid = 0.3 0.5 0.7 0.9
probes = 50
epsilon = 0.01

[methods]
use = tweedie-fm tweedie-onestep ensemble mc-dropout
ensemble_members = 5
dropout_passes = 50
dropout_rate = 0.15
""",
    "bars8": """
[experiment]
out = runs/bars8
seed = 42

[task]
kind = bars
side = 8

[uq]
t_grid = 0.3 0.5 0.7 0.9
probes = 64
epsilon = 0.01

[methods]
use = tweedie-fm tweedie-onestep ensemble mc-dropout
ensemble_members = 5
dropout_passes = 50
dropout_rate = 0.15
""",
    "blobs8": """
[experiment]
out = runs/blobs8
seed = 42

[task]
kind = blobs
side = 8

[uq]
t_grid = 0.3 0.5 0.7 0.9
probes = 64
epsilon = 0.01

[methods]
use = tweedie-fm tweedie-onestep ensemble mc-dropout
ensemble_members = 5
dropout_passes = 50
dropout_rate = 0.15
""",
}


def load_config(name_or_path) -> ExperimentConfig:
    """Resolve a preset name or a config file path."""
    key = str(name_or_path)
    if key in PRESETS:
        return parse_config(PRESETS[key])
    p = Path(key)
    if p.exists():
        return parse_config(p.read_text(encoding="utf-8"), base_dir=p.parent)
    raise ConfigError(f"no such preset or config file: {key}")
