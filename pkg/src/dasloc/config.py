"""Flat key=value experiment configs with `block.key` namespacing.

Example::

    scenario.n = 16
    scenario.k = 100
    scenario.gamma = 3.0
    scenario.seed = 1
    dataset.r = 8000
    dataset.feature_mode = magnitude
    dataset.seed = 2
    training.epochs = 150
    training.m = 6
    training.seed = 3
    evaluation.seeds = 1,2,3
    evaluation.methods = rsd,cg,random,full

Blank lines and lines starting with ``#`` are ignored.  Unknown keys,
duplicate keys, and malformed values are hard errors naming the exact line:
config drift never passes silently.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .channels import FEATURE_MODES, ScenarioConfig
from .errors import ConfigError
from .evaluation import METHODS
from .training import TrainConfig


@dataclass(frozen=True)
class EvalConfig:
    percentiles: tuple[float, ...] = (0.5, 0.9)
    grid_step: float = 2.0
    seeds: tuple[int, ...] = (1, 2, 3)
    methods: tuple[str, ...] = ("rsd", "cg", "random", "full")

    def __post_init__(self):
        if self.grid_step <= 0.0:
            raise ValueError("grid_step must be > 0")
        if not self.seeds:
            raise ValueError("need at least one evaluation seed")
        for p in self.percentiles:
            if not 0.0 < p <= 1.0:
                raise ValueError(f"percentile {p} outside (0, 1]")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig = ScenarioConfig()
    scenario_seed: int = 1
    dataset_r: int = 8000
    feature_mode: str = "magnitude"
    dataset_seed: int = 2
    dataset_workers: int = 1
    training: TrainConfig = TrainConfig()
    evaluation: EvalConfig = EvalConfig()


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "on", "yes", "1"):
        return True
    if lowered in ("false", "off", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_pairs(text: str) -> tuple[tuple[float, float], ...]:
    pairs = []
    for part in text.split(";"):
        xy = [float(v) for v in part.split(",")]
        if len(xy) != 2:
            raise ValueError(f"expected 'x,y' pairs separated by ';', got {part!r}")
        pairs.append((xy[0], xy[1]))
    return tuple(pairs)


def _choice(options) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"must be one of {', '.join(options)}; got {text!r}")
        return text
    return parse


def _roi(text: str) -> tuple[float, float, float, float]:
    values = [float(v) for v in text.split(",")]
    if len(values) != 4:
        raise ValueError("roi needs four values: xmin,xmax,ymin,ymax")
    return tuple(values)  # type: ignore[return-value]


def _center(text: str):
    if text.lower() == "auto":
        return None
    values = [float(v) for v in text.split(",")]
    if len(values) != 2:
        raise ValueError("circle_center needs 'x,y' or 'auto'")
    return (values[0], values[1])


# key -> (target, field, parser); targets name sub-configs of ExperimentConfig
_KEYS: dict[str, tuple[str, str, Callable[[str], object]]] = {
    "scenario.n": ("scenario", "n", int),
    "scenario.k": ("scenario", "k", int),
    "scenario.gamma": ("scenario", "gamma", float),
    "scenario.wavelength": ("scenario", "wavelength", float),
    "scenario.roi": ("scenario", "roi", _roi),
    "scenario.layout": ("scenario", "layout", _choice(("grid", "circle"))),
    "scenario.circle_diameter": ("scenario", "circle_diameter", float),
    "scenario.circle_center": ("scenario", "circle_center", _center),
    "scenario.cluster_means": ("scenario", "cluster_means", _parse_pairs),
    "scenario.cluster_spreads": ("scenario", "cluster_spreads", _parse_pairs),
    "scenario.spread_is_variance": ("scenario", "spread_is_variance", _parse_bool),
    "scenario.min_user_rrh_dist": ("scenario", "min_user_rrh_dist", float),
    "scenario.min_scatter_rrh_dist": ("scenario", "min_scatter_rrh_dist", float),
    "scenario.seed": ("", "scenario_seed", int),
    "dataset.r": ("", "dataset_r", int),
    "dataset.feature_mode": ("", "feature_mode", _choice(FEATURE_MODES)),
    "dataset.seed": ("", "dataset_seed", int),
    "dataset.workers": ("", "dataset_workers", int),
    "training.epochs": ("training", "epochs", int),
    "training.learning_rate": ("training", "learning_rate", float),
    "training.batch_size": ("training", "batch_size", int),
    "training.dropout": ("training", "dropout", float),
    "training.tau_start": ("training", "tau_start", float),
    "training.tau_end": ("training", "tau_end", float),
    "training.patience": ("training", "patience", int),
    "training.m": ("training", "m", int),
    "training.seed": ("training", "seed", int),
    "training.split_ratio": ("training", "split_ratio", float),
    "training.hidden_layers": ("training", "hidden_layers", int),
    "training.hidden_units": ("training", "hidden_units", int),
    "training.mc_passes": ("training", "mc_passes", int),
    "evaluation.percentiles": ("evaluation", "percentiles",
                               lambda s: tuple(float(v) for v in s.split(","))),
    "evaluation.grid_step": ("evaluation", "grid_step", float),
    "evaluation.seeds": ("evaluation", "seeds",
                         lambda s: tuple(int(v) for v in s.split(","))),
    "evaluation.methods": ("evaluation", "methods",
                           lambda s: tuple(v.strip() for v in s.split(","))),
}


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse and fully validate a config; any problem raises ConfigError with
    the offending file and line."""
    values: dict[str, tuple[str, object]] = {}  # key -> (location, parsed)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value', got {raw!r}")
        key, _, raw_value = line.partition("=")
        key = key.strip()
        raw_value = raw_value.strip()
        if key not in _KEYS:
            raise ConfigError(f"{where}: unknown key '{key}'")
        if key in values:
            raise ConfigError(f"{where}: duplicate key '{key}' "
                              f"(first set at {values[key][0]})")
        _, _, parser = _KEYS[key]
        try:
            parsed = parser(raw_value)
        except ValueError as exc:
            raise ConfigError(f"{where}: bad value for '{key}': {exc}") from exc
        values[key] = (where, parsed)

    blocks: dict[str, dict[str, object]] = {"": {}, "scenario": {}, "training": {},
                                            "evaluation": {}}
    for key, (_, parsed) in values.items():
        target, fieldname, _ = _KEYS[key]
        blocks[target][fieldname] = parsed
    try:
        return ExperimentConfig(
            scenario=ScenarioConfig(**blocks["scenario"]),
            training=TrainConfig(**blocks["training"]),
            evaluation=EvalConfig(**blocks["evaluation"]),
            **blocks[""],
        )
    except ValueError as exc:
        raise ConfigError(f"{source}: invalid configuration: {exc}") from exc


def read_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, source=str(path))


def override_seeds(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    """Point every seed in the config at one master value (CLI --seed)."""
    return dataclasses.replace(
        cfg,
        scenario_seed=seed,
        dataset_seed=seed,
        training=dataclasses.replace(cfg.training, seed=seed),
    )
