"""Experiment configuration: YAML files and the built-in presets.

Unknown keys are errors.  Numeric fields accept YAML numbers or numeric strings
(PyYAML reads ``1e-6`` without a decimal point as a string).
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from ..model_core import Environment, MarketParams, PenaltyParams, TimeGrid
from ..trainers.loop import ALGORITHMS, TrainConfig

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "PRESETS", "BASELINE_POLICIES"]

PRESETS = ("env1", "env2")
BASELINE_POLICIES = ("twap", "closed-form")

# YAML name -> dataclass field, where they differ
_MARKET_KEYS = {"lambda": "lam"}


_SCALARS = {"float": float, "int": int, "bool": bool, "str": str}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    env: Environment
    train: TrainConfig
    per_algorithm: dict = field(default_factory=dict)
    seeds: tuple = (0,)
    out: Path = Path("runs")
    eval_per_epoch: int = 5
    eval_final: int = 100
    checkpoint_every: int = 0
    name: str = "custom"

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("run.seeds: must be non-empty")
        if self.eval_per_epoch < 1 or self.eval_final < 1:
            raise ConfigError("run.eval_per_epoch/eval_final: must be >= 1")
        if self.checkpoint_every < 0:
            raise ConfigError("run.checkpoint_every: must be >= 0")

    def with_algorithm(self, algorithm: str) -> "ExperimentConfig":
        """Copy with ``algorithm`` selected and its per-algorithm rates applied."""
        if algorithm in BASELINE_POLICIES:
            return self  # nothing to train
        if algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm: unknown {algorithm!r}")
        overrides = self.per_algorithm.get(algorithm, {})
        return dataclasses.replace(self, train=dataclasses.replace(self.train, algorithm=algorithm, **overrides))

    def with_overrides(self, seeds=None, epochs=None, out=None) -> "ExperimentConfig":
        cfg = self
        if seeds is not None:
            cfg = dataclasses.replace(cfg, seeds=tuple(seeds))
        if epochs is not None:
            cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, epochs=int(epochs)))
        if out is not None:
            cfg = dataclasses.replace(cfg, out=Path(out))
        return cfg


def _coerce(value, typ, where):
    if typ in (float, int) and isinstance(value, str):
        try:
            value = float(value)
        except ValueError:
            raise ConfigError(f"{where}: expected a number, got {value!r}") from None
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return int(value)
    if typ is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if typ is str:
        return str(value)
    return value


def _build(cls, data, section, rename=None):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{section}: expected a mapping")
    rename = rename or {}
    types = {f.name: f.type for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        name = rename.get(key, key)
        # the dataclass name behind a YAML alias is not itself a valid key
        if name not in types or (name in rename.values() and key not in rename):
            raise ConfigError(f"{section}.{key}: unknown key")
        typ = _SCALARS.get(getattr(types[name], "__name__", types[name]))
        kwargs[name] = _coerce(value, typ, f"{section}.{key}")
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{section}.{exc}") from None


def _rates(data, section):
    out = {}
    for algo, block in (data or {}).items():
        if algo not in ALGORITHMS:
            raise ConfigError(f"{section}.{algo}: unknown algorithm")
        if not isinstance(block, dict):
            raise ConfigError(f"{section}.{algo}: expected a mapping")
        allowed = {f.name for f in dataclasses.fields(TrainConfig)} - {"algorithm", "seed", "env_tag"}
        for key, value in block.items():
            if key not in allowed:
                raise ConfigError(f"{section}.{algo}.{key}: unknown key")
        out[algo] = {k: _coerce(v, float if k.endswith("rate") else None, f"{section}.{algo}.{k}")
                     for k, v in block.items()}
    return out


def _from_mapping(doc: dict, name: str) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config: top level must be a mapping")
    for key in doc:
        if key not in ("environment", "algorithm", "run"):
            raise ConfigError(f"{key}: unknown section")
    env_doc = doc.get("environment") or {}
    for key in env_doc:
        if key not in ("market", "penalty", "grid"):
            raise ConfigError(f"environment.{key}: unknown key")
    market = _build(MarketParams, env_doc.get("market"), "environment.market", _MARKET_KEYS)
    penalty = _build(PenaltyParams, env_doc.get("penalty"), "environment.penalty")
    grid = _build(TimeGrid, env_doc.get("grid"), "environment.grid")
    try:
        env = Environment(market, penalty, grid)
    except ValueError as exc:
        raise ConfigError(f"environment.{exc}") from None

    algo_doc = dict(doc.get("algorithm") or {})
    per_algorithm = _rates(algo_doc.pop("per_algorithm", None), "algorithm.per_algorithm")
    if "hidden" in algo_doc:
        algo_doc["hidden"] = tuple(algo_doc["hidden"])
    algo_doc.setdefault("env_tag", name)
    train = _build(TrainConfig, algo_doc, "algorithm")
    if train.algorithm in per_algorithm:
        train = dataclasses.replace(train, **per_algorithm[train.algorithm])

    run = doc.get("run") or {}
    allowed = {"seeds", "out", "eval_per_epoch", "eval_final", "checkpoint_every"}
    for key in run:
        if key not in allowed:
            raise ConfigError(f"run.{key}: unknown key")
    seeds = run.get("seeds", [0])
    if not isinstance(seeds, list) or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("run.seeds: expected a list of integers")
    return ExperimentConfig(
        env=env,
        train=dataclasses.replace(train, eval_episodes=_coerce(run.get("eval_per_epoch", 5), int, "run.eval_per_epoch")),
        per_algorithm=per_algorithm,
        seeds=tuple(seeds),
        out=Path(run.get("out", "runs")),
        eval_per_epoch=_coerce(run.get("eval_per_epoch", 5), int, "run.eval_per_epoch"),
        eval_final=_coerce(run.get("eval_final", 100), int, "run.eval_final"),
        checkpoint_every=_coerce(run.get("checkpoint_every", 0), int, "run.checkpoint_every"),
        name=name,
    )


def preset_text(name: str) -> str:
    return resources.files("vwaprl.lab").joinpath("presets").joinpath(f"{name}.yaml").read_text(encoding="utf-8")


def load_config(source) -> ExperimentConfig:
    """Load a preset name (``env1``/``env2``) or a YAML file path."""
    if str(source) in PRESETS:
        text, name = preset_text(str(source)), str(source)
    else:
        path = Path(source)
        if not path.exists():
            raise ConfigError(f"{path}: no such config file or preset")
        text, name = path.read_text(encoding="utf-8"), path.stem
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"{name}: YAML parse error{where}: {getattr(exc, 'problem', exc)}") from None
    return _from_mapping(doc, name)
