"""Experiment configuration: flat dotted keys in a TOML file.

Example::

    seed = 3
    vehicle.vx = 10.0
    forest.n_trees = 20
    plant.steer_lag = 0.05
    paths.eval = ["straight_turn", "uturn", "mixed"]

Every key must belong to the schema below; unknown keys are rejected so
that typos do not silently fall back to defaults.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from .controller import ControllerConfig
from .dynamics import PlantParams, VehicleParams
from .paths import EVAL_PATHS, TRAIN_PATH
from .prediction import Bounds, HorizonConfig, QpWeights
from .residual_learning import ForestConfig
from .simulate import SimSettings


class ConfigError(ValueError):
    """Malformed or unknown configuration entry."""


@dataclass(frozen=True)
class PlantKnobs:
    stiffness_scale: float = 0.8
    saturation: bool = True
    mu: float = 0.9
    steer_lag: float = 0.05
    yaw_moment: float = 0.0
    max_steer: float = 0.6


@dataclass(frozen=True)
class PathsConfig:
    train: str = TRAIN_PATH
    eval: tuple = tuple(EVAL_PATHS)
    ds: float = 0.1
    kappa_max: float = 0.2


@dataclass(frozen=True)
class SimConfig:
    offset: float = 0.0
    heading_offset: float = 0.0
    corridor: float = 2.0
    end_margin: float = 1.0
    max_steps: int = 50000


@dataclass(frozen=True)
class CollectConfig:
    excitation: float = 0.0      # random steering increments on top of the nominal MPC (rad)
    train_fraction: float = 0.8  # chronological train/test split of the dataset


@dataclass(frozen=True)
class SolverConfig:
    eps: float = 1e-6
    max_iter: int = 4000


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    horizon: HorizonConfig = field(default_factory=HorizonConfig)
    weights: QpWeights = field(default_factory=QpWeights)
    bounds: Bounds = field(default_factory=Bounds)
    solver: SolverConfig = field(default_factory=SolverConfig)
    forest: ForestConfig = field(default_factory=ForestConfig)
    plant: PlantKnobs = field(default_factory=PlantKnobs)
    paths: PathsConfig = field(default_factory=PathsConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    collect: CollectConfig = field(default_factory=CollectConfig)

    def __post_init__(self):
        if not (0 <= self.seed < 2 ** 64):
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if not (0.0 < self.collect.train_fraction < 1.0):
            raise ConfigError("collect.train_fraction must lie in (0, 1)")
        if not self.paths.eval:
            raise ConfigError("paths.eval must name at least one path")
        self.forest.check_window(self.horizon.N)

    # views consumed by the library
    def controller(self) -> ControllerConfig:
        return ControllerConfig(self.vehicle, self.horizon, self.weights, self.bounds,
                                self.solver.eps, self.solver.max_iter)

    def plant_params(self) -> PlantParams:
        k = self.plant
        return PlantParams(self.vehicle, k.stiffness_scale, k.saturation, k.mu, k.steer_lag,
                           k.yaw_moment, k.max_steer)

    def forest_config(self) -> ForestConfig:
        return replace(self.forest, seed=self.seed)

    def sim_settings(self, excitation: float = 0.0) -> SimSettings:
        s = self.sim
        return SimSettings(offset=s.offset, heading_offset=s.heading_offset, corridor=s.corridor,
                           end_margin=s.end_margin, max_steps=s.max_steps,
                           excitation=excitation, seed=self.seed)


_SECTIONS = ("vehicle", "horizon", "weights", "bounds", "solver", "forest", "plant", "paths", "sim",
             "collect")


def _schema() -> dict:
    """Dotted key -> (section, field name, default value)."""
    base = ExperimentConfig()
    out = {"seed": (None, "seed", base.seed)}
    for sec in _SECTIONS:
        obj = getattr(base, sec)
        for f in fields(obj):
            if sec == "forest" and f.name == "seed":
                continue  # driven by the top-level seed
            out[f"{sec}.{f.name}"] = (sec, f.name, getattr(obj, f.name))
    return out


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        if default and isinstance(default[0], str):
            if not all(isinstance(v, str) for v in value):
                raise ConfigError(f"{key}: expected a list of strings")
            return tuple(value)
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{key}: expected a list of numbers")
        if len(value) != len(default):
            raise ConfigError(f"{key}: expected {len(default)} entries, got {len(value)}")
        return tuple(float(v) for v in value)
    raise ConfigError(f"{key}: unsupported type")  # pragma: no cover


def from_dict(d: dict, seed: int | None = None) -> ExperimentConfig:
    """Build a validated config from a (nested or dotted) mapping."""
    schema = _schema()
    flat = _flatten(d)
    unknown = sorted(set(flat) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    per_section: dict = {sec: {} for sec in _SECTIONS}
    top = {}
    for key, value in flat.items():
        sec, name, default = schema[key]
        v = _coerce(key, value, default)
        (top if sec is None else per_section[sec])[name] = v
    if seed is not None:
        top["seed"] = seed
    base = ExperimentConfig()
    kwargs = dict(top)
    try:
        for sec, vals in per_section.items():
            kwargs[sec] = replace(getattr(base, sec), **vals) if vals else getattr(base, sec)
        return ExperimentConfig(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def loads(text: str, seed: int | None = None) -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid config syntax: {exc}") from exc
    return from_dict(data, seed)


def load(path, seed: int | None = None) -> ExperimentConfig:
    with open(path, "rb") as fh:
        text = fh.read().decode("utf-8")
    return loads(text, seed)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (tuple, list)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    if isinstance(v, np.floating):
        return _fmt(float(v))
    raise TypeError(f"cannot format {v!r}")


def dumps(cfg: ExperimentConfig) -> str:
    """Render ``cfg`` as flat dotted keys; ``loads(dumps(c)) == c``."""
    lines = [f"seed = {cfg.seed}"]
    for key, (sec, name, _) in _schema().items():
        if sec is None:
            continue
        lines.append(f"{key} = {_fmt(getattr(getattr(cfg, sec), name))}")
    return "\n".join(lines) + "\n"
