"""Experiment configuration: YAML schema, defaults and validation."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from ..dynamics.ensemble import EnsembleConfig
from ..envs.env import action_bounds
from ..envs.presets import environment, environment_names
from ..errors import ConfigError, NotFoundError
from ..mppi import MPPIConfig


@dataclass(frozen=True)
class SAConfig:
    hazard_lambda: float = 60.0
    tau: float = 80.0
    min_support: int = 60
    t_value: float = 0.1
    predictive_mode: str = "student-t"
    truncation_log_threshold: float | None = -30.0
    prior_inflation: float = 1.5
    prior_covariance: str = "full"
    noise_floor: float = 0.003
    reset_each_episode: bool = True

    def __post_init__(self):
        if not self.hazard_lambda > 1:
            raise ConfigError("sa.hazard_lambda must be > 1")
        if not self.tau > 0:
            raise ConfigError("sa.tau must be positive")
        if self.min_support < 2:
            raise ConfigError("sa.min_support must be at least 2")
        if self.t_value == 0:
            raise ConfigError("sa.t_value must be nonzero")
        if self.predictive_mode not in ("plug-in", "student-t"):
            raise ConfigError(f"sa.predictive_mode must be plug-in or student-t, got {self.predictive_mode!r}")
        if not self.prior_inflation > 0:
            raise ConfigError("sa.prior_inflation must be positive")
        if self.prior_covariance not in ("diagonal", "full"):
            raise ConfigError(f"sa.prior_covariance must be diagonal or full, got {self.prior_covariance!r}")
        if not self.noise_floor >= 0:
            raise ConfigError("sa.noise_floor must be nonnegative")


@dataclass(frozen=True)
class BudgetConfig:
    episodes: int = 30
    warmup_steps: int | None = None  # None: twice the minimum support
    eval_episodes: int = 5
    collect_episodes: int = 10

    def __post_init__(self):
        if self.episodes < 0 or self.eval_episodes < 0 or self.collect_episodes < 0:
            raise ConfigError("budget counts must be nonnegative")
        if self.warmup_steps is not None and self.warmup_steps < 1:
            raise ConfigError("budget.warmup_steps must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    mode: str = "active"
    env: str = "terrain-desk"
    seed: int = 0
    out_dir: str = "runs/experiment"
    sa: SAConfig = field(default_factory=SAConfig)
    model: EnsembleConfig = field(default_factory=EnsembleConfig)
    mppi: MPPIConfig = field(default_factory=MPPIConfig)
    budget: BudgetConfig = field(default_factory=BudgetConfig)
    obstacles: tuple = ()
    baseline: bool = True

    def __post_init__(self):
        if self.mode not in ("active", "passive", "evaluate"):
            raise ConfigError(f"mode must be active, passive or evaluate, got {self.mode!r}")
        if self.env not in environment_names():
            raise ConfigError(f"unknown environment preset {self.env!r}; known: {', '.join(environment_names())}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise ConfigError("seed must be an explicit integer")
        preset = environment(self.env)
        lo, hi = action_bounds(preset.kind)
        if self.mppi.action_dim != lo.size:
            # bounds always follow the environment
            object.__setattr__(self, "mppi", dataclasses.replace(
                self.mppi, action_low=tuple(lo), action_high=tuple(hi)))
        obs = tuple(tuple(float(v) for v in o) for o in self.obstacles)
        if any(len(o) != preset.task.pos_dim for o in obs):
            raise ConfigError(f"obstacles must have {preset.task.pos_dim} coordinates")
        object.__setattr__(self, "obstacles", obs)

    @property
    def preset(self):
        return environment(self.env)

    @property
    def warmup_steps(self) -> int:
        w = self.budget.warmup_steps
        return 2 * self.sa.min_support if w is None else w

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


_SECTIONS = {"sa": SAConfig, "model": EnsembleConfig, "mppi": MPPIConfig, "budget": BudgetConfig}
_TOP = {f.name for f in fields(ExperimentConfig)}


def _build(cls, raw: Any, where: str):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping")
    known = {f.name for f in fields(cls)}
    extra = sorted(set(raw) - known)
    if extra:
        raise ConfigError(f"{where}: unknown keys {', '.join(extra)}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    extra = sorted(set(raw) - _TOP)
    if extra:
        raise ConfigError(f"unknown top-level keys {', '.join(extra)}")
    kwargs = {}
    for key, value in raw.items():
        if key in _SECTIONS:
            kwargs[key] = _build(_SECTIONS[key], value, key)
        elif key == "obstacles":
            kwargs[key] = tuple(tuple(o) for o in (value or ()))
        else:
            kwargs[key] = value
    return ExperimentConfig(**kwargs)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    d = dataclasses.asdict(cfg)

    def plain(v):
        if isinstance(v, (tuple, list)):
            return [plain(e) for e in v]
        if isinstance(v, dict):
            return {k: plain(e) for k, e in v.items()}
        return v

    return plain(d)


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise NotFoundError(f"config file not found: {p}")
    try:
        raw = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: invalid YAML: {exc}") from None
    return config_from_dict(raw or {})


def default_config_names() -> list[str]:
    root = resources.files("sitaware.configs")
    return sorted(f.name[:-5] for f in root.iterdir() if f.name.endswith(".yaml"))


def default_config(name: str) -> ExperimentConfig:
    root = resources.files("sitaware.configs")
    f = root.joinpath(f"{name}.yaml")
    if not f.is_file():
        raise ConfigError(f"no bundled config {name!r}; known: {', '.join(default_config_names())}")
    return config_from_dict(yaml.safe_load(f.read_text()))


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=False))
