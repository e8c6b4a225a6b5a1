"""Loading of named regime presets and environment definitions."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np
import yaml

from ..errors import ConfigError
from .pointmass import WindRegime
from .tasks import TaskSpec
from .unicycle import TerrainRegime


@dataclass(frozen=True)
class EnvPreset:
    name: str
    kind: str
    regimes: tuple
    switching: tuple[int, int]
    episode_steps: int
    task: TaskSpec
    start: tuple[float, ...]

    @property
    def action_dim(self) -> int:
        return 2 if self.kind == "unicycle" else 3

    def start_state(self) -> np.ndarray:
        s = np.zeros(12)
        if self.kind == "unicycle":
            s[0], s[1], s[5] = self.start
        else:
            s[0:3] = self.start
        return s


@lru_cache(maxsize=None)
def _raw_presets() -> dict:
    text = resources.files("sitaware.envs").joinpath("presets.yaml").read_text()
    return yaml.safe_load(text)


def _tuplify(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


def terrain(name: str) -> TerrainRegime:
    table = _raw_presets()["terrains"]
    if name not in table:
        raise ConfigError(f"unknown terrain preset {name!r}")
    return TerrainRegime(name=name, **table[name])


def wind(name: str) -> WindRegime:
    table = _raw_presets()["winds"]
    if name not in table:
        raise ConfigError(f"unknown wind preset {name!r}")
    return WindRegime(name=name, **_tuplify(table[name]))


def environment_names() -> list[str]:
    return sorted(_raw_presets()["environments"])


def environment(name: str) -> EnvPreset:
    table = _raw_presets()["environments"]
    if name not in table:
        raise ConfigError(f"unknown environment preset {name!r}; known: {', '.join(sorted(table))}")
    e = table[name]
    kind = e["kind"]
    if kind not in ("unicycle", "pointmass"):
        raise ConfigError(f"environment {name!r} has unknown kind {kind!r}")
    lookup = terrain if kind == "unicycle" else wind
    regimes = tuple(lookup(r) for r in e["regimes"])
    t = e["task"]
    task = TaskSpec(np.array(t["waypoints"], dtype=np.float64), float(t["radius"]), int(t["timeout"]))
    return EnvPreset(name, kind, regimes, tuple(e["switching"]), int(e["episode_steps"]), task,
                     tuple(float(v) for v in e["start"]))
