"""Sparse waypoint missions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError


@dataclass(frozen=True, eq=False)
class TaskSpec:
    waypoints: np.ndarray
    radius: float = 0.3
    timeout: int = 150

    def __post_init__(self):
        wp = np.array(self.waypoints, dtype=np.float64)
        if wp.ndim != 2 or wp.shape[0] == 0:
            raise ConfigError("waypoints must be a nonempty (K, k) array")
        if not self.radius > 0:
            raise ConfigError("reach radius must be positive")
        if self.timeout < 1:
            raise ConfigError("timeout must be at least 1 step")
        wp.setflags(write=False)
        object.__setattr__(self, "waypoints", wp)

    @property
    def pos_dim(self) -> int:
        return self.waypoints.shape[1]


@dataclass(frozen=True)
class Progress:
    index: int = 0  # next waypoint
    steps: int = 0  # steps spent on it


def waypoint_reward(state, task: TaskSpec, progress: Progress) -> tuple[float, Progress, bool]:
    """+1 on entering the next waypoint's radius; ends on completion or timeout."""
    if progress.index >= len(task.waypoints):
        return 0.0, progress, True
    pos = np.asarray(state, dtype=np.float64)[: task.pos_dim]
    steps = progress.steps + 1
    if np.linalg.norm(pos - task.waypoints[progress.index]) <= task.radius:
        nxt = Progress(progress.index + 1, 0)
        return 1.0, nxt, nxt.index >= len(task.waypoints)
    if steps >= task.timeout:
        return 0.0, Progress(progress.index, steps), True
    return 0.0, Progress(progress.index, steps), False
