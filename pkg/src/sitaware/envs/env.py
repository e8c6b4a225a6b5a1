"""Episode wrapper: hidden regime schedule, noise, task progress, ground truth."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .pointmass import ACTION_HIGH as PM_HIGH, ACTION_LOW as PM_LOW, pointmass_wind_step
from .presets import EnvPreset
from .schedule import RegimeSchedule, schedule_regimes
from .tasks import Progress, waypoint_reward
from .unicycle import ACTION_HIGH as UNI_HIGH, ACTION_LOW as UNI_LOW, clip_action, unicycle_terrain_step


def step_function(kind: str):
    return unicycle_terrain_step if kind == "unicycle" else pointmass_wind_step


def action_bounds(kind: str) -> tuple[np.ndarray, np.ndarray]:
    return (UNI_LOW, UNI_HIGH) if kind == "unicycle" else (PM_LOW, PM_HIGH)


@dataclass
class StepInfo:
    regime: int
    clipped: bool
    reward: float
    waypoint: int


@dataclass
class RegimeEnv:
    """One seeded episode.  The agent sees only raw states.

    With ``stop_at_task_end`` false the episode runs to its step cap even after
    the mission completes or times out (used for exploration data).
    """

    preset: EnvPreset
    seed: int
    stop_at_task_end: bool = True
    schedule: RegimeSchedule = field(init=False)

    def __post_init__(self):
        self.schedule = schedule_regimes(self.preset.episode_steps, self.preset.switching,
                                         len(self.preset.regimes), self.seed)
        self._step_fn = step_function(self.preset.kind)
        self.low, self.high = action_bounds(self.preset.kind)
        self.reset()

    def reset(self) -> np.ndarray:
        self._rng = np.random.default_rng([self.seed, 1])
        self.state = self.preset.start_state()
        self.t = 0
        self.progress = Progress()
        self.done = False
        self.total_reward = 0.0
        self.switch_log: list[tuple[int, int, int]] = []
        self._last_regime = None
        return self.state.copy()

    @property
    def goal(self) -> np.ndarray:
        wps = self.preset.task.waypoints
        return wps[min(self.progress.index, len(wps) - 1)]

    def step(self, action) -> tuple[np.ndarray, float, bool, StepInfo]:
        if self.done:
            raise RuntimeError("episode is over; call reset()")
        regime = self.schedule.regime_at(self.t)
        if self._last_regime is not None and regime != self._last_regime:
            self.switch_log.append((self.t, self._last_regime, regime))
        self._last_regime = regime
        a, clipped = clip_action(action, self.low, self.high)
        self.state = self._step_fn(self.state, a, self.preset.regimes[regime], self._rng)
        self.t += 1
        reward, self.progress, done = waypoint_reward(self.state, self.preset.task, self.progress)
        self.total_reward += reward
        self.done = (done and self.stop_at_task_end) or self.t >= self.preset.episode_steps
        return self.state.copy(), reward, self.done, StepInfo(regime, clipped, reward, self.progress.index)
