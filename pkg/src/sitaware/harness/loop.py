"""Episode rollouts shared by the active, passive and evaluation pipelines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..dynamics.buffer import ReplayBuffer, Transition
from ..dynamics.features import TARGET_DIM, situation_dim, transition_target
from ..envs.env import RegimeEnv, action_bounds
from ..envs.pointmass import A_MAX
from ..envs.presets import EnvPreset
from ..situations import SituationLibrary
from ..stats import mle_gaussian
from .io import CsvTrace
from .sa import RunLabeler, SAStep, SituationAwareness

# policy(state, symbol, step, goal) -> (action, expected cost or None)
Policy = Callable[[np.ndarray, "float | None", int, np.ndarray], tuple[np.ndarray, "float | None"]]


def episode_seed(seed: int, phase: int, episode: int) -> int:
    """Environment seed for one episode.  Phases keep training, collection and evaluation apart."""
    return int(np.random.SeedSequence([seed, phase, episode]).generate_state(1)[0])


TRAIN_PHASE, COLLECT_PHASE, EVAL_PHASE, HELDOUT_PHASE = 0, 1, 2, 3


TURN_CORRELATION = 0.98
TURN_SCALE = 1.0


def exploration_policy(preset: EnvPreset, seed: int) -> Policy:
    """Random commands for data collection.

    The unicycle draws a uniform speed and a slowly varying turn rate (an AR(1)
    process), so every regime segment sweeps many headings instead of a narrow
    band.  The point mass adds a weak pull home so it stays in range.
    """
    rng = np.random.default_rng(seed)
    home = preset.start_state()
    lo, hi = action_bounds(preset.kind)
    turn = [0.0]
    innovation = TURN_SCALE * math.sqrt(1.0 - TURN_CORRELATION**2)

    def act(state, symbol, step, goal):
        if preset.kind == "unicycle":
            turn[0] = TURN_CORRELATION * turn[0] + innovation * hi[1] * rng.standard_normal()
            return np.array([rng.uniform(lo[0], hi[0]), np.clip(turn[0], lo[1], hi[1])]), None
        pull = -1.0 * (state[0:3] - home[0:3]) - 1.5 * state[6:9]
        return np.clip(pull + rng.uniform(-A_MAX, A_MAX, 3), -A_MAX, A_MAX), None

    return act


@dataclass
class EpisodeLog:
    episode: int
    transitions: list = field(default_factory=list)
    regimes: list = field(default_factory=list)
    symbols_used: list = field(default_factory=list)
    sa_steps: list = field(default_factory=list)
    switch_log: list = field(default_factory=list)
    waypoint_steps: list = field(default_factory=list)
    predicted: list = field(default_factory=list)
    predicted_var: list = field(default_factory=list)
    realized: list = field(default_factory=list)
    expected_costs: list = field(default_factory=list)
    reward: float = 0.0
    waypoints: int = 0

    @property
    def steps(self) -> int:
        return len(self.transitions)

    @property
    def changepoints(self) -> list[int]:
        return [s.step for s in self.sa_steps if s.decision is not None and s.decision.changepoint]

    @property
    def waypoint_times(self) -> list[int]:
        marks = [-1] + list(self.waypoint_steps)
        return [b - a for a, b in zip(marks[:-1], marks[1:])]


def run_episode(preset: EnvPreset, env_seed: int, episode: int, policy: Policy,
                sa: SituationAwareness | None = None, model=None, max_steps: int | None = None,
                explore: bool = False) -> EpisodeLog:
    """Roll one episode.

    The symbol handed to the policy (and to ``model`` for the logged one-step
    prediction) is the SA stack's active symbol after the previous transition.
    Exploration episodes (``explore``) ignore the mission and run to the step cap.
    """
    env = RegimeEnv(preset, env_seed, stop_at_task_end=not explore)
    state = env.reset()
    log = EpisodeLog(episode)
    if sa is not None:
        sa.reset_episode()
    limit = preset.episode_steps if max_steps is None else min(max_steps, preset.episode_steps)
    for t in range(limit):
        symbol = None if sa is None else sa.symbol
        action, cost = policy(state, symbol, t, env.goal)
        log.expected_costs.append(cost)
        action = np.asarray(action, dtype=np.float64)
        if model is not None:
            pred = model.predict(state, symbol, action)
            log.predicted.append(pred.mean)
            log.predicted_var.append(pred.var)
        nxt, reward, done, info = env.step(action)
        log.realized.append(transition_target(state, nxt))
        applied = np.clip(action, env.low, env.high)
        log.transitions.append(Transition(state, None, applied, nxt, episode, t))
        log.regimes.append(info.regime)
        log.symbols_used.append(symbol)
        log.reward += reward
        if reward > 0:
            log.waypoint_steps.append(t)
        if sa is not None:
            log.sa_steps.extend(sa.observe(state, applied, nxt))
        state = nxt
        if done:
            break
    if sa is not None:
        log.sa_steps.extend(sa.flush())
    log.waypoints = len(log.waypoint_steps)
    log.switch_log = [row for row in env.switch_log]
    return log


def ensure_library(sa: SituationAwareness, vectors: np.ndarray) -> None:
    """Bootstrap a situation from ``vectors`` when the stream closed every run too early."""
    if len(sa.library) == 0 and len(vectors) >= 2:
        sa.library, sit = sa.library.add(mle_gaussian(vectors), len(vectors))
        sa.active = sit


def annotate_logs(logs: list[EpisodeLog], sa: SituationAwareness, labeler: RunLabeler) -> list[Transition]:
    """Run-close labels for the transitions of ``logs`` (SA steps already recorded on each log)."""
    for log in logs:
        for st in log.sa_steps:
            labeler.add(st)
        labeler.end_episode(sa.symbol if log.sa_steps else None)
    vectors = np.stack([st.x for log in logs for st in log.sa_steps]) if logs else np.zeros((0, 0))
    ensure_library(sa, vectors)
    labels = labeler.finish(sa.library)
    flat = [t for log in logs for t in log.transitions]
    return [t.with_symbol(l) for t, l in zip(flat, labels)]


def write_episode_traces(log: EpisodeLog, detector: CsvTrace | None, steps: CsvTrace | None,
                         ground_truth: CsvTrace | None, rewards: CsvTrace | None) -> None:
    if detector is not None:
        for st in log.sa_steps:
            d = st.decision
            detector.add(log.episode, st.step, d.changepoint, d.log_growth, d.log_change, d.map_run_length,
                         st.situation_id, st.symbol, st.distance, st.created)
        detector.flush()
    if steps is not None:
        wp = 0
        for t, tr in enumerate(log.transitions):
            wp += int(t in log.waypoint_steps)
            pred = log.predicted[t] if log.predicted else np.full(TARGET_DIM, np.nan)
            var = log.predicted_var[t] if log.predicted_var else np.full(TARGET_DIM, np.nan)
            steps.add(log.episode, t, log.regimes[t], log.symbols_used[t], float(t in log.waypoint_steps), wp,
                      log.expected_costs[t], *tr.action, *pred, *var, *log.realized[t])
        steps.flush()
    if ground_truth is not None:
        for step, old, new in log.switch_log:
            ground_truth.add(log.episode, step, old, new)
        ground_truth.flush()
    if rewards is not None:
        rewards.add(log.episode, log.reward, log.waypoints, log.steps)
        rewards.flush()


def sa_dim(preset: EnvPreset) -> int:
    return situation_dim(preset.action_dim)


def buffer_from(transitions) -> ReplayBuffer:
    buf = ReplayBuffer()
    buf.extend(transitions)
    return buf


def library_symbols(library: SituationLibrary) -> list[float]:
    return [s.symbol for s in library.situations]
