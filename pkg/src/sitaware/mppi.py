"""Sampling-based model-predictive control with a goal-distance + log-barrier cost."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np
from scipy.special import softmax

from .errors import ConfigError, InputError, PlanningError


@dataclass(frozen=True)
class MPPIConfig:
    iterations: int = 2
    population: int = 1500
    horizon: int = 20
    gamma: float = 0.9
    sigma: float = 0.4
    beta: float = 0.4
    rho: float = 0.5
    d_min: float = 0.05
    action_low: tuple[float, ...] = (-1.0, -math.pi / 2)
    action_high: tuple[float, ...] = (1.0, math.pi / 2)

    def __post_init__(self):
        lo = tuple(float(v) for v in self.action_low)
        hi = tuple(float(v) for v in self.action_high)
        object.__setattr__(self, "action_low", lo)
        object.__setattr__(self, "action_high", hi)
        if self.iterations < 1:
            raise ConfigError("iterations must be positive")
        if self.population < 2:
            raise ConfigError("population must be at least 2")
        if self.horizon < 1:
            raise ConfigError("horizon must be at least 1")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("gamma must lie in (0, 1]")
        if not self.sigma > 0:
            raise ConfigError("sigma must be positive")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError("beta must lie in [0, 1]")
        if not self.rho > 0 or not self.d_min > 0:
            raise ConfigError("rho and d_min must be positive")
        if len(lo) != len(hi) or not lo:
            raise ConfigError("action bounds must be nonempty and of equal length")
        if not all(math.isfinite(a) and math.isfinite(b) and a < b for a, b in zip(lo, hi)):
            raise ConfigError("action bounds must be finite with low < high")

    @property
    def low(self) -> np.ndarray:
        return np.array(self.action_low)

    @property
    def high(self) -> np.ndarray:
        return np.array(self.action_high)

    @property
    def action_dim(self) -> int:
        return len(self.action_low)


class Dynamics(Protocol):
    m: int

    def rollout(self, start, symbol, actions, seed=None, noise: bool = False,
                members: np.ndarray | None = None) -> np.ndarray: ...


class KnownDynamics:
    """Wraps an exact batched step function ``f(states, actions) -> next_states``."""

    m = 1

    def __init__(self, step: Callable[[np.ndarray, np.ndarray], np.ndarray]):
        self.step = step

    def rollout(self, start, symbol, actions, seed=None, noise: bool = False, members=None) -> np.ndarray:
        actions = np.asarray(actions, dtype=np.float64)
        if actions.ndim == 2:
            actions = actions[None]
        N, H, _ = actions.shape
        start = np.asarray(start, dtype=np.float64)
        traj = np.empty((N, H + 1, start.shape[-1]))
        traj[:, 0] = start
        for h in range(H):
            traj[:, h + 1] = self.step(traj[:, h], actions[:, h])
        return traj


@dataclass
class PlanResult:
    action_sequence: np.ndarray
    expected_cost: float
    elite_costs: np.ndarray
    cost_history: list = field(default_factory=list)


def trajectory_cost(trajectory, goal, obstacles=(), rho: float = 0.5, d_min: float = 0.05) -> np.ndarray:
    """Sum over steps of goal distance plus ``rho`` times the clamped log barrier.

    ``trajectory`` is ``(..., H, state_dim)``; only its first ``len(goal)``
    coordinates (positions) are used.
    """
    traj = np.asarray(trajectory, dtype=np.float64)
    goal = np.atleast_1d(np.asarray(goal, dtype=np.float64))
    if traj.ndim < 2 or traj.shape[-2] == 0:
        raise InputError("trajectory must hold at least one state")
    k = goal.size
    pos = traj[..., :k]
    step_cost = np.linalg.norm(pos - goal, axis=-1)
    obs = np.asarray(obstacles, dtype=np.float64).reshape(-1, k) if len(obstacles) else np.zeros((0, k))
    if obs.shape[0]:
        dist = np.linalg.norm(pos[..., None, :] - obs, axis=-1).min(axis=-1)
        step_cost = step_cost - rho * np.log(np.maximum(dist, d_min))
    return step_cost.sum(axis=-1)


def correlated_noise(rng: np.random.Generator, shape: tuple[int, int, int], scale: np.ndarray,
                     beta: float) -> np.ndarray:
    """``eps_h = beta * eps_{h-1} + (1 - beta) * xi_h`` along the horizon axis."""
    xi = rng.standard_normal(shape) * scale
    eps = np.empty(shape)
    prev = np.zeros((shape[0], shape[2]))
    for h in range(shape[1]):
        prev = beta * prev + (1.0 - beta) * xi[:, h]
        eps[:, h] = prev
    return eps


def expected_cost(model: Dynamics, state, symbol, sequence, goal, obstacles, config: MPPIConfig) -> float:
    """Average over members of the noise-free trajectory cost of one sequence."""
    seq = np.asarray(sequence, dtype=np.float64)[None]
    traj = model.rollout(state, symbol, np.repeat(seq, model.m, axis=0), members=np.arange(model.m))
    return float(np.mean(trajectory_cost(traj[:, 1:], goal, obstacles, config.rho, config.d_min)))


def mppi_plan(model: Dynamics, state, symbol, goal, obstacles, config: MPPIConfig, seed=None,
              init_mean: np.ndarray | None = None) -> PlanResult:
    lo, hi = config.low, config.high
    H, P, a_dim = config.horizon, config.population, config.action_dim
    if init_mean is None:
        mean = np.broadcast_to(0.5 * (lo + hi), (H, a_dim)).copy()
    else:
        mean = np.clip(np.asarray(init_mean, dtype=np.float64).reshape(H, a_dim), lo, hi)
    rng = np.random.default_rng(seed)
    # sigma is relative to the full width of each action interval
    scale = config.sigma * (hi - lo)

    cur = expected_cost(model, state, symbol, mean, goal, obstacles, config)
    history = [cur]
    elite = np.zeros(0)
    for _ in range(config.iterations):
        cand = np.clip(mean + correlated_noise(rng, (P, H, a_dim), scale, config.beta), lo, hi)
        traj = model.rollout(state, symbol, cand, seed=int(rng.integers(2**63 - 1)))
        costs = trajectory_cost(traj[:, 1:], goal, obstacles, config.rho, config.d_min)
        ok = np.isfinite(costs)
        if not ok.any():
            raise PlanningError("every candidate sequence has a non-finite cost")
        c, cand = costs[ok], cand[ok]
        spread = float(c.max() - c.min())
        temperature = (1.0 - config.gamma) * spread
        if spread == 0.0:
            w = np.full(c.size, 1.0 / c.size)
        elif temperature == 0.0:
            w = (c == c.min()).astype(np.float64)
            w /= w.sum()
        else:
            w = softmax(-(c - c.min()) / temperature)
        proposal = np.clip(np.tensordot(w, cand, axes=1), lo, hi)
        new = expected_cost(model, state, symbol, proposal, goal, obstacles, config)
        # the best sampled candidate competes with the softmin average
        best = cand[int(np.argmin(c))]
        best_cost = expected_cost(model, state, symbol, best, goal, obstacles, config)
        if best_cost < new:
            proposal, new = best, best_cost
        # keep the previous mean unless the update does not hurt
        if new <= cur:
            mean, cur = proposal, new
        history.append(cur)
        elite = np.sort(c)[: max(1, c.size // 10)]
    return PlanResult(mean, cur, elite, history)


class MPPIController:
    """Receding-horizon wrapper owning the warm-started mean sequence."""

    def __init__(self, model: Dynamics, config: MPPIConfig):
        self.model = model
        self.config = config
        self.mean = None

    def reset(self) -> None:
        self.mean = None

    def act(self, state, symbol, goal, obstacles=(), seed=None) -> tuple[np.ndarray, PlanResult]:
        res = mppi_plan(self.model, state, symbol, goal, obstacles, self.config, seed, self.mean)
        seq = res.action_sequence
        self.mean = np.concatenate((seq[1:], seq[-1:]), axis=0)
        return seq[0].copy(), res


def random_shooting(model: Dynamics, state, symbol, goal, obstacles, config: MPPIConfig,
                    count: int, seed=None) -> tuple[np.ndarray, float]:
    """Best of ``count`` uniform random sequences by sampled cost."""
    rng = np.random.default_rng(seed)
    lo, hi = config.low, config.high
    cand = rng.uniform(lo, hi, size=(count, config.horizon, config.action_dim))
    traj = model.rollout(state, symbol, cand, seed=int(rng.integers(2**63 - 1)))
    costs = trajectory_cost(traj[:, 1:], goal, obstacles, config.rho, config.d_min)
    best = cand[int(np.nanargmin(costs))]
    return best, expected_cost(model, state, symbol, best, goal, obstacles, config)
