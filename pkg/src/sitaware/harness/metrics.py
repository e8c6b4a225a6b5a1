"""Evaluation metrics: detection quality, model error and control inconsistency."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import InputError
from ..stats import LOG_2PI

DETECTION_WINDOW = 25


@dataclass
class DetectionMetrics:
    switches: int
    detected: int
    delays: list
    false_alarms: int
    steps: int

    @property
    def detection_rate(self) -> float:
        return self.detected / self.switches if self.switches else float("nan")

    @property
    def false_alarms_per_500(self) -> float:
        return 500.0 * self.false_alarms / self.steps if self.steps else float("nan")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["detection_rate"] = self.detection_rate
        d["false_alarms_per_500"] = self.false_alarms_per_500
        return d


def detection_metrics(changepoints, switches, steps: int, window: int = DETECTION_WINDOW) -> DetectionMetrics:
    """Score one stream.

    A switch at step ``s`` is detected when a decision fires at some step in
    ``[s, s + window]``; only the first decision counts for the delay and the
    others in the window are ignored.  Decisions outside every window are
    false alarms.
    """
    cps = np.asarray(sorted(int(c) for c in changepoints), dtype=int)
    covered = np.zeros(cps.size, dtype=bool)
    delays = []
    for s in sorted(int(s) for s in switches):
        inside = (cps >= s) & (cps <= s + window)
        covered |= inside
        if inside.any():
            delays.append(int(cps[inside][0] - s))
    return DetectionMetrics(len(switches), len(delays), delays, int((~covered).sum()), int(steps))


def merge_detection(parts) -> DetectionMetrics:
    parts = list(parts)
    return DetectionMetrics(sum(p.switches for p in parts), sum(p.detected for p in parts),
                            [d for p in parts for d in p.delays],
                            sum(p.false_alarms for p in parts), sum(p.steps for p in parts))


def control_inconsistency(predicted, realized) -> float:
    """Mean squared error between predicted and realized state changes, over all entries."""
    p = np.asarray(predicted, dtype=np.float64)
    r = np.asarray(realized, dtype=np.float64)
    if p.size == 0 or r.size == 0:
        raise InputError("control inconsistency needs a nonempty trace")
    if p.shape != r.shape:
        raise InputError(f"shape mismatch: predicted {p.shape}, realized {r.shape}")
    return float(np.mean((p - r) ** 2))


def gaussian_nll(mean, var, target) -> np.ndarray:
    """Per-row negative log density of a diagonal Gaussian."""
    mean, var, target = (np.asarray(a, dtype=np.float64) for a in (mean, var, target))
    return 0.5 * np.sum((target - mean) ** 2 / var + np.log(var) + LOG_2PI, axis=-1)


def per_regime_errors(mean, var, target, regimes) -> dict:
    """One-step MSE (over entries) and NLL (per transition) grouped by regime id."""
    mean, var, target = (np.asarray(a, dtype=np.float64) for a in (mean, var, target))
    regimes = np.asarray(regimes)
    nll = gaussian_nll(mean, var, target)
    out = {}
    for r in sorted(set(int(v) for v in regimes)):
        m = regimes == r
        out[r] = {"count": int(m.sum()), "mse": float(np.mean((mean[m] - target[m]) ** 2)),
                  "nll": float(np.mean(nll[m]))}
    return out


def time_to_waypoint_stats(times) -> dict:
    t = np.asarray(times, dtype=np.float64)
    if t.size == 0:
        return {"count": 0, "mean": float("nan"), "median": float("nan"), "max": float("nan")}
    return {"count": int(t.size), "mean": float(t.mean()), "median": float(np.median(t)), "max": float(t.max())}


@dataclass
class EvalReport:
    episode_rewards: list = field(default_factory=list)
    waypoints_reached: list = field(default_factory=list)
    time_to_waypoint: dict = field(default_factory=dict)
    detection: dict = field(default_factory=dict)
    per_regime: dict = field(default_factory=dict)
    one_step_mse: float = float("nan")
    one_step_nll: float = float("nan")
    control_inconsistency: float = float("nan")

    @property
    def mean_reward(self) -> float:
        return float(np.mean(self.episode_rewards)) if self.episode_rewards else float("nan")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mean_reward"] = self.mean_reward
        d["per_regime"] = {str(k): v for k, v in self.per_regime.items()}
        return _finite(d)


def _finite(v):
    # JSON has no NaN; missing values become null
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {k: _finite(e) for k, e in v.items()}
    if isinstance(v, list):
        return [_finite(e) for e in v]
    return v
