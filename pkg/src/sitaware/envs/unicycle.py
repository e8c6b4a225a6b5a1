"""Unicycle on terrain with regime-dependent slip, drift and noise."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import InputError

DT = 0.1
V_MAX = 1.0
W_MAX = math.pi / 2
ACTION_LOW = np.array([-V_MAX, -W_MAX])
ACTION_HIGH = np.array([V_MAX, W_MAX])


@dataclass(frozen=True)
class TerrainRegime:
    name: str = "firm"
    slip_v: float = 1.0  # multiplicative on the commanded speed
    slip_w: float = 1.0  # multiplicative on the commanded turn rate
    drift: float = 0.0  # heading drift, rad/s
    lateral: float = 0.0  # sideways speed as a fraction of forward speed
    noise: float = 0.01  # noise std as a fraction of the speed limits


def clip_action(action, low, high) -> tuple[np.ndarray, bool]:
    a = np.asarray(action, dtype=np.float64)
    c = np.clip(a, low, high)
    return c, bool(np.any(c != a))


def wrap_angle(a):
    return (np.asarray(a) + math.pi) % (2.0 * math.pi) - math.pi


def unicycle_terrain_step(state, action, regime: TerrainRegime, rng: np.random.Generator | None = None,
                          dt: float = DT) -> np.ndarray:
    """One step; ``state``/``action`` may carry a leading batch axis.

    Noise is added only when ``rng`` is given.  Velocities are stored in the
    body frame; roll, pitch, altitude and their rates stay zero.
    """
    s = np.asarray(state, dtype=np.float64)
    if s.shape[-1] != 12:
        raise InputError(f"unicycle state must have 12 entries, got shape {s.shape}")
    a = np.asarray(action, dtype=np.float64)
    if a.shape[-1:] != (2,):
        raise InputError(f"unicycle action must have 2 entries, got shape {a.shape}")
    a, _ = clip_action(a, ACTION_LOW, ACTION_HIGH)
    v = regime.slip_v * a[..., 0]
    w = regime.slip_w * a[..., 1] + regime.drift
    if rng is not None and regime.noise > 0:
        v = v + regime.noise * V_MAX * rng.standard_normal(v.shape)
        w = w + regime.noise * W_MAX * rng.standard_normal(w.shape)
    vy = regime.lateral * v
    yaw = s[..., 5]
    c, si = np.cos(yaw), np.sin(yaw)
    out = np.zeros(np.broadcast_shapes(s.shape, v.shape + (12,)))
    out[..., 0] = s[..., 0] + dt * (v * c - vy * si)
    out[..., 1] = s[..., 1] + dt * (v * si + vy * c)
    out[..., 5] = wrap_angle(yaw + dt * w)
    out[..., 6] = v
    out[..., 7] = vy
    out[..., 11] = w
    return out
