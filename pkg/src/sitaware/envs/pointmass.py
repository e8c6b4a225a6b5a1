"""Double-integrator point mass in a regime-dependent wind field."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, InputError
from .unicycle import DT, clip_action

A_MAX = 3.0
ACTION_LOW = np.full(3, -A_MAX)
ACTION_HIGH = np.full(3, A_MAX)
WIND_KINDS = ("nominal", "constant", "gradient", "updraft")


@dataclass(frozen=True)
class WindRegime:
    """One wind archetype; fields irrelevant to ``kind`` are ignored.

    gradient: log-profile speed ``speed * ln(z/z0) / ln(ref_height/z0)``
    blowing from ``from_deg`` (counterclockwise from +x), scaled by
    ``coupling`` into an acceleration.  updraft: vertical acceleration
    ``strength * exp(-r^2 / (2 radius^2))`` around ``center``.
    """

    name: str = "nominal"
    kind: str = "nominal"
    vector: tuple[float, float, float] = (0.0, 0.0, 0.0)
    speed: float = 0.0
    ref_height: float = 10.0
    from_deg: float = 0.0
    z0: float = 0.1
    coupling: float = 1.0
    strength: float = 0.0
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 2.0
    noise: float = 0.01  # velocity noise std per step as a fraction of A_MAX * dt

    def __post_init__(self):
        if self.kind not in WIND_KINDS:
            raise ConfigError(f"unknown wind kind {self.kind!r}")
        if self.kind == "gradient" and not (self.z0 > 0 and self.ref_height > self.z0):
            raise ConfigError("gradient wind needs 0 < z0 < ref_height")
        if self.kind == "updraft" and not self.radius > 0:
            raise ConfigError("updraft radius must be positive")


def wind_acceleration(position, regime: WindRegime) -> np.ndarray:
    p = np.asarray(position, dtype=np.float64)
    out = np.zeros(p.shape)
    if regime.kind == "constant":
        out[...] = regime.vector
    elif regime.kind == "gradient":
        z = np.maximum(p[..., 2], regime.z0)
        u = regime.speed * np.log(z / regime.z0) / math.log(regime.ref_height / regime.z0)
        phi = math.radians(regime.from_deg)
        out[..., 0] = -regime.coupling * u * math.cos(phi)
        out[..., 1] = -regime.coupling * u * math.sin(phi)
    elif regime.kind == "updraft":
        r2 = np.sum((p[..., :2] - np.asarray(regime.center)) ** 2, axis=-1)
        out[..., 2] = regime.strength * np.exp(-r2 / (2.0 * regime.radius**2))
    return out


def pointmass_wind_step(state, action, regime: WindRegime, rng: np.random.Generator | None = None,
                        dt: float = DT) -> np.ndarray:
    """Semi-implicit Euler step of ``p'' = a + wind(p)``; batched like the unicycle."""
    s = np.asarray(state, dtype=np.float64)
    if s.shape[-1] != 12:
        raise InputError(f"point-mass state must have 12 entries, got shape {s.shape}")
    a = np.asarray(action, dtype=np.float64)
    if a.shape[-1:] != (3,):
        raise InputError(f"point-mass action must have 3 entries, got shape {a.shape}")
    a, _ = clip_action(a, ACTION_LOW, ACTION_HIGH)
    p, v = s[..., 0:3], s[..., 6:9]
    v2 = v + dt * (a + wind_acceleration(p, regime))
    if rng is not None and regime.noise > 0:
        v2 = v2 + regime.noise * A_MAX * dt * rng.standard_normal(v2.shape)
    out = np.zeros(np.broadcast_shapes(s.shape, a.shape[:-1] + (12,)))
    out[..., 0:3] = p + dt * v2
    out[..., 6:9] = v2
    return out
