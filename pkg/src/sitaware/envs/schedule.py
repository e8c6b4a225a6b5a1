"""Random regime-switching schedules with ground-truth logs."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError


@dataclass(frozen=True)
class RegimeSchedule:
    """Segments cover at least ``num_steps``; every duration lies in ``[low, high]``."""

    regimes: tuple[int, ...]
    durations: tuple[int, ...]
    low: int
    high: int
    seed: int
    num_steps: int

    @property
    def starts(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.durations)[:-1])).astype(int)

    @property
    def switch_steps(self) -> tuple[int, ...]:
        """Steps at which a new regime takes over (within ``num_steps``)."""
        return tuple(int(s) for s in self.starts[1:] if s < self.num_steps)

    def regime_at(self, step: int) -> int:
        i = int(np.searchsorted(self.starts, step, side="right")) - 1
        return self.regimes[max(i, 0)]

    def regime_array(self) -> np.ndarray:
        return np.repeat(self.regimes, self.durations)[: self.num_steps]

    def ground_truth(self) -> list[tuple[int, int, int]]:
        """``(step, old_regime, new_regime)`` rows."""
        out = []
        for i, s in enumerate(self.starts[1:], start=1):
            if s < self.num_steps:
                out.append((int(s), self.regimes[i - 1], self.regimes[i]))
        return out


def schedule_regimes(num_steps: int, bounds, num_regimes: int, seed: int,
                     initial: int | None = None) -> RegimeSchedule:
    low, high = (int(b) for b in bounds)
    if not 1 <= low <= high:
        raise ConfigError(f"invalid switching bounds [{low}, {high}]")
    if num_regimes < 2:
        raise ConfigError("need at least two regimes to switch between")
    if num_steps < 0:
        raise ConfigError("num_steps must be nonnegative")
    rng = np.random.default_rng(seed)
    cur = int(rng.integers(num_regimes)) if initial is None else int(initial)
    regimes, durations, total = [], [], 0
    while total < max(num_steps, 1):
        d = int(rng.integers(low, high + 1))
        regimes.append(cur)
        durations.append(d)
        total += d
        # uniform over the other regimes
        nxt = int(rng.integers(num_regimes - 1))
        cur = nxt if nxt < cur else nxt + 1
    return RegimeSchedule(tuple(regimes), tuple(durations), low, high, int(seed), int(num_steps))


def write_ground_truth(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "old_regime", "new_regime"])
        w.writerows(rows)
