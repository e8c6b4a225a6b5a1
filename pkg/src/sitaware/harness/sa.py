"""Stateful situational-awareness stack: changepoint detector plus situation library."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from ..bocd import ChangepointDetector, StepDecision
from ..dynamics.features import situation_vector
from ..situations import Situation, SituationLibrary, RunWindow, identify, nearest, new_library
from ..stats import NormalWishartParams
from .config import SAConfig


@dataclass(frozen=True)
class SAStep:
    step: int
    x: np.ndarray
    symbol: float | None
    situation_id: int
    decision: StepDecision | None
    created: bool
    distance: float


class SituationAwareness:
    """Feeds situation vectors through the detector and the library.

    Until the detector has a prior, the first ``min_support`` vectors are
    buffered; they define an empirical prior and are then replayed.

    Every vector first receives seeded Gaussian noise of scale
    ``cfg.noise_floor``.  Several coordinates (level attitude, unused rates)
    are otherwise exactly constant, and a run that has seen many constant
    values becomes so confident that no fresh run can ever overtake it.
    """

    def __init__(self, library: SituationLibrary, cfg: SAConfig, seed: int = 0):
        self.cfg = cfg
        self._rng = np.random.default_rng([seed, 7])
        self.library = library
        self.window = RunWindow()
        self.active: Situation | None = None
        self._pending: list[tuple[int, np.ndarray]] = []
        self.detector = None
        if library.detector_prior is not None:
            self._make_detector(library.detector_prior)
        self.changepoint_steps: list[int] = []
        self.t = 0

    @classmethod
    def fresh(cls, dim: int, cfg: SAConfig, seed: int = 0) -> "SituationAwareness":
        return cls(new_library(dim, cfg.tau, cfg.min_support, cfg.t_value), cfg, seed)

    def _make_detector(self, prior: NormalWishartParams) -> None:
        self.detector = ChangepointDetector(prior, self.cfg.hazard_lambda,
                                            self.cfg.truncation_log_threshold, self.cfg.predictive_mode)

    @property
    def symbol(self) -> float | None:
        return None if self.active is None else self.active.symbol

    def default_situation(self) -> Situation | None:
        """Best-supported situation (lowest id on ties), used before any vector is seen."""
        if len(self.library) == 0:
            return None
        return max(sorted(self.library.situations, key=lambda s: s.id), key=lambda s: s.support)

    def reset_episode(self) -> None:
        """Start a new episode: clear the window and step counter, reset the detector if configured."""
        self.window = RunWindow()
        self.changepoint_steps = []
        self.t = 0
        self.active = self.default_situation()
        if self.detector is not None and self.cfg.reset_each_episode:
            self.detector.reset()

    def _process(self, x: np.ndarray, step: int) -> SAStep:
        decision = self.detector.update(x)
        if decision.changepoint:
            self.changepoint_steps.append(step)
        res = identify(self.library, self.window, x, decision)
        self.library, self.window = res.library, res.window
        if res.active is not None:
            self.active = res.active
        sid = -1 if self.active is None else self.active.id
        return SAStep(step, x, self.symbol, sid, decision, res.created, res.distance)

    def _form_prior(self) -> list[SAStep]:
        pts = np.stack([p for _, p in self._pending])
        prior = NormalWishartParams.empirical(pts, inflation=self.cfg.prior_inflation,
                                             covariance=self.cfg.prior_covariance)
        self.library = dataclasses.replace(self.library, detector_prior=prior)
        self._make_detector(prior)
        out = [self._process(p, s) for s, p in self._pending]
        self._pending = []
        return out

    def observe_vector(self, x) -> list[SAStep]:
        """Process one vector.

        Returns the steps resolved by this call: usually one, none while the
        prior is still being gathered, and the whole replayed backlog once it
        is formed.
        """
        x = np.asarray(x, dtype=np.float64)
        if self.cfg.noise_floor > 0:
            x = x + self.cfg.noise_floor * self._rng.standard_normal(x.shape)
        step = self.t
        self.t += 1
        if self.detector is not None:
            return [self._process(x, step)]
        self._pending.append((step, x))
        if len(self._pending) < self.cfg.min_support:
            return []
        return self._form_prior()

    def observe(self, prev_raw, prev_action, raw) -> list[SAStep]:
        return self.observe_vector(situation_vector(prev_raw, prev_action, raw))

    def flush(self) -> list[SAStep]:
        """Resolve vectors still waiting for the prior when a stream ends early."""
        if self.detector is not None or len(self._pending) < 2:
            return []
        return self._form_prior()


class RunLabeler:
    """Labels every transition with the situation identified when its run closes.

    A run opens at a changepoint (the changepoint transition belongs to the new
    run) and closes at the next one or at the end of the episode.  Runs that
    close before any situation exists stay unlabelled until :meth:`finish`,
    which assigns them the nearest situation of the final library.
    """

    def __init__(self):
        self.labels: list[float | None] = []
        self._vectors: list[np.ndarray] = []
        self._open: list[int] = []
        self._orphans: list[list[int]] = []

    def _close(self, symbol: float | None) -> None:
        if not self._open:
            return
        if symbol is None:
            self._orphans.append(self._open)
        else:
            for i in self._open:
                self.labels[i] = symbol
        self._open = []

    def add(self, step: SAStep) -> None:
        if step.decision is not None and step.decision.changepoint:
            self._close(step.symbol)
        self.labels.append(None)
        self._vectors.append(step.x)
        self._open.append(len(self.labels) - 1)

    def end_episode(self, symbol: float | None) -> None:
        self._close(symbol)

    def finish(self, library: SituationLibrary) -> list[float | None]:
        self._close(None)
        if len(library):
            for run in self._orphans:
                sit, _ = nearest(library, np.stack([self._vectors[i] for i in run]))
                for i in run:
                    self.labels[i] = sit.symbol
        self._orphans = []
        return list(self.labels)
