"""Streaming multivariate Bayesian online changepoint detection.

Every run-length hypothesis carries its own Normal-Wishart belief.  The
run-length posterior is kept normalised in log space; per-step evidence is
accumulated separately in ``log_evidence``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import ConfigError, DegenerateError, InputError, NumericError
from .stats import LOG_2PI, NormalWishartParams, StudentTParams, student_t_log_pdf, symmetrize

PredictiveMode = Literal["plug-in", "student-t"]


@dataclass(frozen=True)
class RunHypothesis:
    run_length: int
    log_joint: float
    belief: NormalWishartParams
    count: int


@dataclass(frozen=True)
class StepDecision:
    changepoint: bool
    log_growth: float
    log_change: float
    map_run_length: int


@dataclass(frozen=True, eq=False)
class RunLengthState:
    """Run-length posterior plus stacked per-run beliefs.

    Arrays are indexed by hypothesis, ordered by increasing run length.
    ``log_post`` holds the normalised log posterior ``log P(r_t | x_1:t)``.
    """

    prior: NormalWishartParams
    hazard_lambda: float
    run_lengths: np.ndarray
    log_post: np.ndarray
    mu: np.ndarray
    kappa: np.ndarray
    T: np.ndarray
    nu: np.ndarray
    count: np.ndarray
    truncation_log_threshold: float | None = -30.0
    predictive_mode: PredictiveMode = "plug-in"
    log_evidence: float = 0.0
    t: int = 0
    # run length of the run opened by the last declared changepoint (-1: lost)
    tracked_run_length: int = 0

    @property
    def dim(self) -> int:
        return self.prior.dim

    @property
    def size(self) -> int:
        return self.run_lengths.size

    @property
    def map_index(self) -> int:
        return int(np.argmax(self.log_post))

    @property
    def map_run_length(self) -> int:
        return int(self.run_lengths[self.map_index])

    def belief(self, i: int) -> NormalWishartParams:
        return NormalWishartParams(self.mu[i], self.kappa[i], self.T[i], self.nu[i])

    @property
    def hypotheses(self) -> list[RunHypothesis]:
        return [RunHypothesis(int(self.run_lengths[i]), float(self.log_post[i]),
                              self.belief(i), int(self.count[i]))
                for i in range(self.size)]

    def posterior(self) -> np.ndarray:
        return np.exp(self.log_post)


def bocd_init(prior: NormalWishartParams, hazard_lambda: float, *,
              truncation_log_threshold: float | None = -30.0,
              predictive_mode: PredictiveMode = "plug-in") -> RunLengthState:
    if not hazard_lambda > 1:
        raise ConfigError(f"hazard_lambda must be > 1, got {hazard_lambda}")
    if predictive_mode not in ("plug-in", "student-t"):
        raise ConfigError(f"unknown predictive_mode {predictive_mode!r}")
    if predictive_mode == "student-t" and prior.nu - prior.dim + 1 <= 0:
        raise ConfigError("student-t predictive needs nu - d + 1 > 0")
    d = prior.dim
    return RunLengthState(
        prior=prior,
        hazard_lambda=float(hazard_lambda),
        run_lengths=np.zeros(1, dtype=np.int64),
        log_post=np.zeros(1),
        mu=prior.mu0.reshape(1, d).copy(),
        kappa=np.array([prior.kappa]),
        T=prior.T.reshape(1, d, d).copy(),
        nu=np.array([prior.nu]),
        count=np.zeros(1, dtype=np.int64),
        truncation_log_threshold=truncation_log_threshold,
        predictive_mode=predictive_mode,
    )


def _batched_cholesky(T: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(symmetrize(T))
    except np.linalg.LinAlgError as exc:
        raise DegenerateError("run belief scale matrix lost positive definiteness") from exc


def _forward_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.linalg.solve(L, b[..., None])[..., 0]


def predictive_log_density(state: RunLengthState, x: np.ndarray) -> np.ndarray:
    """log pi^(r)(x) for every hypothesis in ``state``."""
    d = state.dim
    L = _batched_cholesky(state.T)
    z = _forward_solve(L, x[None, :] - state.mu)
    quad = np.einsum("ij,ij->i", z, z)
    logdet_T = 2.0 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
    nu = state.nu
    if state.predictive_mode == "plug-in":
        # precision = nu * inv(T)
        return 0.5 * (d * np.log(nu) - logdet_T) - 0.5 * d * LOG_2PI - 0.5 * nu * quad
    dof = nu - d + 1.0
    if np.any(dof <= 0):
        raise DegenerateError("predictive dof nu-d+1 <= 0")
    c = (state.kappa + 1.0) / (state.kappa * dof)
    logdet_shape = logdet_T + d * np.log(c)
    return (gammaln(0.5 * (dof + d)) - gammaln(0.5 * dof) - 0.5 * d * np.log(dof * math.pi)
            - 0.5 * logdet_shape - 0.5 * (dof + d) * np.log1p(quad / (c * dof)))


def nw_update(belief: NormalWishartParams, x) -> NormalWishartParams:
    """Fold one observation into a Normal-Wishart belief."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != belief.dim:
        raise InputError(f"expected dimension {belief.dim}, got {x.size}")
    k = belief.kappa
    diff = belief.mu0 - x
    return NormalWishartParams(
        (k * belief.mu0 + x) / (k + 1.0),
        k + 1.0,
        belief.T + (k / (k + 1.0)) * np.outer(diff, diff),
        belief.nu + 1.0,
    )


def _nw_update_stack(mu, kappa, T, nu, x):
    diff = mu - x[None, :]
    w = kappa / (kappa + 1.0)
    T_new = T + w[:, None, None] * diff[:, :, None] * diff[:, None, :]
    mu_new = (kappa[:, None] * mu + x[None, :]) / (kappa[:, None] + 1.0)
    return mu_new, kappa + 1.0, T_new, nu + 1.0


def bocd_step(state: RunLengthState, x) -> tuple[RunLengthState, StepDecision]:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != state.dim:
        raise InputError(f"expected dimension {state.dim}, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise InputError("observation contains non-finite values")

    lam = state.hazard_lambda
    log_pi = predictive_log_density(state, x)
    if not np.any(np.isfinite(log_pi)):
        raise NumericError("every run-length predictive density underflowed")

    weighted = state.log_post + log_pi
    growth = weighted + math.log((lam - 1.0) / lam)
    log_change = float(logsumexp(weighted) - math.log(lam))
    # growth of the run opened at the last declared changepoint; a pruned
    # tracked run has growth -inf
    hit = np.flatnonzero(state.run_lengths == state.tracked_run_length)
    log_growth = float(growth[hit[0]]) if hit.size else -math.inf
    changepoint = log_change > log_growth

    joint = np.concatenate(([log_change], growth))
    log_norm = float(logsumexp(joint))
    log_post = joint - log_norm

    mu, kappa, T, nu = _nw_update_stack(state.mu, state.kappa, state.T, state.nu, x)
    p = state.prior
    d = state.dim
    mu = np.concatenate((p.mu0.reshape(1, d), mu))
    kappa = np.concatenate(([p.kappa], kappa))
    T = np.concatenate((p.T.reshape(1, d, d), T))
    nu = np.concatenate(([p.nu], nu))
    run_lengths = np.concatenate(([0], state.run_lengths + 1))
    count = np.concatenate(([0], state.count + 1))

    keep = None
    thr = state.truncation_log_threshold
    if thr is not None:
        keep = log_post >= thr
        keep[0] = True
        keep[int(np.argmax(log_post))] = True
        if keep.all():
            keep = None
    if keep is not None:
        log_post = log_post[keep]
        log_post = log_post - logsumexp(log_post)
        mu, kappa, T, nu = mu[keep], kappa[keep], T[keep], nu[keep]
        run_lengths, count = run_lengths[keep], count[keep]

    map_rl = int(run_lengths[int(np.argmax(log_post))])
    tracked = map_rl if changepoint else state.tracked_run_length + 1
    new_state = replace(
        state, run_lengths=run_lengths, log_post=log_post, mu=mu, kappa=kappa, T=T,
        nu=nu, count=count, log_evidence=state.log_evidence + log_norm, t=state.t + 1,
        tracked_run_length=tracked,
    )
    decision = StepDecision(
        changepoint=bool(changepoint),
        log_growth=log_growth,
        log_change=log_change,
        map_run_length=map_rl,
    )
    return new_state, decision


@dataclass(frozen=True)
class StudentTMixture:
    components: tuple[StudentTParams, ...]
    weights: np.ndarray

    def log_pdf(self, x) -> float:
        logs = np.array([student_t_log_pdf(x, c) for c in self.components])
        return float(logsumexp(logs, b=self.weights))

    def pdf(self, x) -> float:
        return math.exp(self.log_pdf(x))


def bocd_predictive(state: RunLengthState) -> StudentTMixture:
    """Posterior predictive of the next observation as a Student-t mixture."""
    if state.size == 0:
        raise InputError("state holds no hypotheses")
    comps = tuple(state.belief(i).predictive() for i in range(state.size))
    w = np.exp(state.log_post)
    return StudentTMixture(comps, w / w.sum())


@dataclass
class ChangepointDetector:
    """Mutable convenience wrapper: one detector per stream."""

    prior: NormalWishartParams
    hazard_lambda: float = 60.0
    truncation_log_threshold: float | None = -30.0
    predictive_mode: PredictiveMode = "plug-in"
    state: RunLengthState = field(init=False)

    def __post_init__(self):
        self.reset()

    def reset(self) -> None:
        self.state = bocd_init(self.prior, self.hazard_lambda,
                               truncation_log_threshold=self.truncation_log_threshold,
                               predictive_mode=self.predictive_mode)

    def update(self, x) -> StepDecision:
        self.state, decision = bocd_step(self.state, x)
        return decision

    def run(self, stream) -> list[StepDecision]:
        return [self.update(x) for x in np.asarray(stream, dtype=np.float64)]
