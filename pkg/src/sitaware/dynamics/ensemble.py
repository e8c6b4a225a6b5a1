"""Probabilistic ensemble dynamics model: training, prediction, rollout."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, InputError, NotFoundError, ParseError, TrainingError
from .buffer import ReplayBuffer, symbol_weights
from .features import PROCESSED_DIM, TARGET_DIM, apply_target, model_features, preprocess_state, transition_target
from .nn import Adam, GaussianMLP, weighted_nll

log = logging.getLogger(__name__)

SCALE_FLOOR = 1e-8


@dataclass(frozen=True)
class EnsembleConfig:
    members: int = 5
    hidden: tuple[int, ...] = (200, 200, 200)
    leaky_slope: float = 0.01
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 256
    patience: int = 16
    min_improvement: float = 1e-3
    holdout_fraction: float = 0.1
    bootstrap: bool = True
    use_symbol: bool = True
    weighted: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.members < 1 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("members, batch_size, max_epochs and patience must be positive")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ConfigError("holdout_fraction must lie in [0, 1)")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")


@dataclass(frozen=True, eq=False)
class NormStats:
    in_mean: np.ndarray
    in_scale: np.ndarray
    out_mean: np.ndarray
    out_scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray, Y: np.ndarray) -> "NormStats":
        # constant targets keep a vanishing scale so predictions reproduce them
        return cls(X.mean(axis=0), _scale(X, 1.0), Y.mean(axis=0), _scale(Y, SCALE_FLOOR))

    def norm_in(self, x):
        return (x - self.in_mean) / self.in_scale

    def norm_out(self, y):
        return (y - self.out_mean) / self.out_scale

    def denorm_out(self, y):
        return y * self.out_scale + self.out_mean

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("in_mean", "in_scale", "out_mean", "out_scale")}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(*(np.array(d[k], dtype=np.float64) for k in ("in_mean", "in_scale", "out_mean", "out_scale")))


def _scale(a: np.ndarray, fallback: float) -> np.ndarray:
    # constant inputs keep unit scale so unseen values stay bounded
    sd = a.std(axis=0)
    return np.where(sd < SCALE_FLOOR, fallback, sd)


@dataclass
class Prediction:
    """Per-member Gaussians over the 15-d transition target."""

    member_mean: np.ndarray
    member_var: np.ndarray
    current_processed: np.ndarray

    @property
    def mean(self) -> np.ndarray:
        return self.member_mean.mean(axis=0)

    @property
    def var(self) -> np.ndarray:
        # moment-matched mixture: E[var] + Var[mean]
        mu = self.mean
        return (self.member_var + self.member_mean**2).mean(axis=0) - mu**2

    @property
    def member_next_processed(self) -> np.ndarray:
        return self.current_processed + self.member_mean[..., :PROCESSED_DIM]

    @property
    def next_processed(self) -> np.ndarray:
        return self.current_processed + self.mean[..., :PROCESSED_DIM]


@dataclass
class TrainingHistory:
    epochs: int = 0
    holdout_loss: list = field(default_factory=list)
    best_loss: list = field(default_factory=list)
    stopped_epoch: list = field(default_factory=list)


class EnsembleModel:
    def __init__(self, net: GaussianMLP, norm: NormStats, config: EnsembleConfig, action_dim: int,
                 history: TrainingHistory | None = None):
        self.net = net
        self.norm = norm
        self.config = config
        self.action_dim = action_dim
        self.history = history or TrainingHistory()

    @property
    def m(self) -> int:
        return self.net.m

    @property
    def use_symbol(self) -> bool:
        return self.config.use_symbol

    def features(self, state, symbol, action) -> np.ndarray:
        return model_features(state, symbol, action, self.use_symbol)

    def _member_target(self, k: int, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        mu, lv = self.net.forward_member(k, self.norm.norm_in(X))
        return self.norm.denorm_out(mu), np.exp(lv) * self.norm.out_scale**2

    def predict(self, state, symbol, action) -> Prediction:
        state = np.asarray(state, dtype=np.float64)
        action = np.asarray(action, dtype=np.float64)
        if action.shape[-1] != self.action_dim:
            raise InputError(f"expected action dimension {self.action_dim}, got {action.shape[-1]}")
        X = self.features(state, symbol, action)
        lead = X.shape[:-1]
        X2 = X.reshape(-1, X.shape[-1])
        means, vars_ = [], []
        for k in range(self.m):
            mu, var = self._member_target(k, X2)
            means.append(mu.reshape(lead + (TARGET_DIM,)))
            vars_.append(var.reshape(lead + (TARGET_DIM,)))
        return Prediction(np.stack(means), np.stack(vars_), preprocess_state(state))

    def step_member(self, k: int, states: np.ndarray, symbol, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Next raw states and target variances for member ``k`` on a batch."""
        X = self.features(states, symbol, actions)
        mu, var = self._member_target(k, X)
        return apply_target(states, mu), var

    def rollout(self, start, symbol, actions, seed=None, noise: bool = False,
                members: np.ndarray | None = None) -> np.ndarray:
        """Autoregressive raw-state trajectories, shape ``(N, H + 1, 12)``.

        ``actions`` is ``(H, a)`` or ``(N, H, a)``.  Each trajectory is bound to
        one member for its whole length; the symbol is held fixed.
        """
        actions = np.asarray(actions, dtype=np.float64)
        if actions.ndim == 2:
            actions = actions[None]
        N, H, _ = actions.shape
        if H < 1:
            raise InputError("horizon must be at least 1")
        rng = np.random.default_rng(seed)
        if members is None:
            # balanced assignment keeps the stacked forward pass applicable
            members = rng.permutation(np.arange(N) % self.m)
        members = np.asarray(members)
        start = np.asarray(start, dtype=np.float64)
        traj = np.empty((N, H + 1, start.shape[-1]))
        traj[:, 0] = start
        groups = [(k, np.flatnonzero(members == k)) for k in range(self.m)]
        stacked = len({idx.size for _, idx in groups}) == 1
        if stacked:
            order = np.concatenate([idx for _, idx in groups])
        groups = [(k, idx) for k, idx in groups if idx.size]
        mu = np.empty((N, TARGET_DIM))
        lv = np.empty((N, TARGET_DIM))
        for h in range(H):
            s = traj[:, h]
            Xn = self.norm.norm_in(self.features(s, symbol, actions[:, h]))
            if stacked:
                m_mu, m_lv = self.net.forward_stacked(Xn[order].reshape(self.m, N // self.m, -1))
                mu[order], lv[order] = m_mu.reshape(N, -1), m_lv.reshape(N, -1)
            else:
                for k, idx in groups:
                    mu[idx], lv[idx] = self.net.forward_member(k, Xn[idx])
            mean = self.norm.denorm_out(mu)
            if noise:
                mean = mean + rng.standard_normal(mean.shape) * np.sqrt(np.exp(lv)) * self.norm.out_scale
            traj[:, h + 1] = apply_target(s, mean)
        return traj

    def mean_rollouts(self, start, symbol, actions) -> np.ndarray:
        """Noise-free trajectories of every member for every sequence: ``(m, N, H+1, 12)``."""
        actions = np.asarray(actions, dtype=np.float64)
        if actions.ndim == 2:
            actions = actions[None]
        N = actions.shape[0]
        tiled = np.broadcast_to(actions, (self.m,) + actions.shape).reshape(-1, *actions.shape[1:])
        traj = self.rollout(start, symbol, tiled, members=np.repeat(np.arange(self.m), N))
        return traj.reshape(self.m, N, *traj.shape[1:])

    def save(self, path) -> None:
        meta = {
            "config": asdict(self.config),
            "norm": self.norm.to_dict(),
            "action_dim": self.action_dim,
            "n_in": self.net.n_in,
            "n_out": self.net.n_out,
            "history": asdict(self.history),
        }
        arrays = self.net.state_arrays()
        with open(path, "wb") as fh:
            np.savez(fh, meta=np.array(json.dumps(meta)), **arrays)

    @classmethod
    def load(cls, path) -> "EnsembleModel":
        p = Path(path)
        if not p.is_file():
            raise NotFoundError(f"model checkpoint not found: {p}")
        try:
            with np.load(p, allow_pickle=False) as data:
                meta = json.loads(str(data["meta"]))
                arrays = {k: data[k] for k in data.files if k != "meta"}
        except (ValueError, KeyError, OSError) as exc:
            raise ParseError(f"unreadable model checkpoint: {exc}", str(p)) from None
        cfg = EnsembleConfig(**meta["config"])
        net = GaussianMLP(cfg.members, meta["n_in"], cfg.hidden, meta["n_out"],
                          np.random.default_rng(0), cfg.leaky_slope)
        net.load_arrays(arrays)
        return cls(net, NormStats.from_dict(meta["norm"]), cfg, meta["action_dim"],
                   TrainingHistory(**meta["history"]))


def _normalized(w: np.ndarray) -> np.ndarray:
    return w / w.mean(axis=-1, keepdims=True)


def training_arrays(buffer: ReplayBuffer, use_symbol: bool, weighted: bool = True):
    s, th, a, s2 = buffer.arrays()
    have_symbols = bool(np.all(np.isfinite(th)))
    if use_symbol and not have_symbols:
        raise InputError("every transition needs a symbol to train a symbol-aware model")
    X = model_features(s, th, a, use_symbol)
    Y = transition_target(s, s2)
    w = symbol_weights(th) if (weighted and have_symbols) else np.ones(len(buffer))
    return X, Y, w


def train_ensemble(buffer: ReplayBuffer, config: EnsembleConfig = EnsembleConfig(),
                   seed: int = 0) -> EnsembleModel:
    if len(buffer) == 0:
        raise InputError("cannot train on an empty replay buffer")
    X, Y, w = training_arrays(buffer, config.use_symbol, config.weighted)
    n = X.shape[0]
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_hold = int(math.ceil(config.holdout_fraction * n)) if n >= 10 else 0
    hold, train = order[:n_hold], order[n_hold:]

    norm = NormStats.fit(X[train], Y[train])
    Xn, Yn = norm.norm_in(X), norm.norm_out(Y)
    m = config.members
    net = GaussianMLP(m, X.shape[1], config.hidden, Y.shape[1], rng, config.leaky_slope)
    opt = Adam(net.params, lr=config.learning_rate)

    n_train = train.size
    if config.bootstrap:
        boot = train[rng.integers(0, n_train, size=(m, n_train))]
    else:
        boot = np.broadcast_to(train, (m, n_train)).copy()
    eval_idx = hold if n_hold else train
    Xe, Ye, we = Xn[eval_idx], Yn[eval_idx], _normalized(w[eval_idx])

    active = np.ones(m, dtype=bool)
    best = np.full(m, np.inf)
    wait = np.zeros(m, dtype=int)
    best_arrays = net.state_arrays()
    hist = TrainingHistory(stopped_epoch=[config.max_epochs] * m)
    B = config.batch_size
    for epoch in range(config.max_epochs):
        perm = np.stack([rng.permutation(n_train) for _ in range(m)])
        shuffled = np.take_along_axis(boot, perm, axis=1)
        for start in range(0, n_train, B):
            idx = shuffled[:, start:start + B]
            mu, lv = net.forward(Xn[idx])
            loss, dmu, dlv = weighted_nll(mu, lv, Yn[idx], _normalized(w[idx]))
            net.backward(dmu, dlv)
            opt.step(net.grads, active.astype(np.float64))
        mu, lv = net.forward(Xe)
        h_loss, _, _ = weighted_nll(mu, lv, Ye, we)
        if not np.all(np.isfinite(h_loss)):
            raise TrainingError(f"non-finite held-out loss at epoch {epoch}: {h_loss.tolist()}")
        hist.holdout_loss.append(h_loss.tolist())
        improved = active & (best - h_loss >= config.min_improvement)
        if np.any(improved):
            best[improved] = h_loss[improved]
            snap = net.state_arrays()
            for key in best_arrays:
                best_arrays[key][improved] = snap[key][improved]
        wait = np.where(improved, 0, wait + active)
        newly = active & (wait >= config.patience)
        for k in np.flatnonzero(newly):
            hist.stopped_epoch[k] = epoch + 1
        active &= ~newly
        hist.epochs = epoch + 1
        if not active.any():
            break
    net.load_arrays(best_arrays)
    hist.best_loss = best.tolist()
    log.debug("ensemble trained for %d epochs, best held-out loss %s", hist.epochs, best)
    return EnsembleModel(net, norm, config, buffer[0].action.size, hist)
