"""Minimal numpy layers with hand-written backward passes.

Every parameter array carries a leading member axis ``m`` so one batched
matmul advances all ensemble members at once.  Activations have shape
``(m, batch, features)``.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..errors import InputError

LOGVAR_MIN = -10.0
LOGVAR_MAX = 4.0


class Dense:
    def __init__(self, m: int, n_in: int, n_out: int, rng: np.random.Generator):
        # Glorot-uniform initialisation, independently per member
        lim = np.sqrt(6.0 / (n_in + n_out))
        self.W = rng.uniform(-lim, lim, size=(m, n_in, n_out))
        self.b = np.zeros((m, 1, n_out))
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self._x = None

    @property
    def params(self):
        return [self.W, self.b]

    @property
    def grads(self):
        return [self.dW, self.db]

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return np.matmul(x, self.W) + self.b

    def backward(self, g: np.ndarray) -> np.ndarray:
        self.dW[...] = np.matmul(np.swapaxes(self._x, 1, 2), g)
        self.db[...] = g.sum(axis=1, keepdims=True)
        return np.matmul(g, np.swapaxes(self.W, 1, 2))


class LeakyReLU:
    def __init__(self, slope: float = 0.01):
        self.slope = float(slope)
        self._mask = None

    params: list = []
    grads: list = []

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, self.slope * x)

    def backward(self, g: np.ndarray) -> np.ndarray:
        return np.where(self._mask, g, self.slope * g)


def softplus(x):
    return np.logaddexp(0.0, x)


class SoftClamp:
    """Smoothly squash log-variances into ``[lo, hi]``."""

    params: list = []
    grads: list = []

    def __init__(self, lo: float = LOGVAR_MIN, hi: float = LOGVAR_MAX):
        if not lo < hi:
            raise InputError("soft clamp needs lo < hi")
        self.lo, self.hi = float(lo), float(hi)
        self._d = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        u = self.hi - softplus(self.hi - x)
        y = self.lo + softplus(u - self.lo)
        self._d = expit(self.hi - x) * expit(u - self.lo)
        return y

    def backward(self, g: np.ndarray) -> np.ndarray:
        return g * self._d


def weighted_nll(mean: np.ndarray, logvar: np.ndarray, target: np.ndarray,
                 weights: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-member weighted Gaussian NLL and its gradients.

    ``loss[k] = mean_i w_i * sum_j [exp(-lv_ij) (mu_ij - y_ij)^2 + lv_ij]``.
    Leading axes are ``(m, batch)``; ``weights`` is ``(m, batch)`` or ``(batch,)``.
    Returns ``(loss per member, dloss/dmean, dloss/dlogvar)``.
    """
    if mean.shape != logvar.shape or mean.shape[-2:] != target.shape[-2:]:
        raise InputError(f"shape mismatch: mean {mean.shape}, logvar {logvar.shape}, target {target.shape}")
    w = np.broadcast_to(np.asarray(weights, dtype=np.float64), mean.shape[:-1])
    n = mean.shape[-2]
    inv = np.exp(-logvar)
    err = mean - target
    per = (inv * err * err + logvar).sum(axis=-1)
    loss = (w * per).sum(axis=-1) / n
    scale = (w / n)[..., None]
    dmean = scale * 2.0 * inv * err
    dlogvar = scale * (1.0 - inv * err * err)
    return loss, dmean, dlogvar


class GaussianMLP:
    """Stacked members mapping features to ``(mean, clamped log-variance)``."""

    def __init__(self, m: int, n_in: int, hidden: tuple[int, ...], n_out: int,
                 rng: np.random.Generator, slope: float = 0.01,
                 logvar_bounds: tuple[float, float] = (LOGVAR_MIN, LOGVAR_MAX)):
        self.m, self.n_in, self.n_out = m, n_in, n_out
        self.hidden = tuple(int(h) for h in hidden)
        self.layers = []
        width = n_in
        for h in self.hidden:
            self.layers += [Dense(m, width, h, rng), LeakyReLU(slope)]
            width = h
        self.layers.append(Dense(m, width, 2 * n_out, rng))
        self.clamp = SoftClamp(*logvar_bounds)

    @property
    def dense_layers(self) -> list[Dense]:
        return [l for l in self.layers if isinstance(l, Dense)]

    @property
    def params(self) -> list[np.ndarray]:
        return [p for l in self.layers for p in l.params]

    @property
    def grads(self) -> list[np.ndarray]:
        return [g for l in self.layers for g in l.grads]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if x.ndim == 2:
            x = np.broadcast_to(x, (self.m,) + x.shape)
        h = x
        for layer in self.layers:
            h = layer.forward(h)
        return h[..., :self.n_out], self.clamp.forward(h[..., self.n_out:])

    def backward(self, dmean: np.ndarray, dlogvar: np.ndarray) -> None:
        g = np.concatenate((dmean, self.clamp.backward(dlogvar)), axis=-1)
        for layer in reversed(self.layers):
            g = layer.backward(g)

    def forward_member(self, k: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Inference-only pass of member ``k`` on ``(batch, features)``."""
        return self._infer(x, lambda layer, h: h @ layer.W[k] + layer.b[k])

    def forward_stacked(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Inference-only pass of every member on its own ``(m, batch, features)`` slice."""
        return self._infer(x, lambda layer, h: h @ layer.W + layer.b)

    def _infer(self, x, affine):
        h = x
        for layer in self.layers:
            if isinstance(layer, Dense):
                h = affine(layer, h)
            else:
                h = np.where(h > 0, h, layer.slope * h)
        lv = h[..., self.n_out:]
        c = self.clamp
        lv = c.lo + softplus(c.hi - softplus(c.hi - lv) - c.lo)
        return h[..., :self.n_out], lv

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, l in enumerate(self.dense_layers):
            out[f"W{i}"] = l.W.copy()
            out[f"b{i}"] = l.b.copy()
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray], members=None) -> None:
        sel = slice(None) if members is None else members
        for i, l in enumerate(self.dense_layers):
            l.W[sel] = arrays[f"W{i}"][sel]
            l.b[sel] = arrays[f"b{i}"][sel]


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray], member_mask: np.ndarray | None = None) -> None:
        """Update in place; ``member_mask`` freezes members along axis 0."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1.0 - b1 ** self.t, 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            upd = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            if member_mask is not None:
                upd = upd * member_mask.reshape((-1,) + (1,) * (p.ndim - 1))
            p -= upd
