"""Gaussian, Normal-Wishart and Student-t building blocks.

Everything works in log space and goes through Cholesky factors; no matrix is
ever explicitly inverted except when a precision is *defined* as an inverse
(``mle_gaussian``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln

from .errors import ConfigError, DegenerateError, InputError, SupportError

LOG_2PI = math.log(2.0 * math.pi)


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def cholesky(a: np.ndarray, what: str = "matrix") -> np.ndarray:
    """Lower Cholesky factor of the symmetrized matrix (stacks allowed)."""
    try:
        return np.linalg.cholesky(symmetrize(a))
    except np.linalg.LinAlgError as exc:
        raise DegenerateError(f"{what} is not positive definite") from exc


def _frozen(a, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if arr.ndim != ndim:
        raise InputError(f"{name} must be {ndim}-d, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


def _check_square(mat: np.ndarray, d: int, name: str) -> None:
    if mat.shape != (d, d):
        raise InputError(f"{name} must be {d}x{d}, got {mat.shape}")


@dataclass(frozen=True, eq=False)
class GaussianParams:
    """Multivariate normal in mean/precision form."""

    mean: np.ndarray
    precision: np.ndarray
    _chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mean = _frozen(self.mean, 1, "mean")
        prec = _frozen(symmetrize(np.asarray(self.precision, dtype=np.float64)), 2, "precision")
        _check_square(prec, mean.size, "precision")
        chol = cholesky(prec, "precision")
        chol.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "precision", prec)
        object.__setattr__(self, "_chol", chol)

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def precision_cholesky(self) -> np.ndarray:
        return self._chol

    def covariance(self) -> np.ndarray:
        inv_l = solve_triangular(self._chol, np.eye(self.dim), lower=True)
        return inv_l.T @ inv_l

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Return ``precision^{-1} @ b`` via the Cholesky factor."""
        y = solve_triangular(self._chol, b, lower=True)
        return solve_triangular(self._chol.T, y, lower=False)

    def __eq__(self, other):
        if not isinstance(other, GaussianParams):
            return NotImplemented
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.precision, other.precision)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class NormalWishartParams:
    """Normal-Wishart belief ``(mu0, kappa, T, nu)``.

    ``T`` is the inverse-scale (scatter) accumulator: the Wishart mean of the
    precision is ``nu * inv(T)``.
    """

    mu0: np.ndarray
    kappa: float
    T: np.ndarray
    nu: float

    def __post_init__(self):
        mu0 = _frozen(self.mu0, 1, "mu0")
        T = _frozen(symmetrize(np.asarray(self.T, dtype=np.float64)), 2, "T")
        d = mu0.size
        _check_square(T, d, "T")
        if not self.kappa > 0:
            raise InputError(f"kappa must be > 0, got {self.kappa}")
        if not self.nu >= d:
            raise InputError(f"nu must be >= d={d}, got {self.nu}")
        cholesky(T, "T")
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "kappa", float(self.kappa))
        object.__setattr__(self, "nu", float(self.nu))

    @property
    def dim(self) -> int:
        return self.mu0.size

    @classmethod
    def weak(cls, dim: int, scale: float = 1.0, mean=None, kappa: float = 1.0, extra_dof: float = 2.0):
        """Isotropic prior whose expected covariance is ``scale**2 * I``."""
        nu = dim + extra_dof
        mu0 = np.zeros(dim) if mean is None else np.asarray(mean, dtype=np.float64)
        return cls(mu0, kappa, nu * scale**2 * np.eye(dim), nu)

    @classmethod
    def empirical(cls, points, inflation: float = 3.0, kappa: float = 1.0,
                  extra_dof: float = 2.0, floor: float = 1e-6, covariance: str = "diagonal"):
        """Prior centred on ``points`` with their spread inflated by ``inflation``.

        ``covariance`` is ``"diagonal"`` (per-coordinate variances) or
        ``"full"`` (sample covariance).  ``floor`` times the mean variance is
        added (full) or used as a lower bound (diagonal) so the scale matrix
        stays positive definite.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        dim = pts.shape[1]
        var = pts.var(axis=0)
        ref = float(var.mean()) if var.mean() > 0 else 1.0
        if covariance == "diagonal":
            scatter = np.diag(np.maximum(var, floor * ref))
        elif covariance == "full":
            centred = pts - pts.mean(axis=0)
            scatter = symmetrize(centred.T @ centred / pts.shape[0]) + floor * ref * np.eye(dim)
        else:
            raise ConfigError(f"covariance must be diagonal or full, got {covariance!r}")
        nu = dim + extra_dof
        return cls(pts.mean(axis=0), kappa, nu * inflation**2 * scatter, nu)

    def plugin_gaussian(self) -> GaussianParams:
        """Gaussian with the posterior-mean precision ``nu * inv(T)``."""
        chol = cholesky(self.T, "T")
        inv_l = solve_triangular(chol, np.eye(self.dim), lower=True)
        return GaussianParams(self.mu0, self.nu * (inv_l.T @ inv_l))

    def predictive(self) -> "StudentTParams":
        d = self.dim
        dof = self.nu - d + 1.0
        if dof <= 0:
            raise DegenerateError(f"predictive dof nu-d+1 = {dof} <= 0")
        shape = self.T * (self.kappa + 1.0) / (self.kappa * dof)
        return StudentTParams(self.mu0, shape, dof)

    def __eq__(self, other):
        if not isinstance(other, NormalWishartParams):
            return NotImplemented
        return (np.array_equal(self.mu0, other.mu0) and self.kappa == other.kappa
                and np.array_equal(self.T, other.T) and self.nu == other.nu)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class StudentTParams:
    loc: np.ndarray
    shape: np.ndarray
    dof: float

    def __post_init__(self):
        loc = _frozen(self.loc, 1, "loc")
        shape = _frozen(symmetrize(np.asarray(self.shape, dtype=np.float64)), 2, "shape")
        _check_square(shape, loc.size, "shape")
        if not self.dof > 0:
            raise InputError(f"dof must be > 0, got {self.dof}")
        cholesky(shape, "shape")
        object.__setattr__(self, "loc", loc)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "dof", float(self.dof))

    @property
    def dim(self) -> int:
        return self.loc.size


def _as_point(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape != (d,):
        raise InputError(f"expected a vector of dimension {d}, got shape {x.shape}")
    return x


def gaussian_log_pdf(x, params: GaussianParams) -> float:
    x = _as_point(x, params.dim)
    chol = params.precision_cholesky
    z = chol.T @ (x - params.mean)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return float(0.5 * logdet - 0.5 * params.dim * LOG_2PI - 0.5 * z @ z)


def student_t_log_pdf(x, params: StudentTParams) -> float:
    d = params.dim
    x = _as_point(x, d)
    chol = cholesky(params.shape, "shape")
    z = solve_triangular(chol, x - params.loc, lower=True)
    nu = params.dof
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return float(
        gammaln(0.5 * (nu + d)) - gammaln(0.5 * nu)
        - 0.5 * d * math.log(nu * math.pi) - 0.5 * logdet
        - 0.5 * (nu + d) * math.log1p(z @ z / nu)
    )


def mahalanobis(x, params: GaussianParams) -> float:
    x = _as_point(x, params.dim)
    z = params.precision_cholesky.T @ (x - params.mean)
    return float(math.sqrt(z @ z))


def mahalanobis_many(points, params: GaussianParams) -> np.ndarray:
    """Row-wise Mahalanobis distances of an ``(n, d)`` array."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.shape[1] != params.dim:
        raise InputError(f"expected points of dimension {params.dim}, got {pts.shape[1]}")
    z = (pts - params.mean) @ params.precision_cholesky
    return np.sqrt(np.einsum("ij,ij->i", z, z))


def default_jitter(cov: np.ndarray, rel: float = 1e-6) -> float:
    d = cov.shape[0]
    return rel * float(np.trace(cov)) / d


def mle_gaussian(points: Sequence, jitter: float | None = None, min_support: int | None = None,
                 rel_jitter: float = 1e-6) -> GaussianParams:
    """Maximum-likelihood Gaussian of ``points`` (1/n covariance).

    ``jitter`` is added to the covariance diagonal before inversion; when
    ``None`` it defaults to ``rel_jitter * trace(cov) / d``.  ``min_support``
    defaults to ``d + 1``.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise InputError(f"points must be an (n, d) array, got shape {pts.shape}")
    n, d = pts.shape
    need = d + 1 if min_support is None else int(min_support)
    if n < need or n == 0:
        raise SupportError(f"{n} points given, at least {need} required")
    if jitter is not None and jitter < 0:
        raise InputError("jitter must be nonnegative")
    # sort rows so the result does not depend on point order
    order = np.lexsort(pts.T[::-1])
    pts = pts[order]
    mean = pts.mean(axis=0)
    centred = pts - mean
    cov = symmetrize(centred.T @ centred / n)
    eps = default_jitter(cov, rel_jitter) if jitter is None else float(jitter)
    reg = cov + eps * np.eye(d)
    try:
        chol = np.linalg.cholesky(reg)
    except np.linalg.LinAlgError as exc:
        raise DegenerateError("sample covariance is singular even after jitter") from exc
    inv_l = solve_triangular(chol, np.eye(d), lower=True)
    prec = inv_l.T @ inv_l
    if not np.all(np.isfinite(prec)):
        raise DegenerateError("sample covariance is singular even after jitter")
    return GaussianParams(mean, prec)
