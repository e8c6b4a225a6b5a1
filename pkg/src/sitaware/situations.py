"""Situation library: online identification, creation and log-MGF symbols.

A situation is a Gaussian over the situation space (previous processed
state, previous action, current processed state).  Its scalar symbol is the
log moment-generating function evaluated at a fixed nonzero vector ``t``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal

import numpy as np
from scipy.linalg import solve_triangular

from .bocd import StepDecision
from .errors import ConfigError, InputError, NotFoundError, ParseError
from .stats import GaussianParams, NormalWishartParams, mahalanobis_many, mle_gaussian

log = logging.getLogger(__name__)

Mode = Literal["training", "testing"]
SYMBOL_COLLISION_TOL = 1e-9
FORMAT_NAME = "sitaware-situation-library"
FORMAT_VERSION = 1


def mgf_symbol(params: GaussianParams, t) -> float:
    """``t'mu + 0.5 t' inv(Lambda) t`` with the solve done through Cholesky."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    if t.size != params.dim:
        raise InputError(f"t has dimension {t.size}, params have {params.dim}")
    if not np.any(t != 0.0):
        raise ConfigError("t must be nonzero")
    # Lambda = L L', so t' inv(Lambda) t = |inv(L) t|^2
    z = solve_triangular(params.precision_cholesky, t, lower=True)
    return float(t @ params.mean + 0.5 * (z @ z))


@dataclass(frozen=True, eq=False)
class Situation:
    id: int
    params: GaussianParams
    symbol: float
    support: int

    def __post_init__(self):
        if self.id < 0:
            raise InputError("situation id must be nonnegative")
        if self.support < 1:
            raise InputError("situation support must be positive")

    @property
    def dim(self) -> int:
        return self.params.dim

    def __eq__(self, other):
        if not isinstance(other, Situation):
            return NotImplemented
        return (self.id == other.id and self.params == other.params
                and self.symbol == other.symbol and self.support == other.support)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class RunWindow:
    """Points collected since the last changepoint decision."""

    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts.reshape(1, -1)
        if pts.ndim != 2:
            raise InputError(f"window points must be 2-d, got shape {pts.shape}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def append(self, x) -> "RunWindow":
        x = np.asarray(x, dtype=np.float64).reshape(1, -1)
        if len(self) == 0:
            return RunWindow(x)
        return RunWindow(np.vstack((self.points, x)))

    def with_point(self, x) -> np.ndarray:
        return self.append(x).points

    def __eq__(self, other):
        if not isinstance(other, RunWindow):
            return NotImplemented
        return len(self) == len(other) and np.array_equal(self.points, other.points)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SituationLibrary:
    dim: int
    tau: float
    min_support: int
    t_vector: np.ndarray
    situations: tuple[Situation, ...] = ()
    mode: Mode = "training"
    # prior used to build the changepoint detector for this library
    detector_prior: NormalWishartParams | None = None

    def __post_init__(self):
        t = np.array(self.t_vector, dtype=np.float64).reshape(-1)
        if t.size != self.dim:
            raise ConfigError(f"t_vector has dimension {t.size}, library dimension is {self.dim}")
        if not np.any(t != 0.0):
            raise ConfigError("t_vector must be nonzero")
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        if self.min_support < 1:
            raise ConfigError("min_support must be positive")
        if self.mode not in ("training", "testing"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        t.setflags(write=False)
        object.__setattr__(self, "t_vector", t)
        sits = tuple(self.situations)
        for i, s in enumerate(sits):
            if s.id != i:
                raise InputError(f"situation ids must be dense from 0; position {i} has id {s.id}")
            if s.dim != self.dim:
                raise InputError(f"situation {s.id} has dimension {s.dim}, library has {self.dim}")
        object.__setattr__(self, "situations", sits)
        if self.detector_prior is not None and self.detector_prior.dim != self.dim:
            raise InputError("detector prior dimension does not match the library")

    def __len__(self) -> int:
        return len(self.situations)

    @property
    def symbols(self) -> np.ndarray:
        return np.array([s.symbol for s in self.situations])

    def by_symbol(self, symbol: float) -> Situation:
        for s in self.situations:
            if s.symbol == symbol:
                return s
        raise InputError(f"no situation carries symbol {symbol!r}")

    def with_mode(self, mode: Mode) -> "SituationLibrary":
        return replace(self, mode=mode)

    def add(self, params: GaussianParams, support: int) -> tuple["SituationLibrary", Situation]:
        """Append a situation, nudging its symbol off any existing one."""
        symbol = mgf_symbol(params, self.t_vector)
        existing = self.symbols
        if existing.size and np.any(np.abs(existing - symbol) <= SYMBOL_COLLISION_TOL):
            old = symbol
            while np.any(existing == symbol):
                symbol = float(np.nextafter(symbol, math.inf))
            if symbol == old:
                symbol = float(np.nextafter(symbol, math.inf))
            log.warning("situation symbol %r collides with the library; nudged to %r", old, symbol)
        sit = Situation(len(self.situations), params, symbol, int(support))
        return replace(self, situations=self.situations + (sit,)), sit

    def __eq__(self, other):
        if not isinstance(other, SituationLibrary):
            return NotImplemented
        return (self.dim == other.dim and self.tau == other.tau
                and self.min_support == other.min_support
                and np.array_equal(self.t_vector, other.t_vector)
                and self.situations == other.situations and self.mode == other.mode
                and self.detector_prior == other.detector_prior)

    __hash__ = None


def new_library(dim: int, tau: float, min_support: int, t_value: float = 0.1,
                mode: Mode = "training") -> SituationLibrary:
    return SituationLibrary(dim, tau, min_support, np.full(dim, float(t_value)), (), mode)


def avg_mahalanobis(window, situation: Situation) -> float:
    pts = window.points if isinstance(window, RunWindow) else np.atleast_2d(np.asarray(window, float))
    if pts.shape[0] == 0:
        raise InputError("window is empty")
    return float(np.mean(mahalanobis_many(pts, situation.params)))


def nearest(library: SituationLibrary, points: np.ndarray) -> tuple[Situation, float]:
    """Closest situation by average Mahalanobis distance; ties go to the lowest id."""
    if len(library) == 0:
        raise ConfigError("situation library is empty")
    best, best_d = None, math.inf
    for s in sorted(library.situations, key=lambda s: s.id):
        d = avg_mahalanobis(points, s)
        if d < best_d:
            best, best_d = s, d
    if best is None:
        # every distance was inf or nan
        best = min(library.situations, key=lambda s: s.id)
    return best, best_d


@dataclass(frozen=True)
class Identification:
    active: Situation | None
    library: SituationLibrary
    window: RunWindow
    distance: float
    created: bool


def identify(library: SituationLibrary, window: RunWindow, x, decision: StepDecision) -> Identification:
    """One step of online situation identification.

    Matching uses ``window + {x}``.  With an empty training library the first
    window reaching ``min_support`` points becomes the bootstrap situation.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != library.dim:
        raise InputError(f"expected situation vector of dimension {library.dim}, got {x.size}")
    if len(window) and window.points.shape[1] != library.dim:
        raise InputError("window dimension does not match the library")
    pts = window.with_point(x)

    if len(library) == 0:
        if library.mode == "testing":
            raise ConfigError("cannot identify situations against an empty library in testing mode")
        created = False
        active = None
        if pts.shape[0] >= library.min_support:
            library, active = library.add(mle_gaussian(pts), pts.shape[0])
            created = True
        new_window = RunWindow() if decision.changepoint else RunWindow(pts)
        return Identification(active, library, new_window, math.inf, created)

    active, dist = nearest(library, pts)
    created = False
    if (decision.changepoint and dist >= library.tau and library.mode == "training"
            and len(window) >= library.min_support):
        library, active = library.add(mle_gaussian(window.points), len(window))
        created = True
    new_window = RunWindow() if decision.changepoint else RunWindow(pts)
    return Identification(active, library, new_window, dist, created)


def _hex_list(a) -> list[str]:
    return [float(v).hex() for v in np.asarray(a, dtype=np.float64).reshape(-1)]


def _nw_to_doc(p: NormalWishartParams) -> dict:
    return {"mu0": _hex_list(p.mu0), "kappa": float(p.kappa).hex(), "T": _hex_list(p.T), "nu": float(p.nu).hex()}


def serialize_library(library: SituationLibrary) -> str:
    """JSON document; doubles are stored as hexadecimal float strings."""
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "dim": library.dim,
        "tau": float(library.tau).hex(),
        "min_support": library.min_support,
        "t_vector": _hex_list(library.t_vector),
        "mode": library.mode,
        "situations": [
            {"id": s.id, "symbol": float(s.symbol).hex(), "mean": _hex_list(s.params.mean),
             "precision": _hex_list(s.params.precision), "support": s.support}
            for s in library.situations
        ],
    }
    if library.detector_prior is not None:
        doc["detector_prior"] = _nw_to_doc(library.detector_prior)
    return json.dumps(doc, indent=1)


class _Reader:
    def __init__(self, doc):
        self.doc = doc

    @staticmethod
    def get(obj, key, where):
        if not isinstance(obj, dict):
            raise ParseError("expected an object", where)
        if key not in obj:
            raise ParseError(f"missing field {key!r}", where)
        return obj[key]

    @staticmethod
    def real(v, where) -> float:
        if isinstance(v, str):
            try:
                return float.fromhex(v)
            except ValueError:
                raise ParseError(f"bad hexadecimal float {v!r}", where) from None
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            return float(v)
        raise ParseError("expected a number", where)

    @classmethod
    def reals(cls, v, n, where) -> np.ndarray:
        if not isinstance(v, list):
            raise ParseError("expected a list", where)
        if len(v) != n:
            raise ParseError(f"expected {n} values, got {len(v)}", where)
        return np.array([cls.real(e, f"{where}[{i}]") for i, e in enumerate(v)])

    @staticmethod
    def integer(v, where) -> int:
        if isinstance(v, bool) or not isinstance(v, int):
            raise ParseError("expected an integer", where)
        return v


def deserialize_library(text: str) -> SituationLibrary:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, f"line {exc.lineno} column {exc.colno}") from None
    r = _Reader
    if r.get(doc, "format", "$") != FORMAT_NAME:
        raise ParseError("not a situation library document", "$.format")
    if r.get(doc, "version", "$") != FORMAT_VERSION:
        raise ParseError("unsupported version", "$.version")
    d = r.integer(r.get(doc, "dim", "$"), "$.dim")
    if d < 1:
        raise ParseError("dimension must be positive", "$.dim")
    tau = r.real(r.get(doc, "tau", "$"), "$.tau")
    min_support = r.integer(r.get(doc, "min_support", "$"), "$.min_support")
    t = r.reals(r.get(doc, "t_vector", "$"), d, "$.t_vector")
    mode = r.get(doc, "mode", "$")
    raw = r.get(doc, "situations", "$")
    if not isinstance(raw, list):
        raise ParseError("expected a list", "$.situations")
    sits, seen = [], set()
    for i, item in enumerate(raw):
        where = f"$.situations[{i}]"
        sid = r.integer(r.get(item, "id", where), where + ".id")
        if sid in seen:
            raise ParseError(f"duplicated situation id {sid}", where + ".id")
        seen.add(sid)
        mean = r.reals(r.get(item, "mean", where), d, where + ".mean")
        prec = r.reals(r.get(item, "precision", where), d * d, where + ".precision").reshape(d, d)
        try:
            params = GaussianParams(mean, prec)
        except (InputError, ArithmeticError) as exc:
            raise ParseError(str(exc), where + ".precision") from None
        sits.append(Situation(sid, params, r.real(r.get(item, "symbol", where), where + ".symbol"),
                              r.integer(r.get(item, "support", where), where + ".support")))
    sits.sort(key=lambda s: s.id)
    prior = None
    if "detector_prior" in doc:
        p = doc["detector_prior"]
        where = "$.detector_prior"
        prior = NormalWishartParams(
            r.reals(r.get(p, "mu0", where), d, where + ".mu0"),
            r.real(r.get(p, "kappa", where), where + ".kappa"),
            r.reals(r.get(p, "T", where), d * d, where + ".T").reshape(d, d),
            r.real(r.get(p, "nu", where), where + ".nu"),
        )
    try:
        return SituationLibrary(d, tau, min_support, t, tuple(sits), mode, prior)
    except (InputError, ConfigError) as exc:
        raise ParseError(str(exc), "$") from None


def save_library(library: SituationLibrary, path) -> None:
    Path(path).write_text(serialize_library(library))


def load_library(path) -> SituationLibrary:
    p = Path(path)
    if not p.is_file():
        raise NotFoundError(f"situation library not found: {p}")
    return deserialize_library(p.read_text())


def export_means(library: SituationLibrary, path) -> None:
    """One CSV row per situation: id, symbol, mean coordinates."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "symbol"] + [f"m{i}" for i in range(library.dim)])
        for s in library.situations:
            w.writerow([s.id, repr(s.symbol)] + [repr(float(v)) for v in s.params.mean])
