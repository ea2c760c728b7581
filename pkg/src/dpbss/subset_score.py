"""Bounded best-subset utility and its sensitivity.

The utility of a size-``s`` model ``gamma`` is the negated residual sum of
squares of the ell-1-constrained least-squares fit on the columns in
``gamma``::

    u_K(gamma) = -min_{||theta||_1 <= K} ||y - X_gamma theta||^2

Bounding the coefficients keeps the change of ``u_K`` under adding or removing
one record below ``(r + x_max K)^2``, which is what calibrates the exponential
mechanism.
"""

from __future__ import annotations

import enum
import math
import threading
import weakref
from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

import numpy as np

from . import _kernels
from .dataset import Dataset, RegularityParams

ModelState = Tuple[int, ...]

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 5000
DEFAULT_CACHE_SIZE = 2 ** 20


def as_model(indices: Iterable[int], p: Optional[int] = None) -> ModelState:
    """Canonical (sorted, duplicate-free) form of an index set."""
    model = tuple(sorted(int(j) for j in indices))
    if len(set(model)) != len(model):
        raise ValueError(f"duplicate indices in model {model}")
    if model and (model[0] < 0 or (p is not None and model[-1] >= p)):
        raise ValueError(f"model {model} has indices outside [0, {p})")
    return model


class SolverStatus(str, enum.Enum):
    UNCONSTRAINED_OPTIMAL = "UnconstrainedOptimal"
    PROJECTED_CONVERGED = "ProjectedConverged"
    MAX_ITERATIONS = "MaxIterations"


_STATUS = {
    _kernels.UNCONSTRAINED: SolverStatus.UNCONSTRAINED_OPTIMAL,
    _kernels.PROJECTED: SolverStatus.PROJECTED_CONVERGED,
    _kernels.MAX_ITER: SolverStatus.MAX_ITERATIONS,
}


@dataclass(frozen=True, eq=False)
class ScoreResult:
    """Fit of one model: RSS, coefficients, explained fraction, solver status."""

    model: ModelState
    rss: float
    coef: np.ndarray
    r_gamma: float
    solver_status: SolverStatus
    rank_deficient: bool = False
    iterations: int = 0

    @property
    def utility(self) -> float:
        return -self.rss

    def to_dict(self) -> dict:
        return {
            "model": list(self.model),
            "rss": self.rss,
            "coef": [float(c) for c in self.coef],
            "r_gamma": self.r_gamma,
            "solver_status": self.solver_status.value,
            "rank_deficient": self.rank_deficient,
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScoreResult":
        return cls(tuple(d["model"]), float(d["rss"]), np.asarray(d["coef"], dtype=float),
                   float(d["r_gamma"]), SolverStatus(d["solver_status"]),
                   bool(d.get("rank_deficient", False)), int(d.get("iterations", 0)))


def sensitivity_bound(r: float, x_max: float, K: float) -> float:
    """Global sensitivity bound ``(r + x_max K)^2`` of the constrained utility."""
    if r < 0 or x_max < 0 or K < 0:
        raise ValueError("r, x_max and K must be nonnegative")
    return (r + x_max * K) ** 2


def recommended_K(reg: RegularityParams, x_max: float, s: int) -> float:
    """Smallest ell-1 radius covered by the utility guarantee.

    ``sqrt(s) * (kappa_plus / kappa_minus * b_max + 8 x_max sigma / kappa_minus)``
    """
    return math.sqrt(s) * (reg.kappa_plus / reg.kappa_minus * reg.b_max
                           + 8.0 * x_max / reg.kappa_minus * reg.sigma)


@dataclass(frozen=True)
class PrivacyParams:
    """Privacy budget and ell-1 radius, plus the data bounds they are paired with.

    ``delta_K`` is always recomputed from ``(r, x_max, K)``. ``delta`` is the
    approximate-DP slack of a chain run to ``eta``-mixing (0 without ``eta``).
    """

    epsilon: float
    K: float
    r: float
    x_max: float
    eta: Optional[float] = None

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.K < 0:
            raise ValueError("K must be nonnegative")

    @classmethod
    def for_dataset(cls, ds: Dataset, epsilon: float, K: float,
                    eta: Optional[float] = None) -> "PrivacyParams":
        return cls(float(epsilon), float(K), ds.r, ds.x_max, eta)

    @property
    def delta_K(self) -> float:
        return sensitivity_bound(self.r, self.x_max, self.K)

    @property
    def delta(self) -> float:
        from .exp_mechanism import approx_dp_delta
        return 0.0 if self.eta is None else approx_dp_delta(self.eta, self.epsilon)

    @property
    def inverse_temperature(self) -> float:
        """``epsilon / delta_K``, the factor applied to utilities."""
        if self.epsilon == 0:
            return 0.0
        dk = self.delta_K
        if dk == 0:
            raise ValueError("zero sensitivity bound with positive epsilon")
        return self.epsilon / dk


def _fit(ds: Dataset, gamma: ModelState, K: float, tol: float, max_iter: int,
         constrained: bool) -> ScoreResult:
    idx = np.fromiter(gamma, dtype=np.int64, count=len(gamma))
    yy = ds.yy
    theta, rss, status, deficient, iters = _kernels.score_kernel(
        ds.columns, ds.y, yy, idx, float(K), float(tol), int(max_iter), constrained)
    r_gamma = (yy - rss) / yy if yy > 0 else 0.0
    theta.setflags(write=False)
    return ScoreResult(gamma, float(rss), theta, float(r_gamma), _STATUS[int(status)],
                       bool(deficient), int(iters))


def constrained_rss(ds: Dataset, gamma: Iterable[int], K: float,
                    tol: float = DEFAULT_TOL,
                    max_iter: int = DEFAULT_MAX_ITER) -> ScoreResult:
    """Minimize ``||y - X_gamma theta||^2`` over the ell-1 ball of radius ``K``.

    The OLS fit is returned as is when it already lies inside the ball;
    otherwise accelerated projected gradient runs until the duality gap is
    within ``tol`` (relative), followed by an exact active-set solve.
    """
    if K < 0:
        raise ValueError("K must be nonnegative")
    return _fit(ds, as_model(gamma, ds.p), K, tol, max_iter, True)


def ols_rss(ds: Dataset, gamma: Iterable[int]) -> ScoreResult:
    """Unconstrained least squares on ``gamma`` (min-norm if rank deficient)."""
    return _fit(ds, as_model(gamma, ds.p), math.inf, DEFAULT_TOL, 0, False)


class ScoreCache:
    """Thread-safe bounded LRU map from model keys to score results.

    A cache is tied to the first dataset it serves; reusing it with another
    dataset raises instead of returning stale scores.
    """

    def __init__(self, capacity: int = DEFAULT_CACHE_SIZE):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._data: dict = {}
        self._lock = threading.Lock()
        self._owner = None
        self.hits = 0
        self.misses = 0

    def bind(self, ds: Dataset) -> None:
        with self._lock:
            owner = self._owner() if self._owner is not None else None
            if owner is None:
                self._owner = weakref.ref(ds)
                self._data.clear()
            elif owner is not ds:
                raise ValueError("score cache already bound to a different dataset")

    def get(self, key):
        with self._lock:
            try:
                value = self._data.pop(key)
            except KeyError:
                self.misses += 1
                return None
            self._data[key] = value
            self.hits += 1
            return value

    def put(self, key, value) -> None:
        with self._lock:
            self._data.pop(key, None)
            self._data[key] = value
            if len(self._data) > self.capacity:
                del self._data[next(iter(self._data))]

    def __len__(self) -> int:
        return len(self._data)

    def __contains__(self, key) -> bool:
        return key in self._data


def score(ds: Dataset, gamma: Iterable[int], pp: PrivacyParams,
          cache: Optional[ScoreCache] = None, tol: float = DEFAULT_TOL) -> float:
    """Utility ``-L_{gamma,K}``; memoized in ``cache`` when given."""
    gamma = as_model(gamma, ds.p)
    if cache is None:
        return constrained_rss(ds, gamma, pp.K, tol).utility
    cache.bind(ds)
    key = (gamma, pp.K, tol)
    res = cache.get(key)
    if res is None:
        res = constrained_rss(ds, gamma, pp.K, tol)
        cache.put(key, res)
    return res.utility


class Scorer:
    """Scoring session for one ``(dataset, K)`` pair with its own LRU cache.

    Used by the samplers; models passed in must already be canonical.
    """

    def __init__(self, ds: Dataset, K: float, tol: float = DEFAULT_TOL,
                 max_iter: int = DEFAULT_MAX_ITER,
                 cache_size: int = DEFAULT_CACHE_SIZE):
        if K < 0:
            raise ValueError("K must be nonnegative")
        self.ds = ds
        self.K = float(K)
        self.tol = tol
        self.max_iter = max_iter
        self.cache = ScoreCache(cache_size)
        self.cache.bind(ds)

    def result(self, gamma: ModelState) -> ScoreResult:
        res = self.cache.get(gamma)
        if res is None:
            res = _fit(self.ds, gamma, self.K, self.tol, self.max_iter, True)
            self.cache.put(gamma, res)
        return res

    def utility(self, gamma: ModelState) -> float:
        return -self.result(gamma).rss
