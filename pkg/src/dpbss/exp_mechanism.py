"""Exact exponential mechanism over all size-``s`` models.

For small ``C(p, s)`` the target ``pi(gamma) ∝ exp(eps * u_K(gamma) / Delta_K)``
is built by enumeration and sampled by inverse CDF. The same module holds the
privacy accounting shared with the chain sampler and an empirical audit of
the pure-DP log-ratio bound over add/remove-one neighbors.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional

import numpy as np
from scipy.special import logsumexp

from .dataset import Dataset
from .subset_score import ModelState, PrivacyParams, Scorer

DEFAULT_ENUM_CAP = 2_000_000


class EnumerationCapError(ValueError):
    """Raised when ``C(p, s)`` is too large to enumerate."""


def enumerate_models(p: int, s: int, cap: int = DEFAULT_ENUM_CAP) -> Iterator[ModelState]:
    """All size-``s`` subsets of ``range(p)`` in lexicographic order."""
    if not 0 <= s <= p:
        raise ValueError(f"need 0 <= s <= p, got p={p}, s={s}")
    count = math.comb(p, s)
    if count > cap:
        raise EnumerationCapError(
            f"C({p}, {s}) = {count} models exceeds the enumeration cap {cap}; "
            "use the MH sampler instead")
    return itertools.combinations(range(p), s)


@dataclass(eq=False)
class ExactDistribution:
    """Exponential-mechanism distribution over an enumerated model list."""

    p: int
    s: int
    epsilon: float
    K: float
    delta_K: float
    models: List[ModelState]
    log_weights: np.ndarray
    log_Z: float = field(init=False)
    probs: np.ndarray = field(init=False)

    def __post_init__(self):
        self.log_weights = np.asarray(self.log_weights, dtype=float)
        if len(self.models) != self.log_weights.shape[0]:
            raise ValueError("models and log_weights differ in length")
        self.log_Z = float(logsumexp(self.log_weights))
        self.probs = np.exp(self.log_weights - self.log_Z)
        self._index = None

    @property
    def log_probs(self) -> np.ndarray:
        return self.log_weights - self.log_Z

    def index_of(self, model: ModelState) -> int:
        if self._index is None:
            self._index = {m: i for i, m in enumerate(self.models)}
        return self._index[model]

    def prob(self, model: ModelState) -> float:
        return float(self.probs[self.index_of(tuple(model))])

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "s": self.s,
            "epsilon": self.epsilon,
            "K": self.K,
            "delta_K": self.delta_K,
            "models": [list(m) for m in self.models],
            "log_weights": [float(w) for w in self.log_weights],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExactDistribution":
        return cls(int(d["p"]), int(d["s"]), float(d["epsilon"]), float(d["K"]),
                   float(d["delta_K"]), [tuple(m) for m in d["models"]],
                   np.asarray(d["log_weights"], dtype=float))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "ExactDistribution":
        return cls.from_dict(json.loads(Path(path).read_text()))


def exact_distribution(ds: Dataset, pp: PrivacyParams, s: int,
                       cap: int = DEFAULT_ENUM_CAP,
                       scorer: Optional[Scorer] = None) -> ExactDistribution:
    """Enumerate every size-``s`` model and weight it by ``eps * u_K / Delta_K``."""
    models = list(enumerate_models(ds.p, s, cap))
    if scorer is None:
        scorer = Scorer(ds, pp.K)
    elif scorer.ds is not ds or scorer.K != pp.K:
        raise ValueError("scorer does not match dataset / K")
    beta = pp.inverse_temperature
    utilities = np.array([scorer.utility(m) for m in models])
    return ExactDistribution(ds.p, s, pp.epsilon, pp.K, pp.delta_K, models,
                             beta * utilities)


def exact_sample(dist: ExactDistribution, rng: np.random.Generator) -> ModelState:
    """One draw by inverse CDF."""
    cdf = np.cumsum(dist.probs)
    u = rng.random() * cdf[-1]
    i = int(np.searchsorted(cdf, u, side="right"))
    return dist.models[min(i, len(dist.models) - 1)]


def approx_dp_delta(eta: float, epsilon: float) -> float:
    """Slack ``eta * (1 + e^eps)`` of a chain iterate taken after ``eta``-mixing."""
    if eta < 0 or epsilon < 0:
        raise ValueError("eta and epsilon must be nonnegative")
    if eta == 0:
        return 0.0
    if epsilon > 709.0:   # e^eps overflows; the slack is vacuous anyway
        return math.inf
    return eta * (1.0 + math.exp(epsilon))


def max_log_ratio(a: ExactDistribution, b: ExactDistribution) -> float:
    """``max_gamma |log a(gamma) - log b(gamma)|`` over a shared model list."""
    if a.models != b.models:
        raise ValueError("distributions are over different model lists")
    return float(np.max(np.abs(a.log_probs - b.log_probs)))


@dataclass
class AuditReport:
    epsilon: float
    slack: float
    max_log_ratio: float
    trial_ratios: List[float]
    trial_kinds: List[str]

    @property
    def passed(self) -> bool:
        return self.max_log_ratio <= self.epsilon + self.slack


def random_neighbor(ds: Dataset, rng: np.random.Generator, kind: str = "either"):
    """Add-or-remove-one neighbor; appended rows respect the declared bounds."""
    if kind == "either":
        kind = "remove" if (ds.n > 1 and rng.random() < 0.5) else "add"
    if kind == "remove":
        return ds.remove_row(int(rng.integers(ds.n))), "remove"
    if kind == "add":
        x = rng.uniform(-ds.x_max, ds.x_max, size=ds.p)
        y = rng.uniform(-ds.r, ds.r)
        return ds.add_row(x, y), "add"
    raise ValueError(f"unknown neighbor kind {kind!r}")


def dp_ratio_audit(ds: Dataset, pp: PrivacyParams, s: int, trials: int,
                   rng: np.random.Generator, kind: str = "either",
                   slack: float = 1e-6, cap: int = DEFAULT_ENUM_CAP) -> AuditReport:
    """Check the pure-DP log-ratio bound on ``trials`` random neighbors.

    Both datasets are scored with the same ``pp`` (same declared bounds and
    therefore the same ``Delta_K``), as a data-independent mechanism would.
    """
    base = exact_distribution(ds, pp, s, cap)
    ratios, kinds = [], []
    for _ in range(trials):
        nb, k = random_neighbor(ds, rng, kind)
        ratios.append(max_log_ratio(base, exact_distribution(nb, pp, s, cap)))
        kinds.append(k)
    worst = max(ratios) if ratios else 0.0
    return AuditReport(pp.epsilon, slack, worst, ratios, kinds)
