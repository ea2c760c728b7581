"""Bounded regression datasets: synthetic generation, bound checks, CSV I/O.

A :class:`Dataset` carries the design matrix, the response and the *declared*
bounds ``r`` (on ``|y_i|``) and ``x_max`` (on ``max_j |X_ij|``) that enter the
sensitivity of the selection score. Generated datasets declare their exact
empirical maxima; callers who need worst-case guarantees over a data universe
can swap in a-priori bounds with :meth:`Dataset.with_bounds`.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np


class ConfigError(ValueError):
    """Raised for invalid dataset / generator configuration."""


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable regression dataset ``(X, y)`` with declared bounds."""

    X: np.ndarray
    y: np.ndarray
    r: float
    x_max: float

    def __post_init__(self):
        X = np.array(self.X, dtype=float, copy=True)
        y = np.array(self.y, dtype=float, copy=True).reshape(-1)
        if X.ndim != 2:
            raise ConfigError(f"X must be 2-d, got shape {X.shape}")
        n, p = X.shape
        if n < 1 or p < 1:
            raise ConfigError(f"need n >= 1 and p >= 1, got n={n}, p={p}")
        if y.shape[0] != n:
            raise ConfigError(f"y has length {y.shape[0]}, expected {n}")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise ConfigError("X and y must be finite")
        if not (math.isfinite(self.r) and math.isfinite(self.x_max)):
            raise ConfigError("declared bounds must be finite")
        if self.r < 0 or self.x_max < 0:
            raise ConfigError("declared bounds must be nonnegative")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "r", float(self.r))
        object.__setattr__(self, "x_max", float(self.x_max))

    @classmethod
    def from_arrays(cls, X, y, r: Optional[float] = None,
                    x_max: Optional[float] = None) -> "Dataset":
        """Build a dataset, defaulting each bound to its empirical maximum."""
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float).reshape(-1)
        if r is None:
            r = float(np.max(np.abs(y)))
        if x_max is None:
            x_max = float(np.max(np.abs(X)))
        return cls(X, y, r, x_max)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @cached_property
    def columns(self) -> np.ndarray:
        """Column-major copy of ``X`` for fast column gathers."""
        Xf = np.asfortranarray(self.X)
        if Xf is self.X:
            return Xf
        Xf.setflags(write=False)
        return Xf

    @cached_property
    def yy(self) -> float:
        return float(self.y @ self.y)

    def with_bounds(self, r: Optional[float] = None,
                    x_max: Optional[float] = None) -> "Dataset":
        return Dataset(self.X, self.y,
                       self.r if r is None else r,
                       self.x_max if x_max is None else x_max)

    def add_row(self, x_row, y_val: float) -> "Dataset":
        """Neighbor with one extra record (declared bounds unchanged)."""
        x_row = np.asarray(x_row, dtype=float).reshape(1, -1)
        return Dataset(np.vstack([self.X, x_row]), np.append(self.y, y_val),
                       self.r, self.x_max)

    def remove_row(self, i: int) -> "Dataset":
        """Neighbor with record ``i`` deleted (declared bounds unchanged)."""
        if self.n < 2:
            raise ConfigError("cannot remove the only record")
        keep = np.arange(self.n) != i
        return Dataset(self.X[keep], self.y[keep], self.r, self.x_max)


@dataclass(frozen=True)
class RegularityParams:
    """Sparse Riesz bounds, ell-1 bound on the true coefficients, noise scale."""

    kappa_minus: float
    kappa_plus: float
    b_max: float
    sigma: float

    def __post_init__(self):
        if not 0 < self.kappa_minus <= self.kappa_plus:
            raise ConfigError("need 0 < kappa_minus <= kappa_plus")
        if self.b_max <= 0:
            raise ConfigError("b_max must be positive")
        if self.sigma < 0:
            raise ConfigError("sigma must be nonnegative")


@dataclass(frozen=True)
class GenConfig:
    """Synthetic linear-model configuration.

    ``signal`` is ``"strong"`` (``beta_j = 2 sqrt(s log p / n)``), ``"weak"``
    (``beta_j = 2 sqrt(log p / n)``) or an explicit length-``s`` sequence of
    coefficients. The design is i.i.d. Uniform(-1, 1) and the noise i.i.d.
    Uniform(-noise, noise).
    """

    n: int
    p: int
    s: int
    signal: Union[str, Sequence[float]] = "strong"
    support: Optional[Sequence[int]] = None
    noise: float = 0.1
    design: str = "uniform"
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.p < 1:
            raise ConfigError(f"need n >= 1 and p >= 1, got n={self.n}, p={self.p}")
        if not 0 <= self.s <= min(self.n, self.p):
            raise ConfigError(f"need 0 <= s <= min(n, p), got s={self.s}")
        if self.noise < 0:
            raise ConfigError("noise half-width must be nonnegative")
        if self.design != "uniform":
            raise ConfigError(f"unknown design {self.design!r}")
        support = self.resolved_support()
        if len(support) != self.s or len(set(support)) != self.s:
            raise ConfigError("support must contain exactly s distinct indices")
        if any(j < 0 or j >= self.p for j in support):
            raise ConfigError("support indices must lie in [0, p)")
        if isinstance(self.signal, str):
            if self.signal not in ("strong", "weak"):
                raise ConfigError(f"unknown signal regime {self.signal!r}")
        elif len(self.signal) != self.s:
            raise ConfigError("custom signal must have length s")

    def resolved_support(self) -> tuple:
        if self.support is None:
            return tuple(range(self.s))
        return tuple(sorted(int(j) for j in self.support))

    def signal_values(self) -> np.ndarray:
        if isinstance(self.signal, str):
            if self.signal == "strong":
                b = 2.0 * math.sqrt(self.s * math.log(self.p) / self.n)
            else:
                b = 2.0 * math.sqrt(math.log(self.p) / self.n)
            return np.full(self.s, b)
        return np.asarray(self.signal, dtype=float)

    @property
    def sigma(self) -> float:
        # conservative: the noise half-width itself, not a / sqrt(3)
        return float(self.noise)


class SyntheticData(NamedTuple):
    dataset: Dataset
    support: tuple
    beta: np.ndarray


def generate_synthetic(config: GenConfig) -> SyntheticData:
    """Draw ``y = X beta + w`` per ``config``; deterministic in ``config.seed``.

    The returned dataset declares ``r = max |y_i|`` and ``x_max = max |X_ij|``.
    """
    rng = np.random.default_rng(config.seed)
    n, p = config.n, config.p
    X = rng.uniform(-1.0, 1.0, size=(n, p))
    if config.noise > 0:
        w = rng.uniform(-config.noise, config.noise, size=n)
    else:
        w = np.zeros(n)
    support = config.resolved_support()
    beta = np.zeros(p)
    beta[list(support)] = config.signal_values()
    if support:
        y = X[:, list(support)] @ beta[list(support)] + w
    else:
        y = w
    ds = Dataset.from_arrays(X, y)
    beta.setflags(write=False)
    return SyntheticData(ds, support, beta)


@dataclass
class BoundsReport:
    x_violations: list = field(default_factory=list)   # (i, j) pairs
    y_violations: list = field(default_factory=list)   # row indices

    @property
    def ok(self) -> bool:
        return not self.x_violations and not self.y_violations

    def __len__(self) -> int:
        return len(self.x_violations) + len(self.y_violations)


def validate_bounds(ds: Dataset) -> BoundsReport:
    """List every entry violating the dataset's declared bounds."""
    bad_x = np.argwhere(np.abs(ds.X) > ds.x_max)
    bad_y = np.flatnonzero(np.abs(ds.y) > ds.r)
    return BoundsReport([tuple(int(v) for v in ij) for ij in bad_x],
                        [int(i) for i in bad_y])


@dataclass
class SRCEstimate:
    kappa_minus: float
    kappa_plus: float
    exhaustive: bool
    n_examined: int


def estimate_src(ds: Dataset, s: int, sample_budget: int = 1000,
                 rng: Optional[np.random.Generator] = None,
                 exhaustive_cap: int = 20_000) -> SRCEstimate:
    """Empirical Sparse Riesz bounds over size-``s`` column subsets.

    All ``C(p, s)`` subsets are examined when that count is at most
    ``exhaustive_cap``; otherwise ``sample_budget`` random subsets are drawn.
    A singular Gram submatrix yields ``kappa_minus = 0``.
    """
    if not 0 <= s <= min(ds.n, ds.p):
        raise ConfigError(f"need 0 <= s <= min(n, p), got s={s}")
    if s == 0:
        return SRCEstimate(math.nan, math.nan, True, 0)
    total = math.comb(ds.p, s)
    if total <= exhaustive_cap:
        subsets = itertools.combinations(range(ds.p), s)
        exhaustive = True
    else:
        rng = np.random.default_rng() if rng is None else rng
        subsets = (np.sort(rng.choice(ds.p, size=s, replace=False))
                   for _ in range(sample_budget))
        exhaustive = False
    lo, hi, count = math.inf, -math.inf, 0
    Xf = ds.columns
    for gamma in subsets:
        Xg = Xf[:, list(gamma)]
        ev = np.linalg.eigvalsh(Xg.T @ Xg / ds.n)
        smallest = ev[0] if ev[0] > 1e-12 * max(ev[-1], 1.0) else 0.0
        lo = min(lo, smallest)
        hi = max(hi, ev[-1])
        count += 1
    return SRCEstimate(float(lo), float(hi), exhaustive, count)


# ---------------------------------------------------------------------------
# CSV + sidecar JSON

def _meta_path(path: Path) -> Path:
    return path.with_suffix(".json")


def save_dataset(ds: Dataset, path, *, seed: Optional[int] = None,
                 support: Optional[Sequence[int]] = None,
                 beta: Optional[Sequence[float]] = None,
                 extra: Optional[dict] = None) -> tuple:
    """Write ``path`` (CSV, ``x0..x{p-1},y``) and its ``.json`` sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = ",".join([f"x{j}" for j in range(ds.p)] + ["y"])
    data = np.column_stack([ds.X, ds.y])
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")
    meta = {
        "n": ds.n,
        "p": ds.p,
        "r": ds.r,
        "x_max": ds.x_max,
        "seed": seed,
        "support": None if support is None else [int(j) for j in support],
        "beta": None if beta is None else [float(b) for b in beta],
    }
    if extra:
        meta.update(extra)
    meta_path = _meta_path(path)
    meta_path.write_text(json.dumps(meta, indent=2))
    return path, meta_path


def load_dataset(path) -> tuple:
    """Read a dataset CSV; returns ``(Dataset, metadata dict)``.

    Declared bounds come from the sidecar when present, otherwise they are the
    empirical maxima.
    """
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    if not header or header[-1] != "y":
        raise ConfigError(f"{path}: last CSV column must be 'y'")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    X, y = data[:, :-1], data[:, -1]
    meta_path = _meta_path(path)
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    ds = Dataset.from_arrays(X, y, meta.get("r"), meta.get("x_max"))
    return ds, meta
