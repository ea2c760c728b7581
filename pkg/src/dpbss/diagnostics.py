"""Verification oracles and condition checkers.

Covers support recovery (F-score), the identifiability margin and the margin
conditions of the utility and mixing guarantees, the correlation assumption
behind rapid mixing, and exact small-instance analysis of the chain: the
transition matrix, its spectral gap, the measured ``eta``-mixing time and the
spectral sandwich bounds around it.

The universal constants ``C1``, ``C1_prime`` and ``C2`` have no published
values; the defaults here (``C1 = 4``, ``C2 = 1``) are empirical choices.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .dataset import Dataset, RegularityParams
from .exp_mechanism import DEFAULT_ENUM_CAP, ExactDistribution, enumerate_models, exact_distribution
from .subset_score import ModelState, PrivacyParams, as_model

DEFAULT_C1 = 4.0
DEFAULT_C2 = 1.0
MATRIX_CAP = 5000
FULL_START_CAP = 500


def f_score(gamma_hat: Sequence[int], gamma_star: Sequence[int]) -> float:
    """Harmonic mean of support precision and recall."""
    a, b = set(gamma_hat), set(gamma_star)
    if not a or not b:
        raise ValueError("f_score needs two nonempty models")
    return 2.0 * len(a & b) / (len(a) + len(b))


# ---------------------------------------------------------------------------
# identifiability margin

@dataclass
class MarginReport:
    margin: float
    min_argument: Optional[ModelState]
    skipped: List[ModelState] = field(default_factory=list)
    eq9_threshold: float = math.nan
    eq12_threshold: float = math.nan
    satisfied_eq9: bool = False
    satisfied_eq12: bool = False

    def to_dict(self) -> dict:
        return {
            "margin": self.margin,
            "min_argument": None if self.min_argument is None else list(self.min_argument),
            "skipped": [list(m) for m in self.skipped],
            "eq9_threshold": self.eq9_threshold,
            "eq12_threshold": self.eq12_threshold,
            "satisfied_eq9": self.satisfied_eq9,
            "satisfied_eq12": self.satisfied_eq12,
        }


def _schur_term(Xf: np.ndarray, n: int, gamma: ModelState, missing: list,
                b_missing: np.ndarray) -> Optional[float]:
    Xg = Xf[:, list(gamma)]
    Xd = Xf[:, missing]
    S_gg = Xg.T @ Xg / n
    S_gd = Xg.T @ Xd / n
    S_dd = Xd.T @ Xd / n
    try:
        c = np.linalg.cholesky(S_gg)
    except np.linalg.LinAlgError:
        return None
    if np.min(np.diag(c)) ** 2 <= 1e-12 * np.trace(S_gg):
        return None
    w = np.linalg.solve(c, S_gd)
    gam = S_dd - w.T @ w
    return float(b_missing @ gam @ b_missing)


def _projector_term(Xf: np.ndarray, n: int, gamma: ModelState, missing: list,
                    b_missing: np.ndarray) -> Optional[float]:
    Xg = Xf[:, list(gamma)]
    if np.linalg.matrix_rank(Xg) < len(gamma):
        return None
    v = Xf[:, missing] @ b_missing
    Phi = Xg @ np.linalg.pinv(Xg)
    resid = v - Phi @ v
    return float(resid @ resid / n)


def identifiability_margin(ds: Dataset, gamma_star: Sequence[int], beta,
                           s: Optional[int] = None, method: str = "schur",
                           cap: int = DEFAULT_ENUM_CAP) -> MarginReport:
    """Exact margin by enumeration over all size-``s`` models ``gamma != gamma_star``.

    ``beta`` is the full length-``p`` coefficient vector. ``method="schur"``
    uses the Schur complement of the sample covariance; ``"projector"``
    residualizes the missing signal against ``X_gamma`` directly and serves as
    an independent check.
    """
    gamma_star = as_model(gamma_star, ds.p)
    s = len(gamma_star) if s is None else s
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (ds.p,):
        raise ValueError("beta must have length p")
    term = {"schur": _schur_term, "projector": _projector_term}[method]
    Xf = ds.columns
    star = set(gamma_star)
    best, arg, skipped = math.inf, None, []
    for gamma in enumerate_models(ds.p, s, cap):
        if gamma == gamma_star:
            continue
        extra = len(set(gamma) - star)
        if extra == 0:
            # only possible when s != len(gamma_star)
            continue
        missing = sorted(star - set(gamma))
        val = term(Xf, ds.n, gamma, missing, beta[missing]) if missing else 0.0
        if val is None:
            skipped.append(gamma)
            continue
        val /= extra
        if val < best:
            best, arg = val, gamma
    return MarginReport(best, arg, skipped)


def check_margin_condition(margin, sigma: float, n: int, p: int, epsilon: float,
                           delta_K: float, C1: float = DEFAULT_C1,
                           kappa_minus: float = 1.0,
                           C1_prime: Optional[float] = None) -> MarginReport:
    """Evaluate both margin thresholds against ``margin``.

    Utility guarantee: ``C1 sigma^2 max(1, Delta_K / (eps sigma^2)) log(p) / n``;
    mixing guarantee: the same with ``(kappa_minus ∧ 1) eps`` in the ratio and
    constant ``C1_prime`` (defaults to ``C1``).
    """
    if C1 <= 0:
        raise ValueError("C1 must be positive")
    report = margin if isinstance(margin, MarginReport) else MarginReport(float(margin), None)
    c1p = C1 if C1_prime is None else C1_prime
    rate = math.log(p) / n
    s2 = sigma ** 2

    def privacy_term(eps):
        # sigma^2 max(1, D / (eps sigma^2)) == max(sigma^2, D / eps)
        return math.inf if eps <= 0 else delta_K / eps

    eq9 = C1 * max(s2, privacy_term(epsilon)) * rate
    eq12 = c1p * max(s2, privacy_term(min(kappa_minus, 1.0) * epsilon)) * rate
    return replace(report, eq9_threshold=eq9, eq12_threshold=eq12,
                   satisfied_eq9=report.margin >= eq9,
                   satisfied_eq12=report.margin >= eq12)


# ---------------------------------------------------------------------------
# correlation assumption

@dataclass
class CorrelationReport:
    threshold: float
    checked: int
    violations: List[ModelState]
    worst: dict = field(default_factory=dict)   # model -> best achievable lhs

    @property
    def holds(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"threshold": self.threshold, "checked": self.checked,
                "holds": self.holds, "violations": [list(m) for m in self.violations]}


def correlation_threshold(p: int, reg: RegularityParams, C1: float) -> float:
    return math.sqrt(reg.kappa_minus * C1 * reg.sigma ** 2 / 2.0 * math.log(p)) / reg.b_max


def check_assumption_4_1(ds: Dataset, gamma_star: Sequence[int], reg: RegularityParams,
                         C1: float = DEFAULT_C1, cap: int = DEFAULT_ENUM_CAP,
                         rel_tol: float = 1e-12) -> CorrelationReport:
    """Exhaustive check of the active/spurious correlation bound.

    For every size-``s`` model ``g != gamma_star`` there must be a
    ``k`` outside ``gamma_star ∪ g`` with
    ``max_{j in gamma_star \\ g} |X_j' (I - Phi_g) X_k| / ||(I - Phi_g) X_k||``
    at most ``sqrt(kappa_minus C1 sigma^2 log(p) / 2) / b_max``. Candidates
    ``k`` whose residualized column vanishes are skipped.
    """
    gamma_star = as_model(gamma_star, ds.p)
    thr = correlation_threshold(ds.p, reg, C1)
    Xf = ds.columns
    star = set(gamma_star)
    violations, worst, checked = [], {}, 0
    col_norms = np.linalg.norm(Xf, axis=0)
    for g in enumerate_models(ds.p, len(gamma_star), cap):
        if g == gamma_star:
            continue
        checked += 1
        gl = list(g)
        Q, _ = np.linalg.qr(Xf[:, gl])
        R = Xf - Q @ (Q.T @ Xf)               # residualized columns
        ks = [k for k in range(ds.p) if k not in star and k not in g]
        js = sorted(star - set(g))
        best = math.inf
        for k in ks:
            nk = np.linalg.norm(R[:, k])
            if nk <= rel_tol * max(col_norms[k], 1.0):
                continue
            lhs = max(abs(float(Xf[:, j] @ R[:, k])) for j in js) / nk
            best = min(best, lhs)
        worst[g] = best
        if not best <= thr:
            violations.append(g)
    return CorrelationReport(thr, checked, violations, worst)


# ---------------------------------------------------------------------------
# exact chain analysis

@dataclass(eq=False)
class TransitionMatrix:
    """Row-stochastic matrix over ``models``; ``log_pi`` its target (optional)."""

    models: List[ModelState]
    P: np.ndarray
    lazy: bool = False
    log_pi: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return self.P.shape[0]

    def stationary(self) -> np.ndarray:
        if self.log_pi is not None:
            lp = self.log_pi - np.max(self.log_pi)
            w = np.exp(lp)
            return w / w.sum()
        M = self.size
        A = np.vstack([self.P.T - np.eye(M), np.ones((1, M))])
        rhs = np.zeros(M + 1)
        rhs[-1] = 1.0
        pi = np.linalg.lstsq(A, rhs, rcond=None)[0]
        pi = np.clip(pi, 0.0, None)
        return pi / pi.sum()

    def lazy_version(self) -> "TransitionMatrix":
        if self.lazy:
            return self
        return TransitionMatrix(self.models, 0.5 * (self.P + np.eye(self.size)),
                                True, self.log_pi)


def build_transition_matrix(ds: Dataset, pp: PrivacyParams, s: int, lazy: bool = False,
                            cap: int = MATRIX_CAP,
                            dist: Optional[ExactDistribution] = None) -> TransitionMatrix:
    """Dense double-swap MH matrix; the lazy form is ``(P + I) / 2``."""
    p = ds.p
    count = math.comb(p, s)
    if count > cap:
        raise ValueError(f"C({p}, {s}) = {count} states exceeds the matrix cap {cap}")
    if dist is None:
        dist = exact_distribution(ds, pp, s)
    models = dist.models
    index = {m: i for i, m in enumerate(models)}
    lw = dist.log_weights
    M = len(models)
    P = np.zeros((M, M))
    if 0 < s < p:
        q = 1.0 / (s * (p - s))
        for i, g in enumerate(models):
            gs = set(g)
            out = [j for j in range(p) if j not in gs]
            for k in g:
                rest = [v for v in g if v != k]
                for l in out:
                    j = index[tuple(sorted(rest + [l]))]
                    P[i, j] = q * min(1.0, math.exp(min(lw[j] - lw[i], 0.0)))
    P[np.diag_indices(M)] = 0.0
    P[np.diag_indices(M)] = 1.0 - P.sum(axis=1)
    tm = TransitionMatrix(list(models), P, False, dist.log_probs.copy())
    return tm.lazy_version() if lazy else tm


def _log_pi(tm: TransitionMatrix) -> np.ndarray:
    if tm.log_pi is not None:
        return tm.log_pi
    with np.errstate(divide="ignore"):
        return np.log(tm.stationary())


def reversibility_error(tm: TransitionMatrix) -> float:
    """``max |pi_i P_ij - pi_j P_ji|`` relative to ``max pi``."""
    pi = tm.stationary()
    F = pi[:, None] * tm.P
    return float(np.max(np.abs(F - F.T)) / np.max(pi))


def stationarity_error(tm: TransitionMatrix) -> float:
    pi = tm.stationary()
    return float(np.max(np.abs(pi @ tm.P - pi)))


def symmetrized(tm: TransitionMatrix) -> np.ndarray:
    """``D^{1/2} P D^{-1/2}`` with ``D = diag(pi)``, formed in log space."""
    lp = _log_pi(tm)
    A = np.zeros_like(tm.P)
    nz = tm.P > 0
    diff = 0.5 * (lp[:, None] - lp[None, :])
    A[nz] = tm.P[nz] * np.exp(diff[nz])
    return 0.5 * (A + A.T)


def spectral_gap(tm: TransitionMatrix, balance_tol: float = 1e-8) -> float:
    """``1 - lambda_2`` of a reversible chain via a symmetric eigensolve."""
    if not tm.lazy:
        warnings.warn("spectral gap of a non-lazy chain; the sandwich bounds assume laziness",
                      stacklevel=2)
    if tm.size == 1:
        return 1.0
    pi = tm.stationary()
    if np.any(pi == 0):
        # transient states: fall back to the general spectrum
        ev = np.sort(np.linalg.eigvals(tm.P).real)[::-1]
        return float(1.0 - ev[1])
    err = reversibility_error(tm)
    if err > balance_tol:
        raise ValueError(f"chain is not reversible (balance error {err:.3g})")
    ev = np.linalg.eigvalsh(symmetrized(tm))
    return float(1.0 - ev[-2])


def eigenvalues(tm: TransitionMatrix) -> np.ndarray:
    """Spectrum of a reversible chain, ascending."""
    return np.linalg.eigvalsh(symmetrized(tm))


@dataclass
class MixingReport:
    spectral_gap: float
    min_pi: float
    eta: float
    tau_eta_measured: int
    sandwich_lower: float
    sandwich_upper: float
    truncated: bool = False
    proxy: bool = False
    tv_curve: List[Tuple[int, float]] = field(default_factory=list)

    @property
    def sandwich_holds(self) -> bool:
        return (not self.truncated
                and self.sandwich_lower <= self.tau_eta_measured <= self.sandwich_upper)

    def to_dict(self) -> dict:
        return {
            "spectral_gap": self.spectral_gap,
            "min_pi": self.min_pi,
            "eta": self.eta,
            "tau_eta_measured": self.tau_eta_measured,
            "sandwich_lower": self.sandwich_lower,
            "sandwich_upper": self.sandwich_upper,
            "sandwich_holds": self.sandwich_holds,
            "truncated": self.truncated,
            "proxy": self.proxy,
        }

    def write_tv_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "max_tv"])
            for t, tv in self.tv_curve:
                w.writerow([t, repr(tv)])


def sandwich_bounds(gap: float, min_pi: float, eta: float) -> Tuple[float, float]:
    """Spectral lower/upper bounds on the ``eta``-mixing time of a lazy chain."""
    if gap <= 0:
        return math.inf, math.inf
    lower = 0.5 * (1.0 - gap) / gap * math.log(1.0 / (2.0 * eta))
    upper = (math.log(1.0 / min_pi) + math.log(1.0 / eta)) / gap if min_pi > 0 else math.inf
    return lower, upper


def measure_mixing(tm: TransitionMatrix, pi: Optional[ExactDistribution] = None,
                   eta: float = 0.01, max_t: int = 10 ** 8) -> MixingReport:
    """Iterate ``P^t`` from every start (or a proxy set) until max TV <= ``eta``.

    The worst-start TV distance is nonincreasing in ``t``, so the first ``t``
    reaching ``eta`` is the mixing time. Above ``FULL_START_CAP`` states only
    the ten lowest-mass starts are tracked and the report is flagged ``proxy``.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    target = pi.probs if pi is not None else tm.stationary()
    if pi is not None and list(pi.models) != list(tm.models):
        raise ValueError("distribution and transition matrix disagree on models")
    M = tm.size
    proxy = M > FULL_START_CAP
    starts = np.argsort(target)[:10] if proxy else np.arange(M)
    D = np.zeros((len(starts), M))
    D[np.arange(len(starts)), starts] = 1.0
    curve = []
    t, truncated = 0, False
    tv = 0.5 * float(np.max(np.abs(D - target).sum(axis=1)))
    curve.append((0, tv))
    while tv > eta:
        if t >= max_t:
            truncated = True
            break
        D = D @ tm.P
        t += 1
        tv = 0.5 * float(np.max(np.abs(D - target).sum(axis=1)))
        curve.append((t, tv))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        gap = spectral_gap(tm)
    if pi is not None:
        min_pi = float(np.exp(np.min(pi.log_probs)))
    else:
        min_pi = float(np.min(target))
    lower, upper = sandwich_bounds(gap, min_pi, eta)
    return MixingReport(gap, min_pi, eta, t, lower, upper, truncated, proxy, curve)


def mixing_bound_theorem(n: int, p: int, s: int, epsilon: float, reg: RegularityParams,
                         bounds: Tuple[float, float], eta: float,
                         C2: float = DEFAULT_C2) -> Tuple[float, float]:
    """Closed-form worst-start mixing bound; returns ``(Psi, bound)``.

    ``C2 p s^2 (n eps kappa_plus b_max^2 / Psi + log(1/eta))`` with
    ``Psi = (r + kappa_plus/kappa_minus b_max x_max + sigma/kappa_minus x_max^2)^2``.
    """
    r, x_max = bounds
    km, kp = reg.kappa_minus, reg.kappa_plus
    psi = (r + kp / km * reg.b_max * x_max + reg.sigma / km * x_max ** 2) ** 2
    bound = C2 * p * s ** 2 * (n * epsilon * kp * reg.b_max ** 2 / psi + math.log(1.0 / eta))
    return psi, bound


def empirical_tv_vs_exact(trace, pi: ExactDistribution, burn_in: int = 0) -> float:
    """TV distance between post-burn-in visit frequencies and ``pi``."""
    counts = np.zeros(len(pi.models))
    total = 0
    for rec in trace.records:
        if rec.t < burn_in:
            continue
        try:
            counts[pi.index_of(rec.model)] += 1
        except KeyError:
            raise ValueError(f"model {rec.model} outside the distribution's support") from None
        total += 1
    if total == 0:
        raise ValueError("no records after burn-in")
    return 0.5 * float(np.abs(counts / total - pi.probs).sum())
