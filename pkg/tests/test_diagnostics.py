import csv
import itertools
import math

import numpy as np
import pytest

from dpbss.dataset import Dataset, GenConfig, RegularityParams, generate_synthetic
from dpbss.diagnostics import (MarginReport, TransitionMatrix, build_transition_matrix,
                               check_assumption_4_1, check_margin_condition,
                               correlation_threshold, eigenvalues, empirical_tv_vs_exact,
                               f_score, identifiability_margin, measure_mixing,
                               mixing_bound_theorem, reversibility_error, sandwich_bounds,
                               spectral_gap, stationarity_error)
from dpbss.exp_mechanism import ExactDistribution, exact_distribution
from dpbss.mh_sampler import ChainConfig, StepRecord, ChainTrace
from dpbss.subset_score import PrivacyParams

from conftest import hadamard_design


def power_iteration_gap(tm, iters=200_000, tol=1e-15):
    """``1 - lambda_2`` by power iteration on the pi-orthogonal complement of 1."""
    pi = tm.stationary()
    x = np.random.default_rng(0).normal(size=tm.size)
    lam = 0.0
    for _ in range(iters):
        x -= (pi @ x)                     # remove the constant eigenvector
        y = tm.P @ x
        new = float((pi * x) @ y / ((pi * x) @ x))
        x = y / math.sqrt(float((pi * y) @ y))
        if abs(new - lam) < tol:
            break
        lam = new
    return 1.0 - new


# ---------------------------------------------------------------- F-score

@pytest.mark.parametrize("a, b, expected", [
    ((0, 1, 2, 3), (0, 1, 2, 3), 1.0), ((0, 1), (2, 3), 0.0), ((0, 5, 6, 7), (0, 1, 2, 3), 0.25),
    ((0, 1, 2), (0, 1), 0.8)])
def test_f_score(a, b, expected):
    assert f_score(a, b) == pytest.approx(expected)
    assert f_score(b, a) == f_score(a, b)


def test_f_score_empty():
    with pytest.raises(ValueError):
        f_score((), (1,))


# ---------------------------------------------------------------- margin

def test_margin_orthonormal_design():
    H = hadamard_design(8)
    beta = np.zeros(8)
    beta[[1, 5]] = [0.5, -0.3]
    ds = Dataset.from_arrays(H, H @ beta)
    for method in ("schur", "projector"):
        rep = identifiability_margin(ds, (1, 5), beta, method=method)
        assert rep.margin == pytest.approx(0.09, rel=1e-12)
        assert 5 not in rep.min_argument and 1 in rep.min_argument


def test_margin_zero_beta(small_instance):
    ds, support, _ = small_instance
    assert identifiability_margin(ds, support, np.zeros(ds.p)).margin == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_margin_schur_matches_projector(seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(30, 8))
    beta = np.zeros(8)
    beta[[2, 6]] = rng.uniform(0.2, 1.0, 2)
    ds = Dataset.from_arrays(X, X @ beta)
    a = identifiability_margin(ds, (2, 6), beta, method="schur")
    b = identifiability_margin(ds, (2, 6), beta, method="projector")
    assert a.margin == pytest.approx(b.margin, rel=1e-9)
    assert a.min_argument == b.min_argument

    # literal per-model double loop with an explicit projector
    best = math.inf
    for g in itertools.combinations(range(8), 2):
        if g == (2, 6):
            continue
        Xg = X[:, g]
        Phi = Xg @ np.linalg.inv(Xg.T @ Xg) @ Xg.T
        miss = [j for j in (2, 6) if j not in g]
        v = (np.eye(30) - Phi) @ X[:, miss] @ beta[miss]
        best = min(best, v @ v / 30 / len(set(g) - {2, 6}))
    assert a.margin == pytest.approx(best, rel=1e-9)


def test_margin_skips_singular_models(rng):
    X = rng.uniform(-1, 1, size=(20, 5))
    X[:, 4] = X[:, 3]
    beta = np.array([0.5, 0.5, 0, 0, 0])
    rep = identifiability_margin(Dataset.from_arrays(X, X @ beta), (0, 1), beta)
    assert (3, 4) in rep.skipped
    assert rep.margin > 0


def test_margin_conditions():
    rep = check_margin_condition(0.0, sigma=0.1, n=100, p=50, epsilon=1.0, delta_K=4.0)
    assert not rep.satisfied_eq9 and not rep.satisfied_eq12
    # low-privacy collapse: Delta / (eps sigma^2) <= 1
    rep = check_margin_condition(1.0, sigma=1.0, n=100, p=50, epsilon=10.0, delta_K=2.0, C1=3.0)
    assert rep.eq9_threshold == pytest.approx(3.0 * math.log(50) / 100)
    thr = check_margin_condition(0.0, 0.1, 100, 50, 2.0, 4.0, C1=4.0).eq9_threshold
    assert thr == pytest.approx(4.0 * 2.0 * math.log(50) / 100)
    rep = check_margin_condition(2 * thr, 0.1, 100, 50, 2.0, 4.0, C1=4.0, kappa_minus=0.5)
    assert rep.satisfied_eq9
    assert rep.eq12_threshold == pytest.approx(2 * thr)
    assert isinstance(rep, MarginReport)


# ---------------------------------------------------------------- correlation assumption

def test_assumption_orthogonal_design():
    H = hadamard_design(16)
    ds = Dataset.from_arrays(H[:, :10], np.zeros(16))
    rep = check_assumption_4_1(ds, (0, 1), RegularityParams(1, 1, 1, 0.01))
    assert rep.holds and rep.checked == math.comb(10, 2) - 1
    assert max(rep.worst.values()) < 1e-12


def test_assumption_zero_threshold(rng):
    ds = Dataset.from_arrays(rng.uniform(-1, 1, size=(30, 6)), np.zeros(30))
    rep = check_assumption_4_1(ds, (0, 1), RegularityParams(1, 1, 1, 0.0))
    assert rep.threshold == 0.0
    assert len(rep.violations) == rep.checked


def test_assumption_matches_double_loop(rng):
    X = rng.uniform(-1, 1, size=(40, 10))
    ds = Dataset.from_arrays(X, np.zeros(40))
    star = (3, 7)
    best = {}
    for g in itertools.combinations(range(10), 2):
        if g == star:
            continue
        Xg = X[:, g]
        Phi = Xg @ np.linalg.inv(Xg.T @ Xg) @ Xg.T
        lhs = []
        for k in range(10):
            if k in star or k in g:
                continue
            rk = X[:, k] - Phi @ X[:, k]
            lhs.append(max(abs(X[:, j] @ rk) for j in star if j not in g) / np.linalg.norm(rk))
        best[g] = min(lhs)
    # pick sigma so the threshold splits the models
    thr = float(np.median(list(best.values())))
    km, bmax, C1 = 0.6, 0.8, 4.0
    sigma = thr * bmax / math.sqrt(km * C1 / 2 * math.log(10))
    reg = RegularityParams(km, 1.4, bmax, sigma)
    assert correlation_threshold(10, reg, C1) == pytest.approx(thr, rel=1e-14)
    rep = check_assumption_4_1(ds, star, reg, C1=C1)
    for g, v in best.items():
        assert rep.worst[g] == pytest.approx(v, rel=1e-9)
    expected = [g for g, v in best.items() if v > rep.threshold]
    assert rep.violations == expected
    assert 0 < len(expected) < rep.checked


# ---------------------------------------------------------------- transition matrices

@pytest.fixture(scope="module")
def tm_instance():
    data = generate_synthetic(GenConfig(n=25, p=6, s=2, signal=[0.5, 0.5], noise=0.2, seed=11))
    ds = data.dataset
    pp = PrivacyParams.for_dataset(ds, 1.0, 1.0)
    dist = exact_distribution(ds, pp, 2)
    return ds, pp, dist


def test_transition_structure(tm_instance):
    ds, pp, dist = tm_instance
    tm = build_transition_matrix(ds, pp, 2, dist=dist)
    assert tm.size == 15
    np.testing.assert_allclose(tm.P.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(tm.P >= 0)
    for i, a in enumerate(tm.models):
        for j, b in enumerate(tm.models):
            if tm.P[i, j] > 0 and i != j:
                assert len(set(a) ^ set(b)) == 2


def test_zero_budget_entries(tm_instance):
    ds, _, _ = tm_instance
    tm = build_transition_matrix(ds, PrivacyParams.for_dataset(ds, 0.0, 1.0), 2)
    off = tm.P[~np.eye(15, dtype=bool)]
    assert set(np.round(off[off > 0], 15)) == {round(1 / 8, 15)}
    np.testing.assert_allclose(np.diag(tm.P), 0.0, atol=1e-15)


@pytest.mark.parametrize("lazy", [False, True])
def test_stationarity_and_balance(tm_instance, lazy):
    ds, pp, dist = tm_instance
    tm = build_transition_matrix(ds, pp, 2, lazy=lazy)
    assert np.max(np.abs(dist.probs @ tm.P - dist.probs)) <= 1e-10
    assert stationarity_error(tm) <= 1e-10
    assert reversibility_error(tm) <= 1e-10


def test_lazy_eigenvalues_nonnegative(tm_instance):
    ds, pp, _ = tm_instance
    tm = build_transition_matrix(ds, PrivacyParams.for_dataset(ds, 3.0, 1.0), 2, lazy=True)
    ev = eigenvalues(tm)
    assert ev.min() >= -1e-10 and ev.max() == pytest.approx(1.0, abs=1e-12)


def test_matrix_cap(tm_instance):
    ds, pp, _ = tm_instance
    with pytest.raises(ValueError):
        build_transition_matrix(ds, pp, 2, cap=10)


@pytest.mark.parametrize("a, b", [(0.2, 0.3), (0.5, 0.5), (0.05, 0.9)])
def test_two_state_gap(a, b):
    P = np.array([[1 - a, a], [b, 1 - b]])
    tm = TransitionMatrix([(0,), (1,)], P, lazy=True)
    assert spectral_gap(tm) == pytest.approx(a + b, abs=1e-12)


def test_identity_gap():
    tm = TransitionMatrix([(0,), (1,), (2,)], np.eye(3), lazy=True,
                          log_pi=np.log(np.full(3, 1 / 3)))
    assert spectral_gap(tm) == pytest.approx(0.0, abs=1e-15)


def test_gap_matches_power_iteration(tm_instance):
    ds, pp, dist = tm_instance
    tm = build_transition_matrix(ds, pp, 2, lazy=True, dist=dist)
    gap = spectral_gap(tm)
    assert 0 < gap <= 1
    assert gap == pytest.approx(power_iteration_gap(tm), abs=1e-8)


def test_nonlazy_gap_warns(tm_instance):
    ds, pp, dist = tm_instance
    with pytest.warns(UserWarning):
        spectral_gap(build_transition_matrix(ds, pp, 2, dist=dist))


def test_nonreversible_rejected():
    P = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
    tm = TransitionMatrix([(0,), (1,), (2,)], P, lazy=True)
    with pytest.raises(ValueError, match="reversible"):
        spectral_gap(tm)


# ---------------------------------------------------------------- mixing

def test_one_step_mixing():
    P = np.tile([1.0, 0.0, 0.0], (3, 1))
    tm = TransitionMatrix([(0,), (1,), (2,)], P, lazy=True)
    pi = ExactDistribution(3, 1, 1.0, 1.0, 1.0, [(0,), (1,), (2,)],
                           np.array([0.0, -np.inf, -np.inf]))
    for eta in (0.5, 0.01, 1e-9):
        assert measure_mixing(tm, pi, eta).tau_eta_measured == 1


def test_vacuous_eta(tm_instance):
    ds, pp, dist = tm_instance
    tm = build_transition_matrix(ds, pp, 2, lazy=True, dist=dist)
    assert measure_mixing(tm, dist, eta=1.0).tau_eta_measured == 0


@pytest.mark.parametrize("eps", [0.5, 1.0, 5.0])
@pytest.mark.parametrize("eta", [0.25, 0.01, 1e-4])
def test_sandwich_holds(tm_instance, eps, eta):
    ds, _, _ = tm_instance
    pp = PrivacyParams.for_dataset(ds, eps, 1.0)
    dist = exact_distribution(ds, pp, 2)
    tm = build_transition_matrix(ds, pp, 2, lazy=True, dist=dist)
    rep = measure_mixing(tm, dist, eta)
    assert not rep.proxy and not rep.truncated
    assert rep.sandwich_lower <= rep.tau_eta_measured <= rep.sandwich_upper
    assert rep.sandwich_holds
    assert rep.min_pi == pytest.approx(dist.probs.min(), rel=1e-12)
    tvs = [tv for _, tv in rep.tv_curve]
    assert all(a >= b - 1e-15 for a, b in zip(tvs, tvs[1:]))


def test_tv_csv(tmp_path, tm_instance):
    ds, pp, dist = tm_instance
    rep = measure_mixing(build_transition_matrix(ds, pp, 2, lazy=True, dist=dist), dist, 0.1)
    rep.write_tv_csv(tmp_path / "tv.csv")
    rows = list(csv.reader((tmp_path / "tv.csv").open()))
    assert rows[0] == ["t", "max_tv"] and len(rows) == rep.tau_eta_measured + 2
    assert float(rows[-1][1]) <= 0.1
    assert rep.to_dict()["sandwich_holds"] is True


def test_sandwich_bounds_formula():
    lo, hi = sandwich_bounds(0.25, 0.01, 0.05)
    assert lo == pytest.approx(0.5 * 3 * math.log(10))
    assert hi == pytest.approx((math.log(100) + math.log(20)) / 0.25)
    assert sandwich_bounds(0.0, 0.1, 0.1) == (math.inf, math.inf)


def test_mixing_bound_formula():
    reg = RegularityParams(1, 1, 1, 1)
    psi, bound = mixing_bound_theorem(100, 10, 2, 1.0, reg, (1.0, 1.0), eta=1.0, C2=1.0)
    assert psi == 9.0
    assert bound == pytest.approx(10 * 4 * 100 / 9)
    assert mixing_bound_theorem(100, 10, 2, 0.0, reg, (1.0, 1.0), 1.0)[1] == 0.0
    _, b2 = mixing_bound_theorem(100, 10, 2, 0.0, reg, (1.0, 1.0), 0.01, C2=2.0)
    assert b2 == pytest.approx(2 * 10 * 4 * math.log(100))


# ---------------------------------------------------------------- empirical TV

def _trace(models):
    cfg = ChainConfig(s=1, steps=len(models) - 1, epsilon=1.0, K=1.0)
    recs = [StepRecord(t, m, 0.0, 0.0, m, False) for t, m in enumerate(models)]
    return ChainTrace(recs, cfg, 0.0)


def test_empirical_tv_edge_cases():
    pi = ExactDistribution(3, 1, 1.0, 1.0, 1.0, [(0,), (1,), (2,)],
                           np.array([0.0, -np.inf, -np.inf]))
    assert empirical_tv_vs_exact(_trace([(0,)] * 10), pi) == 0.0
    assert empirical_tv_vs_exact(_trace([(1,), (2,)] * 5), pi) == 1.0
    assert empirical_tv_vs_exact(_trace([(1,)] * 5 + [(0,)] * 5), pi, burn_in=5) == 0.0
    with pytest.raises(ValueError):
        empirical_tv_vs_exact(_trace([(0,)] * 3), pi, burn_in=10)
