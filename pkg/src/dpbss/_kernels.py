"""Compiled inner loops for subset scoring.

All routines work on the tiny ``s x s`` Gram system of one candidate model;
the design matrix is only touched to build that system and to evaluate the
final residual.
"""

import numpy as np
from numba import njit

UNCONSTRAINED = 0
PROJECTED = 1
MAX_ITER = 2

EIG_CUTOFF = 1e-10
POWER_STEPS = 50


@njit(cache=True)
def gram(Xf, y, idx):
    s = idx.shape[0]
    G = np.empty((s, s))
    b = np.empty(s)
    for a in range(s):
        col = Xf[:, idx[a]]
        b[a] = np.dot(col, y)
        for c in range(a + 1):
            v = np.dot(col, Xf[:, idx[c]])
            G[a, c] = v
            G[c, a] = v
    return G, b


@njit(cache=True)
def residual_ss(Xf, y, idx, theta):
    r = y.copy()
    for a in range(idx.shape[0]):
        r -= theta[a] * Xf[:, idx[a]]
    return np.dot(r, r)


@njit(cache=True)
def cholesky_solve(G, b, cutoff):
    """Solve ``G x = b``; ``ok`` is False when a pivot falls below ``cutoff``."""
    s = G.shape[0]
    L = np.zeros((s, s))
    for j in range(s):
        d = G[j, j]
        for k in range(j):
            d -= L[j, k] * L[j, k]
        if d <= cutoff:
            return np.zeros(s), False
        L[j, j] = np.sqrt(d)
        for i in range(j + 1, s):
            v = G[i, j]
            for k in range(j):
                v -= L[i, k] * L[j, k]
            L[i, j] = v / L[j, j]
    z = np.empty(s)
    for i in range(s):
        v = b[i]
        for k in range(i):
            v -= L[i, k] * z[k]
        z[i] = v / L[i, i]
    x = np.empty(s)
    for i in range(s - 1, -1, -1):
        v = z[i]
        for k in range(i + 1, s):
            v -= L[k, i] * x[k]
        x[i] = v / L[i, i]
    return x, True


@njit(cache=True)
def minnorm_solve(G, b, cutoff):
    w, V = np.linalg.eigh(G)
    x = np.zeros(G.shape[0])
    for k in range(w.shape[0]):
        if w[k] > cutoff:
            x += V[:, k] * (V[:, k] @ b) / w[k]
    return x


@njit(cache=True)
def ols(G, b):
    """Normal-equation solve; returns ``(theta, rank_deficient)``."""
    s = G.shape[0]
    tr = 0.0
    for j in range(s):
        tr += G[j, j]
    cutoff = EIG_CUTOFF * tr
    if tr <= 0.0:
        return np.zeros(s), True
    x, ok = cholesky_solve(G, b, cutoff)
    if ok:
        return x, False
    return minnorm_solve(G, b, cutoff), True


@njit(cache=True)
def project_l1(v, K):
    """Euclidean projection onto ``{x : ||x||_1 <= K}`` (sort-based)."""
    s = v.shape[0]
    a = np.abs(v)
    if a.sum() <= K:
        return v.copy()
    if K <= 0.0:
        return np.zeros(s)
    u = np.sort(a)[::-1]
    css = 0.0
    tau = 0.0
    for j in range(s):
        css += u[j]
        t = (css - K) / (j + 1)
        if u[j] - t > 0.0:
            tau = t
    out = np.empty(s)
    for j in range(s):
        m = a[j] - tau
        out[j] = np.sign(v[j]) * m if m > 0.0 else 0.0
    return out


@njit(cache=True)
def power_lmax(G):
    s = G.shape[0]
    v = np.ones(s) / np.sqrt(s)
    lam = 0.0
    for _ in range(POWER_STEPS):
        w = G @ v
        nw = np.sqrt(w @ w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        lam = v @ (G @ v)
    return lam


@njit(cache=True)
def half_obj(G, b, x):
    # 0.5 x'Gx - b'x, i.e. (rss - ||y||^2) / 2
    return 0.5 * (x @ (G @ x)) - b @ x


@njit(cache=True)
def fw_gap(G, b, x, K):
    g = G @ x - b
    return g @ x + K * np.max(np.abs(g))


@njit(cache=True)
def polish(G, b, K, x):
    """Exact KKT solve on the support/sign pattern of ``x``.

    Returns ``(x, False)`` unchanged when the pattern is not optimal.
    """
    s = x.shape[0]
    act = np.empty(s, dtype=np.int64)
    m = 0
    for j in range(s):
        if x[j] != 0.0:
            act[m] = j
            m += 1
    if m == 0:
        return x, False
    act = act[:m]
    sg = np.sign(x[act])
    Ga = np.empty((m, m))
    for i in range(m):
        for k in range(m):
            Ga[i, k] = G[act[i], act[k]]
    tr = 0.0
    for i in range(m):
        tr += Ga[i, i]
    cut = EIG_CUTOFF * tr
    u, ok1 = cholesky_solve(Ga, b[act], cut)
    v, ok2 = cholesky_solve(Ga, sg, cut)
    if not (ok1 and ok2):
        return x, False
    den = sg @ v
    if den <= 0.0:
        return x, False
    mu = (sg @ u - K) / den
    if mu < 0.0:
        return x, False
    xa = u - mu * v
    for i in range(m):
        if xa[i] * sg[i] <= 0.0:
            return x, False
    out = np.zeros(s)
    out[act] = xa
    g = b - G @ out
    scale = 1e-9 * (1.0 + mu)
    for j in range(s):
        if out[j] == 0.0 and abs(g[j]) > mu + scale:
            return x, False
    return out, True


@njit(cache=True)
def constrained_ls(G, b, yy, K, x0, tol, max_iter):
    """Accelerated projected gradient for ``min ||y - X theta||^2, ||theta||_1 <= K``.

    Works on the Gram system; stops once the Frank-Wolfe duality gap on the
    RSS scale is below ``tol`` times the current RSS, then polishes on the
    active set.
    """
    s = G.shape[0]
    L = power_lmax(G) * 1.01
    if L <= 0.0:
        return np.zeros(s), PROJECTED, 0
    x = project_l1(x0, K)
    z = x.copy()
    t = 1.0
    fx = half_obj(G, b, x)
    floor = 1e-14 * yy
    status = MAX_ITER
    it = 0
    while it < max_iter:
        it += 1
        x_prev = x
        f_prev = fx
        x = project_l1(z - (G @ z - b) / L, K)
        fx = half_obj(G, b, x)
        if fx > f_prev:
            # adaptive restart
            t = 1.0
            x = project_l1(x_prev - (G @ x_prev - b) / L, K)
            fx = half_obj(G, b, x)
            z = x.copy()
        else:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            z = x + ((t - 1.0) / t_new) * (x - x_prev)
            t = t_new
        rss = max(yy + 2.0 * fx, 0.0)
        if 2.0 * fw_gap(G, b, x, K) <= tol * max(rss, floor):
            status = PROJECTED
            break
    xp, ok = polish(G, b, K, x)
    if ok and half_obj(G, b, xp) <= fx + 1e-12 * (abs(fx) + floor):
        x = xp
        status = PROJECTED
    return x, status, it


@njit(cache=True)
def score_kernel(Xf, y, yy, idx, K, tol, max_iter, constrained):
    """Fit one model; returns ``(theta, rss, status, rank_deficient, iters)``."""
    s = idx.shape[0]
    if s == 0:
        return np.zeros(0), yy, UNCONSTRAINED, False, 0
    G, b = gram(Xf, y, idx)
    theta, deficient = ols(G, b)
    status = UNCONSTRAINED
    iters = 0
    if constrained and np.abs(theta).sum() > K:
        theta, status, iters = constrained_ls(G, b, yy, K, theta, tol, max_iter)
    rss = residual_ss(Xf, y, idx, theta)
    return theta, rss, status, deficient, iters
