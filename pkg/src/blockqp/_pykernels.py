"""Pure-Python/NumPy versions of the compiled kernels in ``_kernels.pyx``.

Signatures and return conventions match the compiled module exactly so the
backend switch is transparent. These are used when the extension is not
built, or when ``BLOCKQP_PURE_PYTHON=1`` is set.
"""

import numpy as np


def spmv_csc(nrows, ncols, Ap, Ai, Ax, x, transpose):
    cols = np.repeat(np.arange(ncols), np.diff(Ap))
    if transpose:
        return np.bincount(cols, weights=Ax * x[Ai], minlength=ncols).astype(float)
    return np.bincount(Ai, weights=Ax * x[cols], minlength=nrows).astype(float)


def _ereach(Cp, Ci, k, parent, mark):
    pattern = []
    mark[k] = k
    for p in range(Cp[k], Cp[k + 1]):
        i = Ci[p]
        if i > k:
            continue
        path = []
        while mark[i] != k:
            path.append(i)
            mark[i] = k
            i = parent[i]
        pattern[:0] = path
    return pattern


def chol_etree(n, Cp, Ci):
    parent = np.full(n, -1, dtype=np.int64)
    ancestor = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        for p in range(Cp[k], Cp[k + 1]):
            i = int(Ci[p])
            while i != -1 and i < k:
                inext = ancestor[i]
                ancestor[i] = k
                if inext == -1:
                    parent[i] = k
                i = inext
    return parent


def chol_colcounts(n, Cp, Ci, parent):
    counts = np.ones(n, dtype=np.int64)
    mark = np.full(max(n, 1), -1, dtype=np.int64)
    for k in range(n):
        for i in _ereach(Cp, Ci, k, parent, mark):
            counts[i] += 1
    return counts


def chol_numeric(n, Cp, Ci, Cx, parent, Lp, shift, floor):
    Li = np.empty(Lp[n], dtype=np.int64)
    Lx = np.empty(Lp[n])
    c = np.array(Lp[:n], dtype=np.int64)
    mark = np.full(max(n, 1), -1, dtype=np.int64)
    x = np.zeros(max(n, 1))
    for k in range(n):
        pattern = _ereach(Cp, Ci, k, parent, mark)
        lo, hi = Cp[k], Cp[k + 1]
        rows = Ci[lo:hi]
        keep = rows <= k
        x[rows[keep]] = Cx[lo:hi][keep]
        d = x[k] + shift
        x[k] = 0.0
        for i in pattern:
            lki = x[i] / Lx[Lp[i]]
            x[i] = 0.0
            a, b = Lp[i] + 1, c[i]
            if b > a:
                x[Li[a:b]] -= Lx[a:b] * lki
            d -= lki * lki
            Li[c[i]] = k
            Lx[c[i]] = lki
            c[i] += 1
        if not d > floor:
            return Li, Lx, k
        Li[c[k]] = k
        Lx[c[k]] = np.sqrt(d)
        c[k] += 1
    return Li, Lx, -1


def chol_solve(n, Lp, Li, Lx, X):
    for j in range(n):
        X[j] /= Lx[Lp[j]]
        a, b = Lp[j] + 1, Lp[j + 1]
        if b > a:
            X[Li[a:b]] -= np.outer(Lx[a:b], X[j])
    for j in range(n - 1, -1, -1):
        a, b = Lp[j] + 1, Lp[j + 1]
        if b > a:
            # row-wise accumulation keeps each column independent of the batch width
            X[j] -= (Lx[a:b, None] * X[Li[a:b]]).sum(axis=0)
        X[j] /= Lx[Lp[j]]


def _safeguarded_newton(grad, hess, v, lo, hi, start, tol, maxit):
    """Vectorised bracketed Newton on an increasing gradient.

    Only the entries with ``lo < hi`` are iterated; callers fill the rest.
    """
    t = np.where((start > lo) & (start < hi), start, 0.5 * (lo + hi))
    scale = np.maximum(1.0, np.abs(v))
    g = grad(t)
    active = np.abs(g) > tol * scale
    total = 0
    it = 0
    while active.any() and it < maxit:
        it += 1
        total += int(active.sum())
        idx = np.flatnonzero(active)
        ta, ga = t[idx], g[idx]
        pos = ga > 0
        hi[idx[pos]] = ta[pos]
        lo[idx[~pos]] = ta[~pos]
        with np.errstate(all="ignore"):
            tn = ta - ga / hess(ta, idx)
        bad = ~((tn > lo[idx]) & (tn < hi[idx]))
        tn[bad] = 0.5 * (lo[idx][bad] + hi[idx][bad])
        stalled = (tn == ta) | (hi[idx] - lo[idx] <= 4e-16 * hi[idx])
        t[idx] = np.where(stalled, ta, tn)
        g[idx] = np.where(stalled, ga, grad(t[idx], idx))
        active[idx] = ~stalled & (np.abs(g[idx]) > tol * scale[idx])
    gmax = float(np.max(np.abs(g) / scale)) if t.size else 0.0
    return t, total, gmax


def prox_kleinrock(v, cap, sigma, start, tol, maxit):
    v = np.asarray(v, dtype=float)
    out = np.zeros_like(v)
    inner = sigma / cap < v
    if not inner.any():
        return out, 0, 0.0
    vi, ci = v[inner], cap[inner]
    sc = sigma * ci

    def grad(t, idx=slice(None)):
        return sc[idx] / (ci[idx] - t) ** 2 + t - vi[idx]

    def hess(t, idx):
        return 2.0 * sc[idx] / (ci[idx] - t) ** 3 + 1.0

    t, total, gmax = _safeguarded_newton(
        grad, hess, vi, np.zeros_like(vi), np.minimum(vi, ci).copy(),
        np.asarray(start, dtype=float)[inner], tol, maxit)
    out[inner] = t
    return out, total, gmax


def prox_bpr(v, cap, r, B, beta, sigma, start, tol, maxit):
    v = np.asarray(v, dtype=float)
    out = np.zeros_like(v)
    sr_all = sigma * r
    inner = v > sr_all
    if not inner.any():
        return out, 0, 0.0
    vi, ci, sr = v[inner], cap[inner], sr_all[inner]
    coef = B * (beta + 1.0)

    def grad(t, idx=slice(None)):
        return sr[idx] * (1.0 + coef * (t / ci[idx]) ** beta) + t - vi[idx]

    def hess(t, idx):
        return sr[idx] * coef * beta * (t / ci[idx]) ** (beta - 1.0) / ci[idx] + 1.0

    t, total, gmax = _safeguarded_newton(
        grad, hess, vi, np.zeros_like(vi), (vi - sr).copy(),
        np.asarray(start, dtype=float)[inner], tol, maxit)
    out[inner] = t
    return out, total, gmax
