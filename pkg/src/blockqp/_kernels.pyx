# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: CSC mat-vec, up-looking sparse Cholesky, triangular
solves and the scalar Newton prox solvers.

Every function here has a pure-Python twin in ``_pykernels`` with the same
signature; ``blockqp.backend`` picks one at import time.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, pow, isfinite

cnp.import_array()

ctypedef cnp.int64_t idx_t


def spmv_csc(idx_t nrows, idx_t ncols, const idx_t[::1] Ap, const idx_t[::1] Ai,
             const double[::1] Ax, const double[::1] x, bint transpose):
    cdef idx_t j, p
    cdef double acc
    cdef cnp.ndarray[double, ndim=1] out
    if transpose:
        out = np.zeros(ncols)
        with nogil:
            for j in range(ncols):
                acc = 0.0
                for p in range(Ap[j], Ap[j + 1]):
                    acc += Ax[p] * x[Ai[p]]
                out[j] = acc
    else:
        out = np.zeros(nrows)
        with nogil:
            for j in range(ncols):
                acc = x[j]
                if acc != 0.0:
                    for p in range(Ap[j], Ap[j + 1]):
                        out[Ai[p]] += Ax[p] * acc
    return out


cdef idx_t _ereach(const idx_t[::1] Cp, const idx_t[::1] Ci, idx_t k,
                   const idx_t[::1] parent, idx_t[::1] stack,
                   idx_t[::1] mark, idx_t n) noexcept nogil:
    # pattern of row k of L, written to stack[top:n]; mark[] uses k as stamp
    cdef idx_t top = n, p, i, length
    mark[k] = k
    for p in range(Cp[k], Cp[k + 1]):
        i = Ci[p]
        if i > k:
            continue
        length = 0
        while mark[i] != k:
            stack[length] = i
            length += 1
            mark[i] = k
            i = parent[i]
        while length > 0:
            top -= 1
            length -= 1
            stack[top] = stack[length]
    return top


def chol_etree(idx_t n, const idx_t[::1] Cp, const idx_t[::1] Ci):
    """Elimination tree of a symmetric matrix given by its upper triangle."""
    cdef cnp.ndarray[idx_t, ndim=1] parent = np.full(n, -1, dtype=np.int64)
    cdef cnp.ndarray[idx_t, ndim=1] ancestor = np.full(n, -1, dtype=np.int64)
    cdef idx_t k, p, i, inext
    with nogil:
        for k in range(n):
            for p in range(Cp[k], Cp[k + 1]):
                i = Ci[p]
                while i != -1 and i < k:
                    inext = ancestor[i]
                    ancestor[i] = k
                    if inext == -1:
                        parent[i] = k
                    i = inext
    return parent


def chol_colcounts(idx_t n, const idx_t[::1] Cp, const idx_t[::1] Ci,
                   const idx_t[::1] parent):
    """Column counts of L (diagonal included) by walking every row subtree."""
    counts_arr = np.ones(n, dtype=np.int64)
    cdef idx_t[::1] counts = counts_arr
    cdef idx_t[::1] stack = np.empty(max(n, 1), dtype=np.int64)
    cdef idx_t[::1] mark = np.full(max(n, 1), -1, dtype=np.int64)
    cdef idx_t k, top
    with nogil:
        for k in range(n):
            top = _ereach(Cp, Ci, k, parent, stack, mark, n)
            while top < n:
                counts[stack[top]] += 1
                top += 1
    return counts_arr


def chol_numeric(idx_t n, const idx_t[::1] Cp, const idx_t[::1] Ci,
                 const double[::1] Cx, const idx_t[::1] parent,
                 const idx_t[::1] Lp, double shift, double floor):
    """Up-looking factorization of C + shift*I.

    Returns ``(Li, Lx, k)`` where ``k == -1`` on success, otherwise the
    column whose pivot fell to ``floor`` or below.
    """
    Li_arr = np.empty(Lp[n], dtype=np.int64)
    Lx_arr = np.empty(Lp[n])
    cdef idx_t[::1] Li = Li_arr
    cdef double[::1] Lx = Lx_arr
    cdef idx_t[::1] c = np.empty(max(n, 1), dtype=np.int64)
    cdef idx_t[::1] stack = np.empty(max(n, 1), dtype=np.int64)
    cdef idx_t[::1] mark = np.full(max(n, 1), -1, dtype=np.int64)
    cdef double[::1] x = np.zeros(max(n, 1))
    cdef idx_t k, p, i, top, failed = -1
    cdef double d, lki
    with nogil:
        for k in range(n):
            c[k] = Lp[k]
        for k in range(n):
            top = _ereach(Cp, Ci, k, parent, stack, mark, n)
            x[k] = 0.0
            for p in range(Cp[k], Cp[k + 1]):
                if Ci[p] <= k:
                    x[Ci[p]] = Cx[p]
            d = x[k] + shift
            x[k] = 0.0
            while top < n:
                i = stack[top]
                lki = x[i] / Lx[Lp[i]]
                x[i] = 0.0
                for p in range(Lp[i] + 1, c[i]):
                    x[Li[p]] -= Lx[p] * lki
                d -= lki * lki
                p = c[i]
                c[i] += 1
                Li[p] = k
                Lx[p] = lki
                top += 1
            if not (d > floor):
                failed = k
                break
            p = c[k]
            c[k] += 1
            Li[p] = k
            Lx[p] = sqrt(d)
    return Li_arr, Lx_arr, failed


def chol_solve(idx_t n, const idx_t[::1] Lp, const idx_t[::1] Li,
               const double[::1] Lx, double[:, ::1] X):
    """Solve L L^T Y = X in place; X is (n, k) C-contiguous."""
    cdef idx_t ncol = X.shape[1], j, p, col
    cdef double v
    with nogil:
        for col in range(ncol):
            for j in range(n):
                v = X[j, col] / Lx[Lp[j]]
                X[j, col] = v
                for p in range(Lp[j] + 1, Lp[j + 1]):
                    X[Li[p], col] -= Lx[p] * v
            for j in range(n - 1, -1, -1):
                v = X[j, col]
                for p in range(Lp[j] + 1, Lp[j + 1]):
                    v -= Lx[p] * X[Li[p], col]
                X[j, col] = v / Lx[Lp[j]]


cdef inline double _kr_grad(double t, double v, double sc, double c) noexcept nogil:
    return sc / ((c - t) * (c - t)) + t - v


def prox_kleinrock(const double[::1] v, const double[::1] cap, double sigma,
                   const double[::1] start, double tol, int maxit):
    """Componentwise argmin_t sigma*t/(c-t) + (t-v)^2/2 on [0, c).

    Returns ``(t, total_iterations, max_abs_gradient)``.
    """
    cdef idx_t n = v.shape[0], j
    cdef cnp.ndarray[double, ndim=1] out = np.empty(n)
    cdef double t, lo, hi, g, h, tn, c, vj, sc, gmax = 0.0, scale
    cdef long total = 0
    cdef int it
    with nogil:
        for j in range(n):
            c = cap[j]
            vj = v[j]
            sc = sigma * c
            if sigma / c >= vj:
                out[j] = 0.0
                continue
            lo = 0.0
            hi = vj if vj < c else c
            t = start[j]
            if not (t > lo and t < hi):
                t = 0.5 * (lo + hi)
            scale = 1.0 if fabs(vj) < 1.0 else fabs(vj)
            g = _kr_grad(t, vj, sc, c)
            it = 0
            while fabs(g) > tol * scale and it < maxit:
                it += 1
                if g > 0:
                    hi = t
                else:
                    lo = t
                h = 2.0 * sc / ((c - t) * (c - t) * (c - t)) + 1.0
                tn = t - g / h
                if not (tn > lo and tn < hi):
                    tn = 0.5 * (lo + hi)
                if tn == t or hi - lo <= 4e-16 * hi:
                    break
                t = tn
                g = _kr_grad(t, vj, sc, c)
            total += it
            if fabs(g) / scale > gmax:
                gmax = fabs(g) / scale
            out[j] = t
    return out, total, gmax


cdef inline double _bpr_grad(double t, double v, double sr, double coef,
                             double c, double beta) noexcept nogil:
    return sr * (1.0 + coef * pow(t / c, beta)) + t - v


def prox_bpr(const double[::1] v, const double[::1] cap, const double[::1] r,
             double B, double beta, double sigma, const double[::1] start,
             double tol, int maxit):
    """Componentwise argmin_t sigma*r*t*(1 + B (t/c)^beta) + (t-v)^2/2, t >= 0."""
    cdef idx_t n = v.shape[0], j
    cdef cnp.ndarray[double, ndim=1] out = np.empty(n)
    cdef double t, lo, hi, g, h, tn, c, vj, sr, coef, gmax = 0.0, scale
    cdef long total = 0
    cdef int it
    coef = B * (beta + 1.0)
    with nogil:
        for j in range(n):
            c = cap[j]
            vj = v[j]
            sr = sigma * r[j]
            if vj <= sr:
                out[j] = 0.0
                continue
            lo = 0.0
            hi = vj - sr
            t = start[j]
            if not (t > lo and t < hi):
                t = 0.5 * (lo + hi)
            scale = 1.0 if fabs(vj) < 1.0 else fabs(vj)
            g = _bpr_grad(t, vj, sr, coef, c, beta)
            it = 0
            while fabs(g) > tol * scale and it < maxit:
                it += 1
                if g > 0:
                    hi = t
                else:
                    lo = t
                h = sr * coef * beta * pow(t / c, beta - 1.0) / c + 1.0
                tn = t - g / h
                if not (tn > lo and tn < hi) or not isfinite(tn):
                    tn = 0.5 * (lo + hi)
                if tn == t or hi - lo <= 4e-16 * hi:
                    break
                t = tn
                g = _bpr_grad(t, vj, sr, coef, c, beta)
            total += it
            if fabs(g) / scale > gmax:
                gmax = fabs(g) / scale
            out[j] = t
    return out, total, gmax
