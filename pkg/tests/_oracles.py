"""Independent scalar oracles used by the prox tests.

They work in 40-digit arithmetic so their own error is far below the
tolerances being tested.
"""

import mpmath as mp
import numpy as np
from scipy.optimize import minimize_scalar

mp.mp.dps = 40


def kleinrock_prox_bisect(v, c, sigma):
    """argmin_{0 <= t < c} sigma t/(c - t) + (t - v)^2 / 2 by bisection on the derivative."""
    v, c, sigma = mp.mpf(v), mp.mpf(c), mp.mpf(sigma)

    def dg(t):
        return sigma * c / (c - t) ** 2 + t - v

    if dg(0) >= 0:
        return 0.0
    lo, hi = mp.mpf(0), c - mp.mpf(10) ** -30
    for _ in range(200):
        mid = (lo + hi) / 2
        if dg(mid) > 0:
            hi = mid
        else:
            lo = mid
    return float((lo + hi) / 2)


def bpr_prox_golden(v, c, r, B, beta, sigma):
    """argmin_{t >= 0} sigma r t (1 + B (t/c)^beta) + (t - v)^2 / 2 by golden-section search."""
    v, c, r, B, beta, sigma = (mp.mpf(a) for a in (v, c, r, B, beta, sigma))

    def g(t):
        return sigma * r * t * (1 + B * (t / c) ** beta) + (t - v) ** 2 / 2

    a, b = mp.mpf(0), max(v, mp.mpf(0)) + 1
    phi = (mp.sqrt(5) - 1) / 2
    x1, x2 = b - phi * (b - a), a + phi * (b - a)
    f1, f2 = g(x1), g(x2)
    for _ in range(180):
        if f1 < f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - phi * (b - a)
            f1 = g(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + phi * (b - a)
            f2 = g(x2)
    return float((a + b) / 2)


def moreau_grid(theta, sigma, a, lo, hi, points=20001):
    """argmin_s theta^*(-s)/sigma + (s + a)^2 / 2 over [lo, hi]: grid, then bounded refine."""
    def f(s):
        val = theta.conjugate(np.array([-s])) / sigma + 0.5 * (s + a) ** 2
        return val if np.isfinite(val) else 1e300

    grid = np.linspace(lo, hi, points)
    vals = np.array([f(s) for s in grid])
    k = int(np.argmin(vals))
    left, right = grid[max(k - 1, 0)], grid[min(k + 1, points - 1)]
    res = minimize_scalar(f, bounds=(left, right), method="bounded", options={"xatol": 1e-13})
    return res.x if res.fun <= vals[k] else grid[k]
