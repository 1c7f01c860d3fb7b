"""Cone projections, proximal maps of the separable functions and the two
Moreau-type update steps used by the dual ADMM.

Kleinrock and BPR proxes are scalar strictly convex problems solved by a
bracketed Newton iteration in the kernel backend.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend
from .model import Cone, SeparableFunction

PROX_TOL = 1e-12
PROX_MAXIT = 200


@dataclass
class ProxResult:
    point: np.ndarray
    newton_iterations: int = 0
    max_residual: float = 0.0


def project_cone(cone: Cone, v):
    """Euclidean projection onto ``cone``."""
    v = np.asarray(v, dtype=float)
    if v.shape != (cone.dim,):
        raise ValueError(f"vector of shape {v.shape} does not match cone dimension {cone.dim}")
    if cone.kind == "free":
        return v.copy()
    if cone.kind == "nonneg":
        return np.maximum(v, 0.0)
    return np.minimum(np.maximum(v, cone.lower), cone.upper)


def cone_support(cone: Cone, w) -> float:
    """``sup_{t in K} <w, t>``; ``delta_K^*(-z)`` is ``cone_support(K, -z)``."""
    w = np.asarray(w, dtype=float)
    if cone.kind == "free":
        return 0.0 if not np.any(w) else np.inf
    if cone.kind == "nonneg":
        return 0.0 if np.all(w <= 0) else np.inf
    bound = np.where(w > 0, cone.upper, cone.lower)
    with np.errstate(invalid="ignore"):
        terms = np.where(w != 0, w * bound, 0.0)
    if np.any(np.isinf(terms)):
        return np.inf
    return float(terms.sum())


def _check_sigma(sigma):
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")


def prox_theta(theta: SeparableFunction, sigma, v, tol=PROX_TOL, start=None, kernels=None) -> ProxResult:
    """``argmin_t sigma*theta(t) + 1/2 ||t - v||^2`` componentwise."""
    _check_sigma(sigma)
    v = np.asarray(v, dtype=float)
    if theta.kind == "zero":
        return ProxResult(v.copy())
    if theta.kind == "l1":
        lam = sigma * theta.weight
        return ProxResult(np.sign(v) * np.maximum(np.abs(v) - lam, 0.0))
    k = kernels or backend.kernels
    cap = theta.cap
    if v.shape != cap.shape:
        raise ValueError(f"vector of shape {v.shape} does not match theta dimension {cap.size}")
    if theta.kind == "kleinrock":
        if start is None:
            start = np.minimum(v, 0.9 * cap)
        t, its, res = k.prox_kleinrock(np.ascontiguousarray(v), cap, float(sigma),
                                       np.ascontiguousarray(start, dtype=float), tol, PROX_MAXIT)
        return ProxResult(t, int(its), float(res))
    if theta.kind == "bpr":
        if start is None:
            start = np.maximum(v - sigma * theta.freeflow, 0.0)
        t, its, res = k.prox_bpr(np.ascontiguousarray(v), cap, theta.freeflow, theta.B, theta.beta,
                                 float(sigma), np.ascontiguousarray(start, dtype=float), tol, PROX_MAXIT)
        return ProxResult(t, int(its), float(res))
    raise ValueError(f"unknown theta kind {theta.kind!r}")


def moreau_theta_step(theta: SeparableFunction, sigma, a, tol=PROX_TOL, start=None, kernels=None):
    """``(1/sigma) Prox_{sigma theta}(sigma a) - a`` (the s-update).

    Returns ``(s, prox_result)``; the prox point is handy as the next warm
    start.
    """
    _check_sigma(sigma)
    a = np.asarray(a, dtype=float)
    if theta.kind == "zero":
        return np.zeros_like(a), ProxResult(sigma * a)
    if theta.kind == "l1":
        # closed form of the same expression, free of cancellation
        s = -np.clip(a, -theta.weight, theta.weight)
        return s, ProxResult(sigma * (a + s))
    pr = prox_theta(theta, sigma, sigma * a, tol=tol, start=start, kernels=kernels)
    return pr.point / sigma - a, pr


def moreau_cone_step(cone: Cone, sigma, a):
    """``(1/sigma) Pi_K(sigma a) - a`` (the z-update)."""
    _check_sigma(sigma)
    a = np.asarray(a, dtype=float)
    if cone.kind == "free":
        return np.zeros_like(a)
    sa = sigma * a
    return (project_cone(cone, sa) - sa) / sigma
