"""KKT mapping and the relative stopping residuals shared by all solvers."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .model import BlockAngularProblem, objective
from .prox import cone_support, project_cone, prox_theta
from .sparse import spectral_norm, spmv


@dataclass
class PrimalDualIterate:
    """One point ``(x, y0, y, s, z, q)`` of the KKT system.

    ``y[0]`` is a zero-length placeholder (block 0 has no local rows) and
    ``q`` stores ``Q w`` without ever materialising ``w``.
    """

    x: list
    y0: np.ndarray
    y: list
    s: list
    z: list
    q: list

    @classmethod
    def zeros(cls, problem: BlockAngularProblem):
        z = lambda: [np.zeros(n) for n in problem.dims]  # noqa: E731
        return cls(z(), np.zeros(problem.m0), [np.zeros(b.m) for b in problem.blocks], z(), z(), z())

    def copy(self):
        cp = lambda seq: [np.array(v, dtype=float) for v in seq]  # noqa: E731
        return PrimalDualIterate(cp(self.x), np.array(self.y0, dtype=float), cp(self.y),
                                 cp(self.s), cp(self.z), cp(self.q))

    def flat(self):
        parts = self.x + [self.y0] + self.y + self.s + self.z + self.q
        return np.concatenate(parts)


@dataclass
class NormCache:
    norm_b: float
    norm_c: float
    norm_Q: float


@dataclass
class Residuals:
    eta_P: float
    eta_D: float
    eta_Q: float
    eta_K: float
    eta_S: float
    eta: float
    primal_obj: float = np.nan
    dual_obj: float = np.nan

    def as_dict(self):
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}


def quad_norm(Q) -> float:
    """Spectral norm of a single ``QuadTerm``."""
    if Q.kind == "zero":
        return 0.0
    if Q.kind == "diag":
        return float(np.max(np.abs(Q.diag))) if Q.dim else 0.0
    return spectral_norm(Q.matrix)


def build_norm_cache(problem: BlockAngularProblem) -> NormCache:
    nq = max((quad_norm(blk.Q) for blk in problem.blocks), default=0.0)
    return NormCache(float(np.linalg.norm(problem.b_full())),
                     float(np.linalg.norm(problem.c_full())), nq)


def _norm(parts):
    return float(np.sqrt(sum(float(p @ p) for p in parts)))


def kkt_blocks(problem: BlockAngularProblem, it: PrimalDualIterate, kernels=None) -> dict:
    """The five unscaled residual blocks, each a list of per-block pieces
    (``primal`` holds the coupling rows first, then every local row set)."""
    blocks = problem.blocks
    coupling = -problem.b0.copy()
    local, dual, qres, sres, kres = [], [], [], [], []
    for i, blk in enumerate(blocks):
        xi = it.x[i]
        coupling += spmv(blk.A, xi, kernels=kernels)
        r = spmv(blk.A, it.y0, adjoint=True, kernels=kernels) + it.s[i] + it.z[i] - it.q[i] - blk.c
        if blk.D is not None:
            local.append(spmv(blk.D, xi, kernels=kernels) - blk.b)
            r += spmv(blk.D, it.y[i], adjoint=True, kernels=kernels)
        dual.append(r)
        qres.append(it.q[i] - blk.Q @ xi)
        sres.append(xi - prox_theta(blk.theta, 1.0, xi - it.s[i], kernels=kernels).point)
        kres.append(xi - project_cone(blk.cone, xi - it.z[i]))
    return {"primal": [coupling] + local, "dual": dual, "quad": qres, "prox": sres, "cone": kres}


def kkt_map(problem, it, kernels=None) -> np.ndarray:
    """Stacked KKT mapping ``R(u)``; zero exactly at KKT points."""
    b = kkt_blocks(problem, it, kernels)
    return np.concatenate([np.concatenate(b[k]) for k in ("primal", "dual", "quad", "prox", "cone")])


def dual_objective(problem, it: PrimalDualIterate, wQw) -> float:
    """``-(theta^*(-s) + wQw/2 - <b, y> + delta_K^*(-z))``."""
    val = 0.5 * wQw - float(problem.b0 @ it.y0)
    for i, blk in enumerate(problem.blocks):
        val += blk.theta.conjugate(-it.s[i]) + cone_support(blk.cone, -it.z[i])
        if blk.D is not None:
            val -= float(blk.b @ it.y[i])
    return -val


def compute_residuals(problem, it: PrimalDualIterate, cache: NormCache, wQw=None,
                      kernels=None, objectives=True) -> Residuals:
    """Relative residuals ``eta_P .. eta_S`` and their maximum.

    ``wQw`` is the solver's value for ``<w, Q w>``; when omitted
    ``<x, Q x>`` is used.
    """
    b = kkt_blocks(problem, it, kernels)
    nx, ns, nz = _norm(it.x), _norm(it.s), _norm(it.z)
    eta_P = _norm(b["primal"]) / (1.0 + cache.norm_b)
    eta_D = _norm(b["dual"]) / (1.0 + cache.norm_c)
    eta_Q = _norm(b["quad"]) / (1.0 + cache.norm_Q)
    eta_K = _norm(b["cone"]) / (1.0 + nx + nz)
    eta_S = _norm(b["prox"]) / (1.0 + nx + ns)
    res = Residuals(eta_P, eta_D, eta_Q, eta_K, eta_S, max(eta_P, eta_D, eta_Q, eta_K, eta_S))
    if objectives:
        xp = [project_cone(blk.cone, xi) for blk, xi in zip(problem.blocks, it.x)]
        res.primal_obj = objective(problem, xp)
        if wQw is None:
            wQw = sum(float(xi @ (blk.Q @ xi)) for blk, xi in zip(problem.blocks, it.x))
        res.dual_obj = dual_objective(problem, it, wQw)
    return res


def relative_gap(res: Residuals) -> float:
    p, d = res.primal_obj, res.dual_obj
    if not (np.isfinite(p) and np.isfinite(d)):
        return np.inf
    return abs(p - d) / (1.0 + abs(p))
