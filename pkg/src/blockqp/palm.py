"""Primal proximal augmented Lagrangian methods.

All four variants minimise the augmented Lagrangian

    L_sigma(x; y0) = sum_i f_i(x_i) + sigma/2 ||A x - b0 - y0/sigma||^2

over ``x_i in F_i = {D_i x_i = b_i, x_i in K_i}`` and then move the coupling
multiplier, ``y0 <- y0 + tau sigma (b0 - A x)``. The coupling term is made
separable by a block-diagonal majorizer ``M = diag(M_0, ..., M_N)`` with
``M - A^T A`` positive semidefinite, so each block solves

    min theta_i(x_i) + 1/2 <x_i, G_i x_i> + <g_i, x_i>   over F_i,
    G_i = Q_i + sigma M_i.

``SPALM``   one majorized step per multiplier update, ``M_i = J_i``.
``SPALMB``  the same with ``M_i = E_i``.
``DQA``     proximal-gradient inner loop with ``E_i`` before each update.
``IAPG``    accelerated inner loop with ``J_i``.

Here ``J_i = beta_i I + A_i^T A_i`` with ``beta_i = sum_{j != i} ||A_i^T A_j||``
and ``E_i = (N+1) A_i^T A_i`` (or ``chi A_i^T A_i`` with ``chi`` the largest
number of blocks touching one coupling row).

Subproblems go to the dual sGS-ADMM on the single-block instance
``(A_0 := D_i, Q := G_i, c := g_i)`` followed by an active-set polish that
returns an exact subgradient ``v_i`` and the residual
``d_i = v_i + G_i x_i + g_i``. Blocks without ``D_i`` whose ``G_i`` is a
multiple of the identity reduce to a prox evaluation.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from . import backend
from .model import Block, BlockAngularProblem, Cone, QuadTerm, as_csc, validate
from .prox import project_cone, prox_theta
from .report import MaxIterations, SolveReport
from .residuals import NormCache, PrimalDualIterate, build_norm_cache, compute_residuals
from .sgs_admm import SgsAdmmParams, SgsAdmmSolver
from .sparse import spectral_norm, spmv

MAJORIZERS = ("SPALM_J", "DQA_E", "DQA_E_CHI")
VARIANTS = ("SPALM", "SPALMB", "DQA", "IAPG")
PSD_TOL = 1e-8


class MaxOuterIterations(MaxIterations):
    pass


@dataclass
class PalmParams:
    sigma: float = 1.0
    tau: float = 1.9
    tol: float = 1e-5
    max_outer: int = 20000
    eps0: float = 1.0
    eps_power: float = 1.5
    variant: str = "SPALM"
    inner_max: int = 1000
    chi_sharpening: bool = False
    classic_dqa_step: bool = False
    sub_tol: float | None = None  # fixed subproblem tolerance instead of eps_k / sqrt(N+1)
    sub_max_iter: int = 50000
    warm_polish: bool = True
    threads: int = 1
    check_interval: int = 1
    keep_history: bool = False
    raise_on_max: bool = False
    time_limit: float | None = None

    def __post_init__(self):
        if not 0.0 < self.tau < 2.0:
            raise ValueError(f"tau must lie in (0, 2), got {self.tau}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.eps0 < 0 or self.eps_power <= 1.0:
            raise ValueError("eps schedule eps0/(k+1)^p needs eps0 >= 0 and p > 1 to be summable")
        if self.inner_max < 1 or self.threads < 1 or self.check_interval < 1:
            raise ValueError("inner_max, threads and check_interval must be >= 1")
        if not self.tol >= 0 or self.max_outer < 1:
            raise ValueError(f"need tol >= 0 and max_outer >= 1, got tol={self.tol}, max_outer={self.max_outer}")

    def eps(self, k):
        return self.eps0 / (k + 1.0) ** self.eps_power

    @property
    def majorizer_kind(self):
        if self.variant in ("SPALM", "IAPG"):
            return "SPALM_J"
        return "DQA_E_CHI" if self.chi_sharpening else "DQA_E"


# ---------------------------------------------------------------------------
# majorizer


@dataclass(eq=False)
class ProximalMajorizer:
    """Block operators ``M_i`` (``J_i`` or ``E_i``) and ``G_i = Q_i + sigma M_i``."""

    kind: str
    sigma: float
    M: list
    G: list
    beta: np.ndarray | None = None
    rho: float = 1.0
    chi: int | None = None
    psd_min: float = 0.0
    scale: float = 1.0  # M_i are multiplied by this (classic DQA uses rho)

    def operator(self, i) -> LinearOperator:
        return LinearOperator(self.G[i].shape, matvec=self.G[i].__matmul__,
                              rmatvec=self.G[i].__matmul__, dtype=float)

    def apply_M(self, v):
        return [Mi @ vi for Mi, vi in zip(self.M, v)]

    def apply_T(self, problem, v):
        """``(diag(M) - A^T A) v`` blockwise."""
        Av = _coupling(problem, v)
        return [Mi @ vi - blk.A.T @ Av for Mi, vi, blk in zip(self.M, v, problem.blocks)]

    def scaled(self, factor, problem):
        M = [as_csc(factor * Mi) for Mi in self.M]
        return replace(self, M=M, G=_stamp(problem, M, self.sigma), scale=self.scale * factor)


def _coupling(problem, x):
    out = np.zeros(problem.m0)
    for blk, xi in zip(problem.blocks, x):
        out = out + blk.A @ xi
    return out


def _stamp(problem, M, sigma):
    return [as_csc(blk.Q.tocsc() + sigma * Mi) for blk, Mi in zip(problem.blocks, M)]


def _cross_norm(Ai, Aj, seed):
    op = LinearOperator((Ai.shape[1], Aj.shape[1]), matvec=lambda v: Ai.T @ (Aj @ v),
                        rmatvec=lambda u: Aj.T @ (Ai @ u), dtype=float)
    return spectral_norm(op, seed=seed)


def row_overlap(problem) -> int:
    """``chi = max_j |{i : row j of A_i is nonzero}|``."""
    hits = np.zeros(problem.m0, dtype=int)
    for blk in problem.blocks:
        A = blk.A.tocsr()
        hits += np.diff(A.indptr) > 0
    return int(hits.max(initial=0))


def psd_probe(problem, M, probes=20, seed=0) -> float:
    """Smallest ``v^T (diag(M) - A^T A) v / ||v||^2`` over random probes."""
    rng = np.random.default_rng(seed)
    worst = np.inf
    for _ in range(probes):
        v = [rng.standard_normal(n) for n in problem.dims]
        val = sum(float(vi @ (Mi @ vi)) for Mi, vi in zip(M, v))
        Av = _coupling(problem, v)
        nv = sum(float(vi @ vi) for vi in v)
        worst = min(worst, (val - float(Av @ Av)) / nv)
    return float(worst)


def build_majorizer(problem: BlockAngularProblem, kind="SPALM_J", sigma=1.0, probes=20,
                    seed=0) -> ProximalMajorizer:
    """Block-diagonal majorizer of ``A^T A``.

    ``beta_i`` comes from power iteration on ``v -> A_i^T (A_j v)`` (never
    formed) with the 1.01 safety factor of ``spectral_norm``. The result
    carries ``psd_min``, the worst probe value of ``diag(M) - A^T A``.
    """
    if kind not in MAJORIZERS:
        raise ValueError(f"unknown majorizer {kind!r}; expected one of {MAJORIZERS}")
    blocks = problem.blocks
    nb = len(blocks)
    AtA = [as_csc(blk.A.T @ blk.A) for blk in blocks]
    beta, chi = None, None
    rho = 1.0 / nb
    if kind == "SPALM_J":
        beta = np.zeros(nb)
        for i in range(nb):
            for j in range(nb):
                if j != i and blocks[i].A.nnz and blocks[j].A.nnz:
                    beta[i] += _cross_norm(blocks[i].A, blocks[j].A, seed + 31 * i + j)
        M = [as_csc(AtA[i] + beta[i] * sp.identity(blocks[i].n, format="csc")) for i in range(nb)]
    elif kind == "DQA_E":
        M = [as_csc(nb * K) for K in AtA]
    else:
        chi = row_overlap(problem)
        M = [as_csc(chi * K) for K in AtA]
    maj = ProximalMajorizer(kind, float(sigma), M, _stamp(problem, M, sigma), beta, rho, chi)
    maj.psd_min = psd_probe(problem, M, probes, seed)
    return maj


# ---------------------------------------------------------------------------
# subproblems


@dataclass(eq=False)
class SubproblemSpec:
    index: int
    G: sp.csc_matrix
    g: np.ndarray
    theta: object
    cone: Cone
    D: sp.csc_matrix | None = None
    b: np.ndarray | None = None


@dataclass
class SubproblemResult:
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    z: np.ndarray
    d: np.ndarray
    method: str = "polish"
    inner_iterations: int = 0

    @property
    def dnorm(self):
        return float(np.linalg.norm(self.d))


def _uniform_diag(G):
    """``gamma`` if ``G = gamma I``, else ``None``."""
    n = G.shape[0]
    if G.nnz == 0:
        return None
    C = G.tocoo()
    if np.any(C.row != C.col):
        off = C.data[C.row != C.col]
        if np.any(off != 0):
            return None
    dg = G.diagonal()
    if n and np.all(dg == dg[0]) and dg[0] > 0:
        return float(dg[0])
    return None


def _theta_subgrad(theta, x, r):
    """An element ``-s`` of ``d theta(x)``; at an l1 kink the one closest to ``-r``."""
    if theta.kind == "zero":
        return np.zeros_like(x)
    if theta.kind == "l1":
        w = theta.weight
        return np.where(x > 0, -w, np.where(x < 0, w, np.clip(r, -w, w)))
    c = theta.cap
    if theta.kind == "kleinrock":
        return -c / (c - x) ** 2
    return -theta.freeflow * (1.0 + theta.B * (theta.beta + 1.0) * (x / c) ** theta.beta)


def _split(theta, lo, hi, x, r, interior):
    """``r = s + z`` with ``-s`` in the theta subdifferential and ``-z`` in the normal cone."""
    s = _theta_subgrad(theta, x, r)
    z = np.where(interior, 0.0, r - s)
    at_lo = (x <= lo) & (lo < hi)
    at_hi = (x >= hi) & (lo < hi)
    z = np.where(at_lo, np.maximum(z, 0.0), z)
    z = np.where(at_hi, np.minimum(z, 0.0), z)
    return s, z


def _prox_solve(spec, gamma):
    """``G = gamma I`` and no local rows: clipped prox."""
    lo, hi = spec.cone.bounds()
    v = -spec.g / gamma
    p = prox_theta(spec.theta, 1.0 / gamma, v).point
    x = np.minimum(np.maximum(p, lo), hi)
    r = gamma * x + spec.g
    interior = (x > lo) & (x < hi)
    s, z = _split(spec.theta, lo, hi, x, r, interior)
    d = r - s - z
    return SubproblemResult(x, np.zeros(0), s, z, d, "prox")


def _breakpoints(lo, hi, w):
    pts = [p for p in (lo, hi) if np.isfinite(p)]
    if w > 0 and lo < 0 < hi:
        pts.append(0.0)
    return sorted(set(pts))


def _interval_of(bp, lo, hi, t):
    """Open interval between consecutive breakpoints that contains ``t``."""
    a, b = lo, hi
    for p in bp:
        if p <= t:
            a = max(a, p)
        if p >= t:
            b = min(b, p)
            break
    return a, b


class _Cells:
    """Per-variable state: pinned to a breakpoint, or free in an open interval."""

    def __init__(self, lo, hi, w):
        self.lo, self.hi = lo, hi
        self.w = w
        self.bp = [_breakpoints(l, u, w) for l, u in zip(lo, hi)]
        n = lo.size
        self.fixed = np.zeros(n, dtype=bool)
        self.val = np.zeros(n)
        self.a = lo.copy()
        self.b = hi.copy()

    def slope(self):
        if self.w == 0:
            return np.zeros(self.a.size)
        return np.where(self.a >= 0, self.w, -self.w)

    def seed(self, x, delta):
        for j, t in enumerate(np.minimum(np.maximum(x, self.lo), self.hi)):
            near = [p for p in self.bp[j] if abs(t - p) <= delta * (1.0 + abs(p))]
            if near:
                self.pin(j, near[0])
            else:
                self.free(j, *_interval_of(self.bp[j], self.lo[j], self.hi[j], t))

    def pin(self, j, p):
        self.fixed[j], self.val[j] = True, p

    def free(self, j, a, b):
        self.fixed[j], self.a[j], self.b[j] = False, a, b

    def key(self):
        return (self.fixed.tobytes(), self.val.tobytes(), self.a.tobytes())

    def range(self, j):
        """One-sided derivative interval of ``w|t| + indicator`` at the pin."""
        p, l, u, w = self.val[j], self.lo[j], self.hi[j], self.w
        left = -np.inf if p <= l else (w if p > 0 else -w)
        right = np.inf if p >= u else (w if p >= 0 else -w)
        return left, right

    def move(self, j, direction):
        """Release pin ``j`` into the adjacent interval (+1 right, -1 left)."""
        p, bp = self.val[j], self.bp[j]
        if direction > 0:
            nxt = [q for q in bp if q > p]
            self.free(j, p, nxt[0] if nxt else self.hi[j])
        else:
            prv = [q for q in bp if q < p]
            self.free(j, prv[-1] if prv else self.lo[j], p)


def _kkt_solve(G, g, D, b, cells):
    n = g.size
    F = np.flatnonzero(~cells.fixed)
    X = np.flatnonzero(cells.fixed)
    x = np.zeros(n)
    x[X] = cells.val[X]
    m = 0 if D is None else D.shape[0]
    Gd = G.toarray()
    rhs1 = -(g[F] + cells.slope()[F] + Gd[np.ix_(F, X)] @ x[X])
    if m:
        Dd = D.toarray()
        K = np.block([[Gd[np.ix_(F, F)], -Dd[:, F].T], [Dd[:, F], np.zeros((m, m))]])
        rhs = np.concatenate([rhs1, b - Dd[:, X] @ x[X]])
    else:
        K, rhs = Gd[np.ix_(F, F)], rhs1
    if rhs.size:
        sol = sla.lstsq(K, rhs, lapack_driver="gelsd")[0]
    else:
        sol = np.zeros(0)
    x[F] = sol[:F.size]
    y = sol[F.size:] if m else np.zeros(0)
    return x, y


POLISH_MAX_DENSE = 3000


def active_set_polish(spec: SubproblemSpec, guess, delta=1e-8, max_steps=None):
    """Primal-dual active-set iteration for ``theta`` zero or l1.

    Starts from the pins and intervals suggested by ``guess`` and returns a
    verified ``SubproblemResult`` or ``None`` (cycling, inconsistency or a
    problem too large for the dense KKT solve).
    """
    th = spec.theta
    if th.kind not in ("zero", "l1"):
        return None
    n = spec.g.size
    m = 0 if spec.D is None else spec.D.shape[0]
    if n + m > POLISH_MAX_DENSE:
        return None
    lo, hi = spec.cone.bounds()
    w = th.weight if th.kind == "l1" else 0.0
    cells = _Cells(lo.astype(float), hi.astype(float), w)
    cells.seed(np.asarray(guess, dtype=float), delta)
    G, g, D, b = spec.G, spec.g, spec.D, spec.b
    scale = 1.0 + max(abs(G).max() if G.nnz else 0.0, np.abs(g).max(initial=0.0),
                      0.0 if b is None else np.abs(b).max(initial=0.0))
    tol = 1e-11 * scale
    seen = set()
    for _ in range(max_steps or 3 * n + 10):
        k = cells.key()
        if k in seen:
            return None
        seen.add(k)
        x, y = _kkt_solve(G, g, D, b, cells)
        if m and np.abs(D @ x - b).max() > 1e-9 * scale:
            return None
        r = G @ x + g - (D.T @ y if m else 0.0)
        changed = False
        for j in range(n):
            if cells.fixed[j]:
                left, right = cells.range(j)
                if -r[j] > right + tol:
                    cells.move(j, +1)
                    changed = True
                elif -r[j] < left - tol:
                    cells.move(j, -1)
                    changed = True
            elif x[j] < cells.a[j] - tol * (1 + abs(cells.a[j])):
                cells.pin(j, cells.a[j])
                changed = True
            elif x[j] > cells.b[j] + tol * (1 + abs(cells.b[j])):
                cells.pin(j, cells.b[j])
                changed = True
        if not changed:
            free = ~cells.fixed
            x = np.where(free, np.minimum(np.maximum(x, cells.a), cells.b), cells.val)
            s, z = _split(th, lo, hi, x, r, free)
            s = np.where(free, -cells.slope(), s)
            if m:
                d = G @ x + g - D.T @ y - s - z
            else:
                d = G @ x + g - s - z
            return SubproblemResult(x, y, s, z, d, "polish")
    return None


class SubproblemSolver:
    """Solver for one block's subproblem with its own cached sGS-ADMM."""

    def __init__(self, G, cone, theta, D=None, b=None, kernels=None, max_iter=50000):
        self.G, self.cone, self.theta, self.D, self.b = as_csc(G), cone, theta, D, b
        self.n = self.G.shape[0]
        self.gamma = _uniform_diag(self.G) if D is None else None
        self.kernels = kernels or backend.kernels
        self.max_iter = max_iter
        self._sgs = None
        self._quad = QuadTerm.sparse(self.G)
        self.sgs_runs = 0

    def spec(self, g, index=0):
        return SubproblemSpec(index, self.G, np.asarray(g, dtype=float), self.theta, self.cone, self.D, self.b)

    def _instance(self, g):
        A0 = self.D if self.D is not None else as_csc(sp.csc_matrix((0, self.n)))
        b0 = self.b if self.D is not None else np.zeros(0)
        blk = Block(A=A0, c=g, cone=self.cone, Q=self._quad, theta=self.theta)
        return BlockAngularProblem([blk], b0, name="subproblem")

    def _run_sgs(self, g, tol, warm):
        prob = self._instance(g)
        params = SgsAdmmParams(tol=tol, max_iter=self.max_iter, check_interval=10)
        if self._sgs is None:
            self._sgs = SgsAdmmSolver(prob, params, self.kernels, check=False)
            self._norms = build_norm_cache(prob)
        sgs = self._sgs
        sgs.problem, sgs.params = prob, params
        sgs.norms = NormCache(self._norms.norm_b, float(np.linalg.norm(g)), self._norms.norm_Q)
        init = None
        if warm is not None:
            init = PrimalDualIterate([warm.x.copy()], warm.y.copy(), [np.zeros(0)],
                                     [warm.s.copy()], [warm.z.copy()], [self.G @ warm.x])
        state, rep = sgs.run(sgs.initial_state(init, sigma=sgs.cache.sigma))
        self.sgs_runs += 1
        it = state.it
        return it.x[0], it.y0, it.s[0], it.z[0], rep

    def solve(self, g, tol_abs, warm: SubproblemResult | None = None, guess=None,
              warm_polish=True) -> SubproblemResult:
        """Solve to ``||d|| <= tol_abs``; raises ``MaxIterations`` otherwise."""
        if not tol_abs > 0:
            raise ValueError("tol_abs must be positive")
        g = np.asarray(g, dtype=float)
        spec = self.spec(g)
        if self.gamma is not None:
            res = _prox_solve(spec, self.gamma)
            if res.dnorm <= tol_abs:
                return res
        if warm_polish:
            start = warm.x if warm is not None else guess
            if start is not None:
                res = active_set_polish(spec, start)
                if res is not None and res.dnorm <= tol_abs:
                    return res
        best, inner = None, 0
        tol = 1e-5
        while tol >= 1e-13:
            x, y, s, z, rep = self._run_sgs(g, tol, warm)
            inner += rep.iterations
            res = active_set_polish(spec, x, delta=max(1e-8, 10 * tol))
            if res is None:
                xp = project_cone(self.cone, x)
                dd = self.G @ xp + g - s - z - (self.D.T @ y if self.D is not None else 0.0)
                res = SubproblemResult(xp, y, s, z, dd, "sgs-admm")
            res.method = "sgs-admm+" + res.method if res.method == "polish" else res.method
            res.inner_iterations = inner
            if best is None or res.dnorm < best.dnorm:
                best = res
            if res.dnorm <= tol_abs:
                return res
            warm = SubproblemResult(x, y, s, z, res.d)
            tol /= 100.0
        raise MaxIterations(f"subproblem residual {best.dnorm:.3e} above {tol_abs:.3e}", report=best)


def solve_subproblem(spec: SubproblemSpec, tol_abs, warm=None, kernels=None) -> SubproblemResult:
    """One-shot solve of ``min theta + 1/2 <x, G x> + <g, x>`` over ``F``."""
    solver = SubproblemSolver(spec.G, spec.cone, spec.theta, spec.D, spec.b, kernels)
    return solver.solve(spec.g, tol_abs, warm=warm)


# ---------------------------------------------------------------------------
# dual recovery


@dataclass
class DualRecovery:
    iterate: PrimalDualIterate
    residual: list  # right-hand side of the recovery identity, per block
    direct: list  # -Q x + A^T y0 + D^T y + s + z - c computed directly

    @property
    def norm(self):
        return float(np.sqrt(sum(float(r @ r) for r in self.residual)))


def recover_duals(problem: BlockAngularProblem, maj: ProximalMajorizer, x_center, x_new, y0_new,
                  subs, tau, sigma) -> DualRecovery:
    """Full dual point from the block subproblem duals.

    ``x_center`` is the point the majorized step was taken at (``x^k`` for
    the single-step methods). The residual is assembled term by term,

        R^d_i + sigma M_i (x_i^+ - x_i^c) + sigma A_i^T A (x^c - x^+)
              + (tau - 1) sigma A_i^T (b0 - A x^+),

    where ``R^d_i = -d_i`` is the subproblem dual residual at ``w_i = x_i^+``.
    """
    blocks = problem.blocks
    Ax_new = _coupling(problem, x_new)
    Adiff = _coupling(problem, [c - x for c, x in zip(x_center, x_new)])
    pres = problem.b0 - Ax_new
    rhs, direct = [], []
    y = []
    for i, blk in enumerate(blocks):
        sub = subs[i]
        t = -sub.d + sigma * (maj.M[i] @ (x_new[i] - x_center[i]))
        t = t + sigma * (blk.A.T @ Adiff) + (tau - 1.0) * sigma * (blk.A.T @ pres)
        rhs.append(t)
        dty = blk.D.T @ sub.y if blk.D is not None else 0.0
        direct.append(-(blk.Q @ x_new[i]) + blk.A.T @ y0_new + dty + sub.s + sub.z - blk.c)
        y.append(sub.y.copy() if blk.D is not None else np.zeros(0))
    it = PrimalDualIterate([np.array(v) for v in x_new], np.array(y0_new), y,
                           [sub.s.copy() for sub in subs], [sub.z.copy() for sub in subs],
                           [blk.Q @ v for blk, v in zip(blocks, x_new)])
    return DualRecovery(it, rhs, direct)


# ---------------------------------------------------------------------------
# Lyapunov certificate


@dataclass
class Theorem1Certificate:
    """``slack[k]`` is right side minus left side of the descent inequality;
    ``descent[k] = Phi_k - Phi_{k+1}``. ``passed`` checks the full
    inequality, ``monotone`` only that ``Phi`` does not increase."""

    lyapunov: list
    slack: list
    correction: list
    threshold: list
    label: str = "proved"
    descent: list = field(default_factory=list)

    @property
    def passed(self):
        return all(s >= t for s, t in zip(self.slack, self.threshold))

    @property
    def monotone(self):
        return all(d >= t for d, t in zip(self.descent, self.threshold))

    @property
    def worst(self):
        if not self.slack:
            return np.inf
        return float(min(s - t for s, t in zip(self.slack, self.threshold)))

    @property
    def first_violation(self):
        for k, (s, t) in enumerate(zip(self.slack, self.threshold)):
            if s < t:
                return k
        return None


def check_theorem1(problem: BlockAngularProblem, maj: ProximalMajorizer, history, x_ref, y0_ref,
                   tau, sigma, rel_tol=1e-8, vhat="literal") -> Theorem1Certificate:
    """Evaluate the descent inequality of the single-step method.

    ``history[k] = (x^k, y0^k, d^k)`` with ``d^k`` the subproblem residual
    that produced ``x^k``. With ``Phi_k = ||x^k - xbar||^2_Vh + ||y0^k - ybar0||^2``,

        Phi_{k+1} - Phi_k <= -((2-tau)/(3 tau) ||dy0||^2 + ||dx||^2_V
                               - 2 tau sigma <d^{k+1}, x^{k+1} - xbar>)

    where ``V = tau sigma (Q + sigma T + (2-tau)/6 sigma A^T A)`` and
    ``Vh = V + (2-tau)/6 sigma A^T A``. Majorizers other than ``J`` give a
    certificate labelled ``heuristic``. ``vhat="scaled"`` multiplies the
    extra ``A^T A`` term of ``Vh`` by ``tau sigma`` like the rest of ``V``
    (the two readings agree for ``tau = sigma = 1``).
    """
    if vhat not in ("literal", "scaled"):
        raise ValueError(f"vhat must be 'literal' or 'scaled', got {vhat!r}")
    blocks = problem.blocks
    c6 = (2.0 - tau) / 6.0
    vh = 1.0 if vhat == "literal" else tau * sigma

    def AtA(v):
        Av = _coupling(problem, v)
        return [blk.A.T @ Av for blk in blocks]

    def V(v):
        Tv = maj.apply_T(problem, v)
        Av = AtA(v)
        return [tau * sigma * (blk.Q @ vi + sigma * ti + c6 * sigma * ai)
                for blk, vi, ti, ai in zip(blocks, v, Tv, Av)]

    def Vh(v):
        return [a + vh * c6 * sigma * b for a, b in zip(V(v), AtA(v))]

    def ip(u, v):
        return float(sum(float(a @ b) for a, b in zip(u, v)))

    phi = []
    for x, y0, _ in history:
        e = [a - b for a, b in zip(x, x_ref)]
        ey = y0 - y0_ref
        phi.append(ip(e, Vh(e)) + float(ey @ ey))
    slack, corr, thr = [], [], []
    for k in range(len(history) - 1):
        x0, y0a, _ = history[k]
        x1, y0b, d1 = history[k + 1]
        dx = [a - b for a, b in zip(x1, x0)]
        dy = y0a - y0b
        e1 = [a - b for a, b in zip(x1, x_ref)]
        c = 2.0 * tau * sigma * ip(d1, e1)
        rhs = -((2.0 - tau) / (3.0 * tau) * float(dy @ dy) + ip(dx, V(dx)) - c)
        slack.append(rhs - (phi[k + 1] - phi[k]))
        corr.append(c)
        thr.append(-rel_tol * (1.0 + max(phi[k], phi[k + 1])))
    label = "proved" if maj.kind == "SPALM_J" else "heuristic"
    descent = [phi[k] - phi[k + 1] for k in range(len(phi) - 1)]
    return Theorem1Certificate(phi, slack, corr, thr, label, descent)


# ---------------------------------------------------------------------------
# driver


@dataclass
class PalmState:
    x: list
    y0: np.ndarray
    outer: int = 0
    inner_total: int = 0
    subs: list = None
    recovery: DualRecovery | None = None
    history: list = field(default_factory=list)


def iapg_momentum(t):
    """Next momentum parameter and extrapolation weight: ``(t_{s+1}, beta_{s+1})``."""
    t_next = (1.0 + np.sqrt(1.0 + 4.0 * t * t)) / 2.0
    return t_next, (t - 1.0) / t_next


class PalmSolver:
    """Shared machinery for the four variants."""

    def __init__(self, problem: BlockAngularProblem, params: PalmParams | None = None, kernels=None,
                 check=True, majorizer: ProximalMajorizer | None = None):
        self.problem = problem
        self.params = p = params or PalmParams()
        if check:
            validate(problem).raise_if_invalid()
        self.kernels = kernels or backend.kernels
        t0 = time.perf_counter()
        self.maj = majorizer or build_majorizer(problem, p.majorizer_kind, p.sigma)
        if p.variant == "DQA" and p.classic_dqa_step:
            self.step_maj = self.maj.scaled(self.maj.rho, problem)
        else:
            self.step_maj = self.maj
        self.subsolvers = [SubproblemSolver(self.step_maj.G[i], blk.cone, blk.theta, blk.D, blk.b,
                                            self.kernels, p.sub_max_iter)
                           for i, blk in enumerate(problem.blocks)]
        self.norms = build_norm_cache(problem)
        self.setup_time = time.perf_counter() - t0

    @property
    def name(self):
        v = self.params.variant
        return {"SPALM": "spalm", "SPALMB": "spalm-b", "DQA": "dqa", "IAPG": "iapg"}[v]

    def initial_state(self, x=None, y0=None):
        prob = self.problem
        x = [np.zeros(n) for n in prob.dims] if x is None else [np.array(v, dtype=float) for v in x]
        y0 = np.zeros(prob.m0) if y0 is None else np.array(y0, dtype=float)
        return PalmState(x, y0)

    def linear_terms(self, x_center, y0, maj=None):
        """``g_i = Q_i x_i + c_i + sigma A_i^T (A x - b0 - y0/sigma) - G_i x_i``."""
        maj = maj or self.step_maj
        sig = self.params.sigma
        prob = self.problem
        r = _coupling(prob, x_center) - prob.b0 - y0 / sig
        return [blk.Q @ xi + blk.c + sig * spmv(blk.A, r, True, self.kernels) - maj.G[i] @ xi
                for i, (blk, xi) in enumerate(zip(prob.blocks, x_center))]

    def solve_blocks(self, g, tol_abs, warm, guess, pool=None):
        def job(i):
            return self.subsolvers[i].solve(g[i], tol_abs, warm=None if warm is None else warm[i],
                                            guess=guess[i], warm_polish=self.params.warm_polish)
        idx = range(len(self.problem.blocks))
        if pool is not None:
            return list(pool.map(job, idx))
        return [job(i) for i in idx]

    def _sub_tol(self, eps):
        p = self.params
        if p.sub_tol is not None:
            return p.sub_tol
        return eps / np.sqrt(len(self.problem.blocks))

    def multiplier_step(self, y0, x_new):
        p = self.params
        return y0 + p.tau * p.sigma * (self.problem.b0 - _coupling(self.problem, x_new))

    # one outer iteration -------------------------------------------------

    def spalm_step(self, st: PalmState, pool=None) -> PalmState:
        p = self.params
        eps = p.eps(st.outer)
        g = self.linear_terms(st.x, st.y0)
        subs = self.solve_blocks(g, self._sub_tol(eps), st.subs, st.x, pool)
        x_new = [s.x for s in subs]
        y0_new = self.multiplier_step(st.y0, x_new)
        rec = recover_duals(self.problem, self.maj, st.x, x_new, y0_new, subs, p.tau, p.sigma)
        new = PalmState(x_new, y0_new, st.outer + 1, st.inner_total + 1, subs, rec, st.history)
        if p.keep_history:
            if not st.history:
                st.history.append(([v.copy() for v in st.x], st.y0.copy(), [np.zeros_like(v) for v in st.x]))
            st.history.append(([v.copy() for v in x_new], y0_new.copy(), [s.d.copy() for s in subs]))
        return new

    def inner_loop(self, st: PalmState, pool=None):
        """Inner proximal-gradient (DQA) or accelerated (IAPG) loop; returns
        ``(x^{k+1}, subs, center, inner_count, converged)``."""
        p = self.params
        prob = self.problem
        eps = p.eps(st.outer)
        sub_tol = self._sub_tol(eps) if p.sub_tol is not None else 0.5 * self._sub_tol(eps)
        accel = p.variant == "IAPG"
        classic = p.variant == "DQA" and p.classic_dqa_step
        xhat = [v.copy() for v in st.x]
        xbar = xhat
        t = 1.0
        subs = st.subs
        for s in range(1, p.inner_max + 1):
            center = xbar if accel else xhat
            g = self.linear_terms(center, st.y0)
            subs = self.solve_blocks(g, sub_tol, subs, center, pool)
            if classic:
                rho = self.maj.rho
                xnew = [xh + rho * (sb.x - xh) for xh, sb in zip(xhat, subs)]
                step = self.step_maj.apply_M([sb.x - xh for sb, xh in zip(subs, xhat)])
                gap = p.sigma * np.sqrt(sum(float(v @ v) for v in step))
            else:
                xnew = [sb.x for sb in subs]
                corr = self.maj.apply_T(prob, [c - xn for c, xn in zip(center, xnew)])
                dout = [sb.d + p.sigma * v for sb, v in zip(subs, corr)]
                gap = np.sqrt(sum(float(v @ v) for v in dout))
            done = gap <= eps
            if accel:
                t_next, beta = iapg_momentum(t)
                if not done:
                    xbar = [(1.0 + beta) * a - beta * b for a, b in zip(xnew, xhat)]
                t = t_next
            if done or s == p.inner_max:
                return xnew, subs, center, s, done
            xhat = xnew
        raise AssertionError("unreachable")

    def dqa_step(self, st: PalmState, pool=None) -> PalmState:
        p = self.params
        x_new, subs, center, inner, ok = self.inner_loop(st, pool)
        y0_new = self.multiplier_step(st.y0, x_new)
        rec = recover_duals(self.problem, self.step_maj, center, x_new, y0_new, subs, p.tau, p.sigma)
        new = PalmState(x_new, y0_new, st.outer + 1, st.inner_total + inner, subs, rec, st.history)
        new.inner_hit = not ok
        return new

    def step(self, st, pool=None):
        if self.params.variant in ("SPALM", "SPALMB"):
            return self.spalm_step(st, pool)
        return self.dqa_step(st, pool)

    def residuals(self, st: PalmState):
        it = st.recovery.iterate
        wQw = sum(float(xi @ qi) for xi, qi in zip(it.x, it.q))
        return compute_residuals(self.problem, it, self.norms, wQw=wQw, kernels=self.kernels)

    def run(self, state: PalmState | None = None, report: SolveReport | None = None):
        p = self.params
        prob = self.problem
        st = state or self.initial_state()
        report = report or SolveReport(self.name, prob.name, params=asdict(p))
        report.notes.append(f"majorizer {self.maj.kind}, probe min {self.maj.psd_min:.3e}")
        if self.maj.beta is not None:
            report.notes.append(f"beta = {np.array2string(self.maj.beta, precision=4)}")
        if self.maj.chi is not None:
            report.notes.append(f"chi = {self.maj.chi}")
        t0 = time.perf_counter()
        pool = ThreadPoolExecutor(p.threads) if p.threads > 1 else None
        best = (np.inf, None, None)
        res = None
        inner_hits = 0
        try:
            while True:
                st = self.step(st, pool)
                inner_hits += getattr(st, "inner_hit", False)
                k = st.outer
                done = k >= p.max_outer
                timed_out = p.time_limit is not None and time.perf_counter() - t0 > p.time_limit
                if k % p.check_interval and not done and not timed_out:
                    continue
                res = self.residuals(st)
                report.record(k, res, p.sigma, recovery=st.recovery.norm, inner=st.inner_total)
                if res.eta < best[0]:
                    best = (res.eta, st, res)
                if res.eta <= p.tol:
                    report.termination = "converged"
                    break
                if done or timed_out:
                    report.termination = "max_iter" if done else "time_limit"
                    report.notes.append(f"returned best checked iterate (outer {best[1].outer})")
                    st, res = best[1], best[2]
                    break
        finally:
            if pool is not None:
                pool.shutdown()
        report.iterations = k
        report.inner_iterations = st.inner_total
        report.final = res
        report.wall_time = time.perf_counter() - t0 + self.setup_time
        report.factorizations = {"sgs_subproblem_runs": sum(s.sgs_runs for s in self.subsolvers)}
        if inner_hits:
            report.notes.append(f"inner loop hit inner_max in {inner_hits} outer iterations")
        if report.termination != "converged" and p.raise_on_max:
            raise MaxOuterIterations(f"{self.name}: eta {res.eta:.3e} after {k} outer iterations", report)
        return st, report


def spalm_solve(problem: BlockAngularProblem, params: PalmParams | None = None, kernels=None):
    """sPALM / sPALM-b; returns ``(PrimalDualIterate, SolveReport)``."""
    params = params or PalmParams()
    if params.variant not in ("SPALM", "SPALMB"):
        raise ValueError(f"spalm_solve handles SPALM and SPALMB, got {params.variant}")
    solver = PalmSolver(problem, params, kernels)
    st, rep = solver.run()
    return st.recovery.iterate, rep


def dqa_solve(problem: BlockAngularProblem, params: PalmParams | None = None, kernels=None):
    """ALM with a DQA or accelerated inner loop; returns ``(PrimalDualIterate, SolveReport)``."""
    params = params or PalmParams(variant="DQA")
    if params.variant not in ("DQA", "IAPG"):
        raise ValueError(f"dqa_solve handles DQA and IAPG, got {params.variant}")
    solver = PalmSolver(problem, params, kernels)
    st, rep = solver.run()
    return st.recovery.iterate, rep
