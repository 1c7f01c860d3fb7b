"""Dual semi-proximal ADMM with a symmetric Gauss-Seidel sweep.

The iteration works on the dual problem

    min  sum_i theta_i^*(-s_i) + 1/2 <w, Q w> - <b, y> + delta_K^*(-z)
    s.t. -Q w + B^T y + s + z = c

with the primal ``x`` as multiplier. One cycle updates the block
``(y_{1:N}, w, s)`` by a forward/backward sweep, then ``(y0, z)`` the same
way, then ``x``. All linear systems use factors cached once per run; only
``I + sigma Q_i`` depends on ``sigma``.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from . import backend
from .model import BlockAngularProblem, as_csc, validate
from .prox import PROX_TOL, moreau_cone_step, moreau_theta_step
from .report import SolveReport
from .residuals import PrimalDualIterate, build_norm_cache, compute_residuals
from .sparse import NotPositiveDefinite, cholesky, form_normal, pcg, spmv

GOLDEN = (1.0 + np.sqrt(5.0)) / 2.0


@dataclass
class SgsAdmmParams:
    sigma0: float = 1.0
    tau: float = 1.618
    tol: float = 1e-5
    max_iter: int = 100000
    check_interval: int = 10
    sigma_update: str = "balance"  # or "fixed"
    balance_interval: int = 50
    balance_factor: float = 1.25
    balance_ratio: float = 5.0
    sigma_min: float = 1e-4
    sigma_max: float = 1e4
    linear_solver: str = "direct"  # or "pcg"
    threads: int = 1
    shortcuts: bool = True
    prox_tol: float = PROX_TOL
    ordering: str = "auto"
    time_limit: float | None = None

    def __post_init__(self):
        if not 0.0 < self.tau < GOLDEN:
            raise ValueError(f"tau must lie in (0, {GOLDEN:.10f}), got {self.tau}")
        if not self.sigma0 > 0:
            raise ValueError(f"sigma0 must be positive, got {self.sigma0}")
        if self.sigma_update not in ("balance", "fixed"):
            raise ValueError(f"unknown sigma_update {self.sigma_update!r}")
        if self.linear_solver not in ("direct", "pcg"):
            raise ValueError(f"unknown linear_solver {self.linear_solver!r}")
        if self.check_interval < 1 or self.threads < 1:
            raise ValueError("check_interval and threads must be >= 1")
        if not self.tol >= 0 or self.max_iter < 1:
            raise ValueError(f"need tol >= 0 and max_iter >= 1, got tol={self.tol}, max_iter={self.max_iter}")


# ---------------------------------------------------------------------------
# factor cache


class _SPDSolver:
    """Direct (cached Cholesky) or PCG solves with one SPD matrix."""

    def __init__(self, M, mode, ordering, kernels, label):
        self.M = M
        self.mode = mode
        self.label = label
        self.factor = None
        self.pcg_iterations = 0
        if mode == "direct":
            self.factor = cholesky(M, ordering=ordering, kernels=kernels)

    @property
    def ridge(self):
        return 0.0 if self.factor is None else self.factor.shift

    def solve(self, R, pcg_tol=1e-12, x0=None, pool=None):
        if self.mode == "direct":
            return _chunked(self.factor.solve, R, pool)
        X = np.empty_like(R)
        R2 = R.reshape(R.shape[0], -1)
        X2 = X.reshape(R2.shape)
        for j in range(R2.shape[1]):
            start = None if x0 is None else x0.reshape(R2.shape)[:, j]
            X2[:, j], its, _ = pcg(self.M, R2[:, j], tol=pcg_tol, maxit=10 * self.M.shape[0] + 100, x0=start)
            self.pcg_iterations += its
        return X


def _chunked(fn, R, pool):
    """Apply a column-separable solve, splitting columns over ``pool``."""
    if pool is None or R.ndim == 1 or R.shape[1] < 2:
        return fn(R)
    nw = min(pool._max_workers, R.shape[1])
    cuts = np.linspace(0, R.shape[1], nw + 1).astype(int)
    parts = list(pool.map(lambda ab: fn(np.ascontiguousarray(R[:, ab[0]:ab[1]])),
                          zip(cuts[:-1], cuts[1:])))
    return np.hstack(parts)


def _is_scaled_identity(M):
    m = M.shape[0]
    M = as_csc(M)
    M.eliminate_zeros()
    if M.nnz != m or m == 0:
        return None
    if not np.array_equal(M.indices, np.arange(m)):
        return None
    d = M.data
    return float(d[0]) if np.all(d == d[0]) and d[0] > 0 else None


class _QSolver:
    """``(I + sigma Q_i)^{-1}``: identity, reciprocal vector or Cholesky."""

    def __init__(self, Q, sigma, ordering, kernels):
        self.kind = Q.kind
        self.sigma = sigma
        self.factor = None
        self.recip = None
        if Q.kind == "diag":
            self.recip = 1.0 / (1.0 + sigma * Q.diag)
        elif Q.kind == "sparse":
            M = as_csc(sp.identity(Q.dim, format="csc") + sigma * Q.matrix)
            self.factor = cholesky(M, ordering=ordering, kernels=kernels)

    def solve(self, r):
        if self.kind == "zero":
            return r.copy()
        if self.kind == "diag":
            return self.recip * r
        return self.factor.solve(r)


@dataclass(eq=False)
class FactorCache:
    """Cached solvers: ``D_i D_i^T`` groups (blocks sharing one ``D``),
    ``sum_i A_i A_i^T`` (or its scalar) and the sigma-stamped ``I + sigma Q_i``."""

    sigma: float
    d_groups: list  # [(solver, [block indices])]
    d_group_of: dict
    aat: object  # _SPDSolver or None
    aat_scalar: float | None
    q_solvers: list
    counts: dict = field(default_factory=lambda: {"DDt": 0, "AAt": 0, "IsQ": 0})
    ordering: str = "auto"
    kernels: object = None

    def solve_aat(self, r, pcg_tol=1e-12, x0=None):
        if self.aat_scalar is not None:
            return r / self.aat_scalar
        if self.aat is None:  # no coupling rows
            return np.zeros(0)
        return self.aat.solve(r, pcg_tol, x0)

    def restamp(self, problem, sigma):
        """Refactor only the sigma-dependent ``I + sigma Q_i`` operators."""
        self.sigma = sigma
        for i, blk in enumerate(problem.blocks):
            self.q_solvers[i] = _QSolver(blk.Q, sigma, self.ordering, self.kernels)
            if blk.Q.kind == "sparse":
                self.counts["IsQ"] += 1

    @property
    def ridge(self):
        out = {f"DDt[{','.join(map(str, idx))}]": s.ridge for s, idx in self.d_groups if s.ridge}
        if self.aat is not None and self.aat.ridge:
            out["AAt"] = self.aat.ridge
        return out


def build_cache(problem: BlockAngularProblem, sigma, linear_solver="direct", ordering="auto",
                kernels=None) -> FactorCache:
    """Factor every matrix the iteration needs."""
    kernels = kernels or backend.kernels
    groups, group_of = [], {}
    by_id = {}
    counts = {"DDt": 0, "AAt": 0, "IsQ": 0}
    for i, blk in enumerate(problem.blocks):
        if blk.D is None:
            continue
        key = id(blk.D)
        if key not in by_id:
            try:
                solver = _SPDSolver(form_normal(blk.D, "MMT"), linear_solver, ordering, kernels, f"DDt{i}")
            except NotPositiveDefinite as exc:
                raise NotPositiveDefinite(f"D_{i} D_{i}^T: {exc}", exc.column, block=i) from exc
            counts["DDt"] += linear_solver == "direct"
            by_id[key] = len(groups)
            groups.append((solver, []))
        g = by_id[key]
        groups[g][1].append(i)
        group_of[i] = g
    m0 = problem.m0
    aat_sum = as_csc(sp.csc_matrix((m0, m0)))
    for blk in problem.blocks:
        aat_sum = aat_sum + form_normal(blk.A, "MMT")
    aat_sum = as_csc(aat_sum)
    scalar = _is_scaled_identity(aat_sum)
    aat = None
    if scalar is None and m0 > 0:
        try:
            aat = _SPDSolver(aat_sum, linear_solver, ordering, kernels, "AAt")
        except NotPositiveDefinite as exc:
            raise NotPositiveDefinite(f"sum A_i A_i^T: {exc}", exc.column, block=None) from exc
        counts["AAt"] += linear_solver == "direct"
    qs = [_QSolver(blk.Q, sigma, ordering, kernels) for blk in problem.blocks]
    counts["IsQ"] += sum(blk.Q.kind == "sparse" for blk in problem.blocks)
    return FactorCache(sigma, groups, group_of, aat, scalar, qs, counts, ordering, kernels)


# ---------------------------------------------------------------------------
# state and one cycle


@dataclass
class SgsState:
    it: PrimalDualIterate
    w: list  # w-tilde, with q = Q w
    sigma: float
    iteration: int = 0
    prox_start: list = None
    ybar: list = None
    ybar0: np.ndarray = None
    rd: list = None  # dual residual blocks from the last Step 3

    @classmethod
    def zeros(cls, problem, sigma):
        return cls(PrimalDualIterate.zeros(problem), [np.zeros(n) for n in problem.dims], float(sigma),
                   prox_start=[None] * len(problem.blocks))

    def copy(self):
        cp = lambda seq: None if seq is None else [None if v is None else np.array(v) for v in seq]  # noqa: E731
        return SgsState(self.it.copy(), cp(self.w), self.sigma, self.iteration, cp(self.prox_start),
                        cp(self.ybar), None if self.ybar0 is None else self.ybar0.copy(), cp(self.rd))

    def wQw(self):
        return float(sum(wi @ qi for wi, qi in zip(self.w, self.it.q)))


def _solve_local(problem, cache, rhs: dict, pool, pcg_tol, guess):
    """Batched ``D_i D_i^T y_i = rhs_i``: one multi-column solve per shared factor."""
    out = {}
    for solver, idx in cache.d_groups:
        use = [i for i in idx if i in rhs]
        if not use:
            continue
        R = np.column_stack([rhs[i] for i in use])
        x0 = None
        if guess is not None:
            x0 = np.column_stack([guess[i] for i in use])
        Y = solver.solve(R, pcg_tol, x0, pool)
        for j, i in enumerate(use):
            out[i] = np.ascontiguousarray(Y[:, j])
    return out


def iterate_once(state: SgsState, cache: FactorCache, problem: BlockAngularProblem,
                 params: SgsAdmmParams | None = None, inplace=False, pool=None) -> SgsState:
    """One full cycle: Steps 1a-1e, 2a-2c and the multiplier step."""
    params = params or SgsAdmmParams()
    st = state if inplace else state.copy()
    if cache.sigma != st.sigma:
        raise ValueError(f"cache stamped for sigma={cache.sigma}, state has sigma={st.sigma}")
    it, sig, tau = st.it, st.sigma, params.tau
    kern = cache.kernels
    blocks = problem.blocks
    short = params.shortcuts
    k = st.iteration + 1
    pcg_tol = max(1e-12, 0.1 / k**2)
    inv = 1.0 / sig

    g = [spmv(blk.A, it.y0, True, kern) + it.z[i] - blk.c + inv * it.x[i] for i, blk in enumerate(blocks)]
    qzero = [blk.Q.is_zero for blk in blocks]
    tzero = [blk.theta.is_zero for blk in blocks]

    # Step 1a
    rhs = {}
    for i, blk in enumerate(blocks):
        if blk.D is not None:
            rhs[i] = inv * blk.b - spmv(blk.D, -it.q[i] + it.s[i] + g[i], False, kern)
    ybar = _solve_local(problem, cache, rhs, pool, pcg_tol, st.ybar)
    dty = [spmv(blk.D, ybar[i], True, kern) if blk.D is not None else 0.0 for i, blk in enumerate(blocks)]

    def wsolve(i, s_i):
        wt = cache.q_solvers[i].solve(sig * (dty[i] + s_i + g[i]))
        return wt, blocks[i].Q @ wt

    # Steps 1b-1d
    def sweep(i):
        blk = blocks[i]
        if short and qzero[i] and tzero[i]:
            return None
        if short and qzero[i]:
            a = dty[i] + g[i]
            s_new, pr = moreau_theta_step(blk.theta, sig, a, params.prox_tol, st.prox_start[i], kern)
            return s_new, pr.point, np.zeros(blk.n), np.zeros(blk.n)
        if short and tzero[i]:
            wt, qt = wsolve(i, it.s[i])
            return it.s[i], None, wt, qt
        _, qbar = wsolve(i, it.s[i])
        a = -qbar + dty[i] + g[i]
        s_new, pr = moreau_theta_step(blk.theta, sig, a, params.prox_tol, st.prox_start[i], kern)
        wt, qt = wsolve(i, s_new)
        return s_new, pr.point, wt, qt

    heavy = [i for i in range(len(blocks)) if not tzero[i] and blocks[i].theta.kind in ("kleinrock", "bpr")]
    if pool is not None and len(heavy) > 1:
        results = list(pool.map(sweep, range(len(blocks))))
    else:
        results = [sweep(i) for i in range(len(blocks))]
    for i, r in enumerate(results):
        if r is None:
            continue
        s_new, ppt, wt, qt = r
        it.s[i] = s_new
        if ppt is not None:
            st.prox_start[i] = ppt
        st.w[i], it.q[i] = wt, qt

    # Step 1e
    rhs = {}
    for i, blk in enumerate(blocks):
        if blk.D is None:
            continue
        if short and qzero[i] and tzero[i]:
            it.y[i] = ybar[i]
        else:
            rhs[i] = inv * blk.b - spmv(blk.D, -it.q[i] + it.s[i] + g[i], False, kern)
    for i, yi in _solve_local(problem, cache, rhs, pool, pcg_tol, ybar).items():
        it.y[i] = yi
    st.ybar = [ybar.get(i) for i in range(len(blocks))]

    # Steps 2a-2c
    dty = [spmv(blk.D, it.y[i], True, kern) if blk.D is not None else 0.0 for i, blk in enumerate(blocks)]
    h = [-it.q[i] + dty[i] + it.s[i] - blk.c + inv * it.x[i] for i, blk in enumerate(blocks)]
    Ah = -inv * problem.b0
    for i, blk in enumerate(blocks):
        Ah = Ah + spmv(blk.A, h[i], False, kern)
    all_free = all(blk.cone.kind == "free" for blk in blocks)

    def coupling_solve(x0):
        r = -Ah
        for i, blk in enumerate(blocks):
            r = r - spmv(blk.A, it.z[i], False, kern)
        return cache.solve_aat(r, pcg_tol, x0)

    if short and all_free:
        ybar0 = coupling_solve(it.y0)
        it.y0 = ybar0
    else:
        ybar0 = coupling_solve(it.y0)
        for i, blk in enumerate(blocks):
            it.z[i] = moreau_cone_step(blk.cone, sig, spmv(blk.A, ybar0, True, kern) + h[i])
        it.y0 = coupling_solve(ybar0)
    st.ybar0 = ybar0

    # Step 3
    rd = []
    for i, blk in enumerate(blocks):
        r = -it.q[i] + spmv(blk.A, it.y0, True, kern) + dty[i] + it.s[i] + it.z[i] - blk.c
        it.x[i] = it.x[i] + (tau * sig) * r
        rd.append(r)
    st.rd = rd
    st.iteration = k
    return st


# ---------------------------------------------------------------------------
# driver


def _balance(sigma, res, params):
    """Residual balancing for the dual ADMM.

    ``sigma`` penalises the dual feasibility residual, so a lagging
    ``eta_D`` calls for a larger ``sigma``; a lagging primal side (the
    worst of ``eta_P``, ``eta_Q``, ``eta_K``, ``eta_S``) for a smaller one.
    """
    r = params.balance_ratio
    primal = max(res.eta_P, res.eta_Q, res.eta_K, res.eta_S)
    if res.eta_D > r * primal:
        sigma *= params.balance_factor
    elif primal > r * res.eta_D:
        sigma /= params.balance_factor
    return float(min(max(sigma, params.sigma_min), params.sigma_max))


class SgsAdmmSolver:
    """Reusable driver; keeps the factor cache between calls."""

    name = "sgs-admm"

    def __init__(self, problem: BlockAngularProblem, params: SgsAdmmParams | None = None,
                 kernels=None, check=True):
        self.problem = problem
        self.params = params or SgsAdmmParams()
        if check:
            validate(problem).raise_if_invalid()
        self.kernels = kernels or backend.kernels
        t0 = time.perf_counter()
        self.cache = build_cache(problem, self.params.sigma0, self.params.linear_solver,
                                 self.params.ordering, self.kernels)
        self.setup_time = time.perf_counter() - t0
        self.norms = build_norm_cache(problem)

    def initial_state(self, iterate: PrimalDualIterate | None = None, w=None, sigma=None):
        sigma = self.params.sigma0 if sigma is None else float(sigma)
        st = SgsState.zeros(self.problem, sigma)
        if iterate is not None:
            st.it = iterate.copy()
            st.w = [np.array(v, dtype=float) for v in (w if w is not None else iterate.x)]
            st.it.q = [blk.Q @ wi for blk, wi in zip(self.problem.blocks, st.w)]
        return st

    def set_sigma(self, state, sigma):
        if sigma != self.cache.sigma:
            self.cache.restamp(self.problem, sigma)
        state.sigma = sigma

    def residuals(self, state):
        return compute_residuals(self.problem, state.it, self.norms, wQw=state.wQw(), kernels=self.kernels)

    def run(self, state: SgsState | None = None, report: SolveReport | None = None):
        """Iterate until ``eta <= tol``; returns ``(state, report)``.

        On an exhausted budget the best checked iterate is returned with
        ``report.termination == "max_iter"``.
        """
        p = self.params
        prob = self.problem
        state = state or self.initial_state()
        if state.sigma != self.cache.sigma:
            self.cache.restamp(prob, state.sigma)
        report = report or SolveReport(self.name, prob.name, params=asdict(p))
        report.notes.append("dual objective uses <w~, q> for <w, Qw> (implicit w)")
        report.notes.append(f"kernel backend: {backend_name(self.kernels)}")
        t0 = time.perf_counter()
        best = (np.inf, None, None)
        pool = ThreadPoolExecutor(p.threads) if p.threads > 1 else None
        res = None
        total = None
        try:
            start = state.iteration
            while True:
                iterate_once(state, self.cache, prob, p, inplace=True, pool=pool)
                k = state.iteration
                done = k - start >= p.max_iter
                timed_out = p.time_limit is not None and time.perf_counter() - t0 > p.time_limit
                if k % p.check_interval and not done and not timed_out:
                    continue
                res = self.residuals(state)
                report.record(k, res, state.sigma)
                if res.eta < best[0]:
                    best = (res.eta, state.copy(), res)
                if res.eta <= p.tol:
                    report.termination = "converged"
                    break
                if done or timed_out:
                    report.termination = "max_iter" if done else "time_limit"
                    report.notes.append(f"returned best checked iterate (iteration {best[1].iteration})")
                    total = k
                    state, res = best[1], best[2]
                    break
                if p.sigma_update == "balance" and k % p.balance_interval == 0:
                    new = _balance(state.sigma, res, p)
                    if new != state.sigma:
                        self.set_sigma(state, new)
                        report.sigma_trace.append((k, new))
        finally:
            if pool is not None:
                pool.shutdown()
        report.iterations = state.iteration if total is None else total
        report.final = res
        report.wall_time = time.perf_counter() - t0 + self.setup_time
        report.factorizations = dict(self.cache.counts)
        report.ridge = self.cache.ridge
        if p.linear_solver == "pcg":
            report.factorizations["pcg_iterations"] = sum(s.pcg_iterations for s, _ in self.cache.d_groups)
        return state, report


def backend_name(kernels):
    for k, v in backend.BACKENDS.items():
        if v is kernels:
            return k
    return "custom"


def solve(problem: BlockAngularProblem, params: SgsAdmmParams | None = None, kernels=None,
          initial: PrimalDualIterate | None = None):
    """Run the dual sGS-ADMM; returns ``(PrimalDualIterate, SolveReport)``."""
    solver = SgsAdmmSolver(problem, params, kernels)
    state, report = solver.run(solver.initial_state(initial))
    return state.it, report
