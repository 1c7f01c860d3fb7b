"""Sparse linear algebra used by every solver step.

Storage is SciPy CSC (int64 indices). Mat-vecs, the Cholesky factorisation
and triangular solves run through the kernel backend (compiled when
available); orderings, PCG and the power method are plain NumPy.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee
from scipy.sparse.linalg import LinearOperator, aslinearoperator

from . import backend
from .model import as_csc

RIDGE_START = 1e-10
RIDGE_DOUBLINGS = 10
PIVOT_FLOOR = 1e-12
NORM_SAFETY = 1.01


class NotPositiveDefinite(np.linalg.LinAlgError):
    """Raised when a matrix cannot be factored even after ridge attempts."""

    def __init__(self, msg, column=None, block=None):
        super().__init__(msg)
        self.column = column
        self.block = block


def spmv(M, v, adjoint=False, kernels=None):
    """``M @ v`` (or ``M.T @ v``) for a CSC matrix."""
    k = kernels or backend.kernels
    v = np.ascontiguousarray(v, dtype=float)
    nrows, ncols = M.shape
    if v.shape != ((nrows,) if adjoint else (ncols,)):
        raise ValueError(f"dimension mismatch: matrix {M.shape}, vector {v.shape}, adjoint={adjoint}")
    if M.indices.dtype != np.int64:
        M = as_csc(M)
    return k.spmv_csc(nrows, ncols, M.indptr, M.indices, M.data, v, bool(adjoint))


def form_normal(M, mode="MMT") -> sp.csc_matrix:
    """``M M^T`` or ``M^T M`` with bitwise-symmetric storage."""
    M = sp.csc_matrix(M)
    if mode == "MMT":
        P = M @ M.T
    elif mode == "MTM":
        P = M.T @ M
    else:
        raise ValueError(f"unknown mode {mode!r}")
    P = as_csc(P)
    return as_csc((P + P.T) * 0.5)


# ---------------------------------------------------------------------------
# orderings


def minimum_degree(M) -> np.ndarray:
    """Greedy minimum-degree ordering on the explicit elimination graph."""
    n = M.shape[0]
    G = sp.csr_matrix(M)
    adj = [set(G.indices[G.indptr[i]:G.indptr[i + 1]].tolist()) - {i} for i in range(n)]
    heap = [(len(a), i) for i, a in enumerate(adj)]
    heapq.heapify(heap)
    done = np.zeros(n, dtype=bool)
    order = []
    while heap:
        deg, v = heapq.heappop(heap)
        if done[v] or deg != len(adj[v]):
            continue
        done[v] = True
        order.append(v)
        nbrs = adj[v]
        for u in nbrs:
            au = adj[u]
            au.discard(v)
            au |= nbrs
            au.discard(u)
            heapq.heappush(heap, (len(au), u))
        adj[v] = set()
    return np.asarray(order, dtype=np.int64)


def _upper_permuted(M, perm):
    C = as_csc(sp.triu(as_csc(M)[perm][:, perm], format="csc"))
    return C


def _symbolic(C, kernels):
    n = C.shape[0]
    parent = kernels.chol_etree(n, C.indptr, C.indices)
    counts = kernels.chol_colcounts(n, C.indptr, C.indices, parent)
    return parent, counts


def choose_ordering(M, method="auto", kernels=None):
    """Return ``(perm, parent, counts, upper_C)`` for the cheapest candidate."""
    k = kernels or backend.kernels
    n = M.shape[0]
    if method == "natural" or n <= 2:
        cands = {"natural": np.arange(n, dtype=np.int64)}
    elif method == "rcm":
        cands = {"rcm": reverse_cuthill_mckee(sp.csr_matrix(M), symmetric_mode=True).astype(np.int64)}
    elif method == "mindegree":
        cands = {"mindegree": minimum_degree(M)}
    elif method == "auto":
        cands = {
            "mindegree": minimum_degree(M),
            "rcm": reverse_cuthill_mckee(sp.csr_matrix(M), symmetric_mode=True).astype(np.int64),
            "natural": np.arange(n, dtype=np.int64),
        }
    else:
        raise ValueError(f"unknown ordering {method!r}")
    best = None
    for name, perm in cands.items():
        C = _upper_permuted(M, perm)
        parent, counts = _symbolic(C, k)
        fill = int(counts.sum())
        if best is None or fill < best[0]:
            best = (fill, name, perm, parent, counts, C)
    _, name, perm, parent, counts, C = best
    return name, perm, parent, counts, C


# ---------------------------------------------------------------------------
# Cholesky


@dataclass(eq=False)
class CholeskyFactor:
    """``P (M + shift I) P^T = L L^T`` with ``P`` given by ``perm``."""

    n: int
    perm: np.ndarray
    Lp: np.ndarray
    Li: np.ndarray
    Lx: np.ndarray
    shift: float = 0.0
    ridge_attempts: int = 0
    ordering: str = "natural"
    kernels: object = None

    @property
    def nnz(self):
        return int(self.Lp[-1])

    @property
    def L(self) -> sp.csc_matrix:
        return sp.csc_matrix((self.Lx, self.Li, self.Lp), shape=(self.n, self.n))

    def solve(self, r):
        """Solve ``M x = r`` for a vector or an (n, k) block of right-hand sides."""
        r = np.asarray(r, dtype=float)
        if r.shape[0] != self.n:
            raise ValueError(f"right-hand side has {r.shape[0]} rows, factor has {self.n}")
        k = self.kernels or backend.kernels
        X = np.ascontiguousarray(r.reshape(self.n, -1)[self.perm])
        k.chol_solve(self.n, self.Lp, self.Li, self.Lx, X)
        out = np.empty_like(X)
        out[self.perm] = X
        return out.reshape(r.shape)


def cholesky(M, ordering="auto", kernels=None) -> CholeskyFactor:
    """Sparse Cholesky with fill-reducing ordering and ridge fallback.

    A pivot at or below ``1e-12 * max(diag)`` triggers a restart on
    ``M + delta I`` with ``delta = 1e-10 * max(diag)``, doubled up to ten
    times. Nonpositive diagonal entries are rejected immediately.
    """
    k = kernels or backend.kernels
    M = as_csc(M)
    n = M.shape[0]
    if M.shape != (n, n):
        raise ValueError(f"matrix must be square, got {M.shape}")
    if n == 0:
        z = np.zeros(1, dtype=np.int64)
        return CholeskyFactor(0, np.zeros(0, dtype=np.int64), z, np.zeros(0, np.int64),
                              np.zeros(0), kernels=kernels)
    diag = M.diagonal()
    bad = np.flatnonzero(~(diag > 0))
    if bad.size:
        raise NotPositiveDefinite(f"nonpositive diagonal entry at index {bad[0]}", column=int(bad[0]))
    dmax = float(diag.max())
    name, perm, parent, counts, C = choose_ordering(M, ordering, k)
    Lp = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    floor = PIVOT_FLOOR * dmax
    shift, attempts = 0.0, 0
    while True:
        Li, Lx, failed = k.chol_numeric(n, C.indptr, C.indices, C.data, parent, Lp, shift, floor)
        if failed < 0:
            return CholeskyFactor(n, perm, Lp, Li, Lx, shift, attempts, name, kernels)
        if attempts == RIDGE_DOUBLINGS:
            raise NotPositiveDefinite(
                f"pivot {failed} not positive after {attempts} ridge attempts (shift {shift:.3g})",
                column=int(perm[failed]))
        shift = RIDGE_START * dmax if attempts == 0 else 2.0 * shift
        attempts += 1


def solve(F: CholeskyFactor, r):
    return F.solve(r)


# ---------------------------------------------------------------------------
# iterative kernels


def as_operator(op) -> LinearOperator:
    if isinstance(op, LinearOperator):
        return op
    return aslinearoperator(op)


def pcg(op, r, tol=1e-10, maxit=1000, precond="jacobi", x0=None):
    """Preconditioned CG on an SPD operator.

    Stops when ``||op(x) - r|| <= tol * (1 + ||r||)``. Returns
    ``(x, iterations, residual_norm)`` with the best iterate seen.
    ``precond`` is ``"jacobi"`` (used when ``op`` exposes a diagonal),
    ``None``, a ``CholeskyFactor`` or any operator applying ``M^{-1}``.
    """
    A = as_operator(op)
    r = np.asarray(r, dtype=float)
    if isinstance(precond, str):
        if precond != "jacobi":
            raise ValueError(f"unknown preconditioner {precond!r}")
        precond = jacobi(op.diagonal()) if hasattr(op, "diagonal") else None
    if precond is None:
        Minv = lambda v: v  # noqa: E731
    elif isinstance(precond, CholeskyFactor):
        Minv = precond.solve
    else:
        Minv = as_operator(precond).matvec
    x = np.zeros_like(r) if x0 is None else np.array(x0, dtype=float)
    res = r - A.matvec(x) if x0 is not None else r.copy()
    target = tol * (1.0 + np.linalg.norm(r))
    rnorm = np.linalg.norm(res)
    best_x, best_res = x.copy(), rnorm
    if rnorm <= target:
        return x, 0, rnorm
    zvec = Minv(res)
    p = zvec.copy()
    rz = res @ zvec
    it = 0
    while it < maxit:
        it += 1
        Ap = A.matvec(p)
        pAp = p @ Ap
        if pAp <= 0:
            break
        alpha = rz / pAp
        x = x + alpha * p
        res = res - alpha * Ap
        rnorm = np.linalg.norm(res)
        if rnorm < best_res:
            best_x, best_res = x.copy(), rnorm
        if rnorm <= target:
            break
        zvec = Minv(res)
        rz_new = res @ zvec
        p = zvec + (rz_new / rz) * p
        rz = rz_new
    return best_x, it, best_res


def jacobi(diag) -> LinearOperator:
    """Diagonal preconditioner ``v -> v / diag`` (zeros treated as ones)."""
    d = np.where(np.asarray(diag) > 0, diag, 1.0)
    return LinearOperator((d.size, d.size), matvec=lambda v: v / d, dtype=float)


def spectral_norm(op, tol=1e-6, maxit=300, seed=0) -> float:
    """Power-method estimate of ``||op||_2`` times the 1.01 safety factor."""
    A = as_operator(op)
    n = A.shape[1]
    if n == 0 or A.shape[0] == 0:
        return 0.0
    v = np.random.default_rng(seed).standard_normal(n)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(maxit):
        Av = A.matvec(v)
        w = A.rmatvec(Av)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        new = np.sqrt(nw)
        v = w / nw
        if abs(new - est) <= tol * new:
            est = new
            break
        est = new
    return NORM_SAFETY * est
