"""Problem data model for block-angular convex composite QPs.

A problem has blocks ``0..N``. Block ``i`` owns variables ``x_i`` with
objective ``theta_i(x_i) + 1/2 <x_i, Q_i x_i> + <c_i, x_i>``, coupling rows
``A_i x_i`` (summed over blocks to equal ``b0``), local rows
``D_i x_i = b_i`` (absent for block 0), and ``x_i`` in a cone ``K_i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp


def as_csc(M, shape=None) -> sp.csc_matrix:
    """Canonical float64 CSC copy with int64 indices (sorted, no duplicates)."""
    M = sp.csc_matrix(M, shape=shape, dtype=float)
    M.sum_duplicates()
    M.sort_indices()
    M.indptr = M.indptr.astype(np.int64)
    M.indices = M.indices.astype(np.int64)
    return M


# ---------------------------------------------------------------------------
# cones


@dataclass(frozen=True, eq=False)
class Cone:
    """``free``, ``nonneg`` or ``box`` (with lower/upper vectors, inf allowed)."""

    kind: str
    dim: int
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    @classmethod
    def free(cls, n):
        return cls("free", int(n))

    @classmethod
    def nonneg(cls, n):
        return cls("nonneg", int(n))

    @classmethod
    def box(cls, lower, upper):
        lower = np.asarray(lower, dtype=float).ravel()
        upper = np.asarray(upper, dtype=float).ravel()
        return cls("box", lower.size, lower, upper)

    def bounds(self):
        """Lower and upper bound vectors (with infinities)."""
        if self.kind == "free":
            return np.full(self.dim, -np.inf), np.full(self.dim, np.inf)
        if self.kind == "nonneg":
            return np.zeros(self.dim), np.full(self.dim, np.inf)
        return self.lower, self.upper


# ---------------------------------------------------------------------------
# separable functions


@dataclass(frozen=True, eq=False)
class SeparableFunction:
    """theta_i: ``zero``, ``l1`` (weight), ``kleinrock`` (cap) or
    ``bpr`` (cap, freeflow, B, beta)."""

    kind: str = "zero"
    weight: float = 0.0
    cap: np.ndarray | None = None
    freeflow: np.ndarray | None = None
    B: float = 0.15
    beta: float = 4.0

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def l1(cls, weight):
        return cls("l1", weight=float(weight))

    @classmethod
    def kleinrock(cls, cap):
        return cls("kleinrock", cap=np.asarray(cap, dtype=float).ravel())

    @classmethod
    def bpr(cls, cap, freeflow, B=0.15, beta=4.0):
        return cls("bpr", cap=np.asarray(cap, dtype=float).ravel(),
                   freeflow=np.asarray(freeflow, dtype=float).ravel(),
                   B=float(B), beta=float(beta))

    @property
    def is_zero(self):
        return self.kind == "zero" or (self.kind == "l1" and self.weight == 0.0)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "zero":
            return 0.0
        if self.kind == "l1":
            return self.weight * float(np.abs(x).sum())
        if self.kind == "kleinrock":
            if np.any(x < 0) or np.any(x >= self.cap):
                return np.inf
            return float(np.sum(x / (self.cap - x)))
        if np.any(x < 0):
            return np.inf
        return float(np.sum(self.freeflow * x * (1.0 + self.B * (x / self.cap) ** self.beta)))

    def conjugate(self, u):
        """theta^*(u), evaluated in closed form (may be +inf)."""
        u = np.asarray(u, dtype=float)
        if self.kind == "zero":
            return 0.0 if not np.any(u) else np.inf
        if self.kind == "l1":
            return 0.0 if np.all(np.abs(u) <= self.weight * (1 + 1e-12) + 1e-14) else np.inf
        if self.kind == "kleinrock":
            # sup_t u t - t/(c-t): maximiser t = c - sqrt(c/u) when u c >= 1
            root = np.sqrt(np.maximum(self.cap * u, 0.0))
            return float(np.sum(np.maximum(root - 1.0, 0.0) ** 2))
        r, c = self.freeflow, self.cap
        coef = self.B * (self.beta + 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = c * np.where(u > r, (u / np.where(r > 0, r, 1.0) - 1.0) / coef, 0.0) ** (1.0 / self.beta)
        t = np.where(r > 0, t, np.where(u > 0, np.inf, 0.0))
        if np.any(np.isinf(t)):
            return np.inf
        return float(np.sum(u * t - r * t * (1.0 + self.B * (t / c) ** self.beta)))


# ---------------------------------------------------------------------------
# quadratic term


@dataclass(frozen=True, eq=False)
class QuadTerm:
    """Q_i stored as ``zero``, ``diag`` (vector) or ``sparse`` (CSC, symmetric)."""

    kind: str
    dim: int
    diag: np.ndarray | None = None
    matrix: sp.csc_matrix | None = None

    @classmethod
    def zero(cls, n):
        return cls("zero", int(n))

    @classmethod
    def diagonal(cls, d):
        d = np.asarray(d, dtype=float).ravel()
        return cls("diag", d.size, diag=d)

    @classmethod
    def sparse(cls, M):
        M = as_csc(M)
        return cls("sparse", M.shape[0], matrix=M)

    @property
    def is_zero(self):
        return self.kind == "zero"

    def __matmul__(self, v):
        v = np.asarray(v, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(v)
        if self.kind == "diag":
            return self.diag * v if v.ndim == 1 else self.diag[:, None] * v
        return self.matrix @ v

    def toarray(self):
        if self.kind == "zero":
            return np.zeros((self.dim, self.dim))
        if self.kind == "diag":
            return np.diag(self.diag)
        return self.matrix.toarray()

    def tocsc(self):
        if self.kind == "zero":
            return as_csc(sp.csc_matrix((self.dim, self.dim)))
        if self.kind == "diag":
            return as_csc(sp.diags(self.diag))
        return self.matrix


# ---------------------------------------------------------------------------
# blocks and problems


@dataclass(frozen=True, eq=False)
class Block:
    A: sp.csc_matrix
    c: np.ndarray
    cone: Cone
    Q: QuadTerm | None = None
    D: sp.csc_matrix | None = None
    b: np.ndarray | None = None
    theta: SeparableFunction = field(default_factory=SeparableFunction.zero)

    def __post_init__(self):
        object.__setattr__(self, "A", as_csc(self.A))
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float).ravel())
        if self.Q is None:
            object.__setattr__(self, "Q", QuadTerm.zero(self.c.size))
        if self.D is not None:
            if not (sp.issparse(self.D) and self.D.format == "csc"
                    and self.D.indices.dtype == np.int64):
                object.__setattr__(self, "D", as_csc(self.D))
            object.__setattr__(self, "b", np.asarray(self.b, dtype=float).ravel())

    @property
    def n(self):
        return self.c.size

    @property
    def m(self):
        return 0 if self.D is None else self.D.shape[0]


@dataclass(frozen=True, eq=False)
class BlockAngularProblem:
    """Blocks ``[B_0, ..., B_N]`` plus the coupling right-hand side ``b0``."""

    blocks: tuple
    b0: np.ndarray
    name: str = "problem"
    seed: int | None = None
    family: str = "custom"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "b0", np.asarray(self.b0, dtype=float).ravel())

    @property
    def N(self):
        return len(self.blocks) - 1

    @property
    def m0(self):
        return self.b0.size

    @property
    def dims(self):
        return [blk.n for blk in self.blocks]

    @property
    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.dims)]).astype(int)

    @property
    def nvars(self):
        return int(sum(self.dims))

    @property
    def ncons(self):
        return self.m0 + sum(blk.m for blk in self.blocks)

    def b_full(self):
        return np.concatenate([self.b0] + [blk.b for blk in self.blocks if blk.D is not None])

    def c_full(self):
        return np.concatenate([blk.c for blk in self.blocks])

    def constraint_matrix(self) -> sp.csc_matrix:
        """The assembled block-angular matrix B (coupling rows first)."""
        rows = [[blk.A for blk in self.blocks]]
        for i, blk in enumerate(self.blocks):
            if blk.D is None:
                continue
            row = [None] * len(self.blocks)
            row[i] = blk.D
            rows.append(row)
        return as_csc(sp.bmat(rows, format="csc"))


# ---------------------------------------------------------------------------
# operations


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def __bool__(self):
        return self.ok

    def raise_if_invalid(self):
        if self.violations:
            raise ValueError("invalid problem: " + "; ".join(self.violations))


def validate(problem: BlockAngularProblem, psd_probes=8, rng_seed=0) -> ValidationReport:
    """Collect every dimensional, PSD and bound violation (block-indexed)."""
    out = []
    m0 = problem.m0
    rng = np.random.default_rng(rng_seed)
    if not problem.blocks:
        out.append("problem has no blocks")
    for i, blk in enumerate(problem.blocks):
        n = blk.n
        if blk.A.shape[0] != m0:
            out.append(f"A_{i} row count {blk.A.shape[0]} ≠ {m0}")
        if blk.A.shape[1] != n:
            out.append(f"A_{i} column count {blk.A.shape[1]} ≠ n_{i}={n}")
        if i == 0 and blk.D is not None:
            out.append("block 0 must not carry local constraints D_0")
        if i > 0 and blk.D is None:
            out.append(f"block {i} has no D_{i}")
        if blk.D is not None:
            if blk.D.shape[1] != n:
                out.append(f"D_{i} column count {blk.D.shape[1]} ≠ n_{i}={n}")
            if blk.b is None or blk.b.size != blk.D.shape[0]:
                out.append(f"b_{i} length does not match D_{i} rows {blk.D.shape[0]}")
        Q = blk.Q
        if Q.dim != n:
            out.append(f"Q_{i} dimension {Q.dim} ≠ n_{i}={n}")
        elif Q.kind == "diag":
            if np.any(Q.diag < 0):
                out.append(f"Q_{i} has negative diagonal entries")
        elif Q.kind == "sparse":
            M = Q.matrix
            if abs(M - M.T).max() if M.nnz else 0.0:
                out.append(f"Q_{i} is not symmetric")
            else:
                for _ in range(psd_probes):
                    v = rng.standard_normal(n)
                    if v @ (M @ v) < -1e-12 * (v @ v):
                        out.append(f"Q_{i} is not positive semidefinite")
                        break
        cone = blk.cone
        if cone.dim != n:
            out.append(f"cone of block {i} has dimension {cone.dim} ≠ n_{i}={n}")
        if cone.kind == "box":
            if cone.lower.size != cone.dim or cone.upper.size != cone.dim:
                out.append(f"box bounds of block {i} have wrong length")
            else:
                crossed = np.flatnonzero(cone.lower > cone.upper)
                if crossed.size:
                    out.append(f"box bounds crossed at index {crossed[0]} (block {i})")
        elif cone.kind not in ("free", "nonneg"):
            out.append(f"unknown cone kind {cone.kind!r} in block {i}")
        th = blk.theta
        if th.kind == "l1" and th.weight < 0:
            out.append(f"theta_{i}: negative l1 weight")
        elif th.kind in ("kleinrock", "bpr"):
            if th.cap is None or th.cap.size != n:
                out.append(f"theta_{i}: capacity vector length ≠ n_{i}={n}")
            elif np.any(th.cap <= 0):
                out.append(f"theta_{i}: capacities must be strictly positive")
            if th.kind == "bpr":
                if th.freeflow is None or th.freeflow.size != n or np.any(th.freeflow < 0):
                    out.append(f"theta_{i}: free-flow times must be nonnegative, length n_{i}")
                if th.beta <= 0 or th.B <= 0:
                    out.append(f"theta_{i}: BPR requires B > 0 and beta > 0")
        elif th.kind not in ("zero", "l1"):
            out.append(f"theta_{i}: unknown kind {th.kind!r}")
        if blk.c.size != n:
            out.append(f"c_{i} length mismatch")
    return ValidationReport(out)


def split_blocks(problem: BlockAngularProblem, flat) -> list:
    """Split a flat vector into per-block segments (views)."""
    flat = np.asarray(flat)
    if flat.shape != (problem.nvars,):
        raise ValueError(f"expected vector of length {problem.nvars}, got shape {flat.shape}")
    off = problem.offsets
    return [flat[off[i]:off[i + 1]] for i in range(len(problem.blocks))]


def concat_blocks(segments: Sequence) -> np.ndarray:
    return np.concatenate([np.asarray(s, dtype=float) for s in segments]) if len(segments) else np.zeros(0)


def zeros_like_blocks(problem):
    return [np.zeros(n) for n in problem.dims]


def objective(problem: BlockAngularProblem, x) -> float:
    """sum_i theta_i(x_i) + 1/2 x_i'Q_i x_i + c_i'x_i (inf outside dom theta)."""
    if len(x) != len(problem.blocks):
        raise ValueError("block vector does not match problem")
    total = 0.0
    for blk, xi in zip(problem.blocks, x):
        xi = np.asarray(xi, dtype=float)
        if xi.size != blk.n:
            raise ValueError("block vector does not match problem")
        th = blk.theta(xi)
        if not np.isfinite(th):
            return np.inf
        total += th + 0.5 * float(xi @ (blk.Q @ xi)) + float(blk.c @ xi)
    return total
