"""Exhaustive active-set oracle for tiny instances.

The problem is flattened to dense form

    min 1/2 x'Qx + c'x + sum_j w_j |x_j|   s.t.  Bx = b,  l <= x <= u

and every variable is assigned a *cell*: either pinned to a breakpoint
(a finite bound, or 0 where the l1 term has its kink) or left free inside
one open interval between consecutive breakpoints, where the objective is
smooth. Each cell is an equality-constrained QP solved with dense least
squares and then checked against the full optimality conditions. Any
verified cell gives a global minimiser because the problem is convex, so
the search stops at the first one. Cells are visited in order of Hamming
distance from a cheap initial guess.

Nothing here touches the solver modules; the check is self-contained.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .model import BlockAngularProblem

MAX_VARS = 24
MAX_CELLS = 2 ** 20
KKT_TOL = 1e-8


class OracleError(RuntimeError):
    pass


@dataclass
class OracleResult:
    x: list
    objective: float
    y0: np.ndarray
    y: list
    s: list
    z: list
    cells_tried: int
    kkt_error: float


def _dense(problem: BlockAngularProblem):
    blocks = problem.blocks
    n = problem.nvars
    off = problem.offsets
    Q = np.zeros((n, n))
    rows = [np.hstack([blk.A.toarray() for blk in blocks])]
    rhs = [problem.b0]
    lo, hi, w = np.empty(n), np.empty(n), np.zeros(n)
    for i, blk in enumerate(blocks):
        sl = slice(off[i], off[i + 1])
        Q[sl, sl] = blk.Q.toarray()
        lo[sl], hi[sl] = blk.cone.bounds()
        if blk.theta.kind == "l1":
            w[sl] = blk.theta.weight
        elif blk.theta.kind != "zero":
            raise OracleError(f"oracle handles zero and l1 terms only (block {i} has {blk.theta.kind})")
        if blk.D is not None:
            r = np.zeros((blk.m, n))
            r[:, sl] = blk.D.toarray()
            rows.append(r)
            rhs.append(blk.b)
    return Q, problem.c_full(), np.vstack(rows), np.concatenate(rhs), lo, hi, w


def _cells(lo, hi, w):
    """Per variable: ``('fix', value)`` and ``('int', a, b, slope)`` cells."""
    out = []
    for l, u, wj in zip(lo, hi, w):
        pts = {p for p in (l, u) if np.isfinite(p)}
        if wj > 0 and l < 0 < u:
            pts.add(0.0)
        pts = sorted(pts)
        edges = [l] + [p for p in pts if l < p < u] + [u]
        cells = []
        for a, b in zip(edges[:-1], edges[1:]):
            if a < b:
                # with an l1 term no interval straddles 0, so the slope is constant
                sgn = 1.0 if a >= 0 else (-1.0 if b <= 0 else 0.0)
                cells.append(("int", a, b, wj * sgn))
        cells += [("fix", p) for p in pts]
        out.append(cells)
    return out


def _subgrad_range(v, l, u, wj):
    """Interval of one-sided derivatives of ``w|t| + indicator_[l,u](t)`` at ``v``."""
    left = -np.inf if v <= l else (wj if v > 0 else -wj)
    right = np.inf if v >= u else (wj if v >= 0 else -wj)
    return left, right


def _solve_cell(choice, cells, Q, c, B, b):
    n = c.size
    free = [j for j in range(n) if cells[j][choice[j]][0] == "int"]
    fixed = [j for j in range(n) if cells[j][choice[j]][0] == "fix"]
    x = np.zeros(n)
    for j in fixed:
        x[j] = cells[j][choice[j]][1]
    slope = np.array([cells[j][choice[j]][3] for j in free])
    F = np.array(free, dtype=int)
    m, k = b.size, F.size
    K = np.zeros((k + m, k + m))
    K[:k, :k] = Q[np.ix_(F, F)]
    K[:k, k:] = -B[:, F].T
    K[k:, :k] = B[:, F]
    r = np.concatenate([-(c[F] + slope + Q[np.ix_(F, fixed)] @ x[fixed]) if k else np.zeros(0),
                        b - B[:, fixed] @ x[fixed]])
    sol = sla.lstsq(K, r, lapack_driver="gelsd")[0]
    x[F] = sol[:k]
    lam = sol[k:]
    return x, lam, Q @ x + c - B.T @ lam


def _violations(choice, cells, x, g, B, b, lo, hi, w, tol):
    """Per-variable violation codes (0 ok, -1 wants left, +1 wants right)
    and the largest stationarity error; codes are ``None`` if Bx != b."""
    if np.abs(B @ x - b).max(initial=0.0) > tol:
        return None, np.inf
    n = x.size
    code = np.zeros(n, dtype=int)
    err = 0.0
    for j in range(n):
        cell = cells[j][choice[j]]
        if cell[0] == "int":
            if x[j] < cell[1] - tol:
                code[j] = -1
            elif x[j] > cell[2] + tol:
                code[j] = 1
            err = max(err, abs(g[j] + cell[3]))
        else:
            # -g must lie in the one-sided derivative range at the breakpoint
            lft, rgt = _subgrad_range(x[j], lo[j], hi[j], w[j])
            v = -g[j]
            if v > rgt + tol:
                code[j] = 1
            elif v < lft - tol:
                code[j] = -1
            err = max(err, lft - v, v - rgt, 0.0)
    return code, err


def _try_cell(choice, cells, Q, c, B, b, lo, hi, w, tol):
    x, lam, g = _solve_cell(choice, cells, Q, c, B, b)
    code, err = _violations(choice, cells, x, g, B, b, lo, hi, w, tol)
    if code is not None and not code.any() and err <= tol:
        return (x, lam, g, err), code
    return None, code


def _repair(choice, cells, code):
    """Move each violating variable to the neighbouring cell in its direction."""
    new = list(choice)
    for j in np.flatnonzero(code):
        cell = cells[j][choice[j]]
        if cell[0] == "int":
            p = cell[1] if code[j] < 0 else cell[2]
            cand = [t for t, cl in enumerate(cells[j]) if cl[0] == "fix" and cl[1] == p]
        else:
            p = cell[1]
            cand = [t for t, cl in enumerate(cells[j])
                    if cl[0] == "int" and (cl[1] == p if code[j] > 0 else cl[2] == p)]
        if cand:
            new[j] = cand[0]
    return new


def oracle_solve(problem: BlockAngularProblem, max_cells=MAX_CELLS, max_vars=MAX_VARS) -> OracleResult:
    """Global minimiser of a tiny problem by verified active-set enumeration.

    Raising ``max_vars``/``max_cells`` lets the active-set repair phase try
    larger instances; the exhaustive phase may then be very slow.
    """
    n = problem.nvars
    if n > max_vars:
        raise OracleError(f"oracle size bound exceeded: {n} variables > {max_vars}")
    Q, c, B, b, lo, hi, w = _dense(problem)
    cells = _cells(lo, hi, w)
    total = int(np.prod([len(cl) for cl in cells], dtype=float))
    if total > max_cells:
        raise OracleError(f"oracle size bound exceeded: {total} cells > {max_cells}")
    scale = 1.0 + max(np.abs(Q).max(initial=0), np.abs(c).max(initial=0), np.abs(B).max(initial=0),
                      np.abs(b).max(initial=0))
    # initial guess: equality-constrained minimiser without bounds or kinks
    m = b.size
    K = np.block([[Q, -B.T], [B, np.zeros((m, m))]])
    guess = sla.lstsq(K, np.concatenate([-c, b]), lapack_driver="gelsd")[0][:n]
    start = []
    for j, cl in enumerate(cells):
        best, bd = 0, np.inf
        for t, cell in enumerate(cl):
            if cell[0] == "fix":
                d = abs(guess[j] - cell[1])
            else:
                d = max(cell[1] - guess[j], guess[j] - cell[2], 0.0)
            if d < bd or (d == bd and cell[0] == "int"):
                best, bd = t, d
        start.append(best)
    tol = KKT_TOL * scale
    tried = 0
    seen = set()
    choice = start
    # primal-dual active-set repair from the guess; usually lands on the answer
    for _ in range(3 * n + 3):
        key = tuple(choice)
        if key in seen:
            break
        seen.add(key)
        tried += 1
        out, code = _try_cell(choice, cells, Q, c, B, b, lo, hi, w, tol)
        if out is not None:
            return _package(problem, out, Q, c, w, tried)
        if code is None:
            break
        choice = _repair(choice, cells, code)
    # exhaustive search, nearest cells to the last guess first
    start = list(choice)
    for dist in range(n + 1):
        for pos in itertools.combinations(range(n), dist):
            alts = [[t for t in range(len(cells[j])) if t != start[j]] for j in pos]
            for pick in itertools.product(*alts):
                choice = list(start)
                for j, t in zip(pos, pick):
                    choice[j] = t
                if tuple(choice) in seen:
                    continue
                tried += 1
                out, _ = _try_cell(choice, cells, Q, c, B, b, lo, hi, w, tol)
                if out is not None:
                    return _package(problem, out, Q, c, w, tried)
    raise OracleError("no KKT-consistent cell found (infeasible or unbounded instance?)")


def _package(problem, out, Q, c, w, tried):
    x, lam, g, err = out
    off = problem.offsets
    # split g = s + z with -s in the l1 subdifferential and -z in the normal cone
    s = np.where(x > 0, -w, np.where(x < 0, w, np.clip(g, -w, w)))
    z = g - s
    obj = float(0.5 * x @ Q @ x + c @ x + w @ np.abs(x))
    seg = lambda v: [v[off[i]:off[i + 1]].copy() for i in range(len(problem.blocks))]  # noqa: E731
    m0 = problem.m0
    y, pos = [np.zeros(0)], m0
    for blk in problem.blocks[1:]:
        y.append(lam[pos:pos + blk.m].copy())
        pos += blk.m
    return OracleResult(seg(x), obj, lam[:m0].copy(), y, seg(s), seg(z), tried, float(err))
