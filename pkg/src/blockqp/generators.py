"""Seeded instance generators: random sparse QPs, tabular adjustment and
multicommodity flow problems.

Every problem is feasible by construction; the witness point is stored in
``problem.metadata["witness"]`` as one flat vector. Randomness comes from
``numpy.random.Generator(PCG64(seed))`` only.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .model import Block, BlockAngularProblem, Cone, QuadTerm, SeparableFunction, as_csc

PRNG = "numpy-pcg64"


def _rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def _sprandn(rng, m, n, density):
    """Gaussian sparse matrix; each entry present independently with ``density``."""
    mask = rng.random((m, n)) < density
    vals = rng.standard_normal((m, n))
    return as_csc(np.where(mask, vals, 0.0))


def _full_row_rank(M):
    M = M.toarray()
    return M.shape[0] == 0 or (np.all(np.any(M != 0, axis=1)) and np.linalg.matrix_rank(M) == M.shape[0])


# ---------------------------------------------------------------------------
# random QPs


def gen_random(m_i, n_i, N, kind="t1", seed=0, m0=None) -> BlockAngularProblem:
    """Random sparse block-angular QP with nonnegative variables.

    ``A_i`` has density 0.5 and ``D_i`` density 0.3 (Gaussian entries).
    ``t1``: ``Q_i = diag(uniform(0, 1))``; ``t2``: ``Q_i = S S^T`` with ``S``
    Gaussian of density 0.1. ``m0`` defaults to ``m_i``.

    Matrices are redrawn until every row is nonzero and the coupling and
    local matrices have full row rank. ``b`` is set to ``B x_feas`` for a
    random ``x_feas >= 0`` and ``c = B^T y_hat + |c_hat|`` so the objective
    is bounded below on the feasible set.
    """
    if kind not in ("t1", "t2"):
        raise ValueError(f"unknown random kind {kind!r}")
    if min(m_i, n_i) < 1 or N < 0:
        raise ValueError("dimensions must be positive")
    m0 = m_i if m0 is None else m0
    rng = _rng(seed)
    while True:
        A = [_sprandn(rng, m0, n_i, 0.5) for _ in range(N + 1)]
        if _full_row_rank(sp.hstack(A)):
            break
    D = [None]
    for _ in range(N):
        while True:
            Di = _sprandn(rng, m_i, n_i, 0.3)
            if _full_row_rank(Di):
                break
        D.append(Di)
    Q = []
    for _ in range(N + 1):
        if kind == "t1":
            Q.append(QuadTerm.diagonal(rng.random(n_i)))
        else:
            S = _sprandn(rng, n_i, n_i, 0.1)
            P = as_csc(S @ S.T)
            Q.append(QuadTerm.sparse(as_csc((P + P.T) * 0.5)))
    xf = [rng.random(n_i) for _ in range(N + 1)]
    y0 = rng.standard_normal(m0)
    yl = [None] + [rng.standard_normal(m_i) for _ in range(N)]
    b0 = sum(A[i] @ xf[i] for i in range(N + 1))
    blocks = []
    for i in range(N + 1):
        c = A[i].T @ y0 + np.abs(rng.standard_normal(n_i))
        if i > 0:
            c = c + D[i].T @ yl[i]
        blocks.append(Block(A=A[i], c=c, cone=Cone.nonneg(n_i), Q=Q[i], D=D[i],
                            b=None if i == 0 else D[i] @ xf[i]))
    name = f"rand-m{m_i}-n{n_i}-N{N}-{kind}-s{seed}"
    return BlockAngularProblem(blocks, b0, name=name, seed=seed, family=f"rand-{kind}",
                               metadata={"prng": PRNG, "witness": np.concatenate(xf)})


# ---------------------------------------------------------------------------
# graphs


@dataclass(frozen=True, eq=False)
class GraphSpec:
    m: int
    tails: np.ndarray
    heads: np.ndarray
    cap: np.ndarray
    freeflow: np.ndarray

    def __post_init__(self):
        for k in ("tails", "heads"):
            object.__setattr__(self, k, np.asarray(getattr(self, k), dtype=np.int64))
        for k in ("cap", "freeflow"):
            object.__setattr__(self, k, np.asarray(getattr(self, k), dtype=float))

    @property
    def n(self):
        return self.tails.size

    def check(self):
        if self.tails.size != self.heads.size or self.cap.size != self.n or self.freeflow.size != self.n:
            raise ValueError("arc arrays have inconsistent lengths")
        if self.n and (self.tails.min() < 0 or self.heads.min() < 0
                       or max(self.tails.max(), self.heads.max()) >= self.m):
            raise ValueError("arc endpoint outside node range")
        if np.any(self.tails == self.heads):
            raise ValueError("self-loop in graph")
        if np.any(self.cap <= 0) or np.any(self.freeflow < 0):
            raise ValueError("capacities must be positive and free-flow times nonnegative")
        adj = sp.coo_matrix((np.ones(self.n), (self.tails, self.heads)), shape=(self.m, self.m))
        ncomp, _ = connected_components(adj, directed=True, connection="weak")
        if ncomp != 1:
            raise ValueError(f"graph is disconnected ({ncomp} components)")


@dataclass(frozen=True)
class Commodity:
    source: int
    sink: int
    demand: float


def incidence(graph: GraphSpec) -> sp.csc_matrix:
    """Node-arc incidence: +1 at the tail, -1 at the head of each arc."""
    n = graph.n
    rows = np.concatenate([graph.tails, graph.heads])
    cols = np.concatenate([np.arange(n), np.arange(n)])
    vals = np.concatenate([np.ones(n), -np.ones(n)])
    return as_csc(sp.coo_matrix((vals, (rows, cols)), shape=(graph.m, n)))


def _bfs_path(graph, out_arcs, s, t):
    prev = {s: -1}
    dq = deque([s])
    while dq:
        u = dq.popleft()
        if u == t:
            break
        for a in out_arcs[u]:
            v = int(graph.heads[a])
            if v not in prev:
                prev[v] = a
                dq.append(v)
    if t not in prev:
        raise ValueError(f"no directed path from node {s} to node {t}")
    path, v = [], t
    while v != s:
        a = prev[v]
        path.append(a)
        v = int(graph.tails[a])
    return path[::-1]


def witness_flows(graph: GraphSpec, commodities) -> list:
    """Route every commodity along a BFS shortest path."""
    out_arcs = [[] for _ in range(graph.m)]
    for a, u in enumerate(graph.tails):
        out_arcs[u].append(a)
    flows = []
    for com in commodities:
        f = np.zeros(graph.n)
        f[_bfs_path(graph, out_arcs, com.source, com.sink)] = com.demand
        flows.append(f)
    return flows


MCF_OBJECTIVES = ("linear", "quad", "kleinrock", "bpr")


def gen_mcf(graph: GraphSpec, commodities, objective="linear", costs=None, B=0.15, beta=4.0,
            name=None, seed=None) -> BlockAngularProblem:
    """Multicommodity flow problem with ``A_0 = I``, ``A_i = -I``.

    ``x_0`` is the total flow; ``x_i`` the flow of commodity ``i``. Linear
    and quadratic objectives charge ``costs`` on commodity flows (quadratic
    adds ``Q_i = 0.1 I`` on every block) with ``0 <= x_0 <= cap``.
    Kleinrock puts ``x/(cap - x)`` on ``x_0`` (same box), BPR puts the
    congestion function on ``x_0 >= 0``; both have ``c = 0``.
    """
    graph.check()
    if objective not in MCF_OBJECTIVES:
        raise ValueError(f"unknown MCF objective {objective!r}")
    if not commodities:
        raise ValueError("need at least one commodity")
    for com in commodities:
        if com.source == com.sink or not (0 <= com.source < graph.m and 0 <= com.sink < graph.m):
            raise ValueError(f"invalid commodity {com}")
        if not com.demand > 0:
            raise ValueError("commodity demands must be positive")
    n = graph.n
    M = incidence(graph)
    flows = witness_flows(graph, commodities)
    total = np.sum(flows, axis=0)
    over = total >= graph.cap if objective == "kleinrock" else total > graph.cap
    if objective != "bpr" and np.any(over):
        raise ValueError(f"shortest-path witness exceeds capacity on arc {np.flatnonzero(over)[0]}")
    I = as_csc(sp.identity(n, format="csc"))
    negI = as_csc(-sp.identity(n, format="csc"))
    costs = np.ones(n) if costs is None else np.asarray(costs, dtype=float)
    nonlinear = objective in ("kleinrock", "bpr")
    Q = QuadTerm.diagonal(np.full(n, 0.1)) if objective == "quad" else None
    if objective == "kleinrock":
        theta0 = SeparableFunction.kleinrock(graph.cap)
    elif objective == "bpr":
        theta0 = SeparableFunction.bpr(graph.cap, graph.freeflow, B, beta)
    else:
        theta0 = SeparableFunction.zero()
    cone0 = Cone.nonneg(n) if objective == "bpr" else Cone.box(np.zeros(n), graph.cap)
    blocks = [Block(A=I, c=np.zeros(n), cone=cone0, Q=Q, theta=theta0)]
    for com in commodities:
        b = np.zeros(graph.m)
        b[com.source] += com.demand
        b[com.sink] -= com.demand
        blocks.append(Block(A=negI, c=np.zeros(n) if nonlinear else costs, cone=Cone.nonneg(n),
                            Q=Q, D=M, b=b))
    name = name or f"mcf-{objective}-m{graph.m}-n{n}-N{len(commodities)}"
    return BlockAngularProblem(blocks, np.zeros(n), name=name, seed=seed, family=f"mcf-{objective}",
                               metadata={"prng": PRNG, "witness": np.concatenate([total] + flows)})


def grid_graph(rows, cols, seed=0, bidirectional=True) -> GraphSpec:
    """``rows x cols`` grid; random capacities in [1, 2) and free-flow in [1, 2)."""
    rng = _rng(seed)
    node = np.arange(rows * cols).reshape(rows, cols)
    pairs = [(node[r, c], node[r, c + 1]) for r in range(rows) for c in range(cols - 1)]
    pairs += [(node[r, c], node[r + 1, c]) for r in range(rows - 1) for c in range(cols)]
    if bidirectional:
        pairs += [(h, t) for t, h in pairs]
    tails, heads = (np.array(v, dtype=np.int64) for v in zip(*pairs))
    n = tails.size
    return GraphSpec(rows * cols, tails, heads, 1.0 + rng.random(n), 1.0 + rng.random(n))


def random_graph(m, extra_arcs, seed=0) -> GraphSpec:
    """Strongly connected random digraph: a bidirected random spanning tree
    plus ``extra_arcs`` random arcs (no self-loops or duplicates)."""
    rng = _rng(seed)
    order = rng.permutation(m)
    pairs = []
    for k in range(1, m):
        u, v = int(order[k]), int(order[rng.integers(k)])
        pairs += [(u, v), (v, u)]
    seen = set(pairs)
    tries = 0
    while len(pairs) < 2 * (m - 1) + extra_arcs and tries < 100 * (extra_arcs + 1):
        tries += 1
        u, v = (int(t) for t in rng.integers(m, size=2))
        if u != v and (u, v) not in seen:
            seen.add((u, v))
            pairs.append((u, v))
    tails, heads = (np.array(v, dtype=np.int64) for v in zip(*pairs))
    n = tails.size
    return GraphSpec(m, tails, heads, 1.0 + rng.random(n), 1.0 + rng.random(n))


def random_commodities(graph: GraphSpec, N, seed=0, demand=(0.5, 1.5)):
    rng = _rng(seed)
    out = []
    for _ in range(N):
        s, t = rng.choice(graph.m, size=2, replace=False)
        out.append(Commodity(int(s), int(t), float(rng.uniform(*demand))))
    return out


def mcf_instance(objective="linear", m=None, extra_arcs=None, grid=None, N=2, seed=0) -> BlockAngularProblem:
    """Graph, commodities, costs and capacities from one seed.

    Capacities are lifted to ``1.25 x`` the shortest-path witness load where
    needed so the instance stays feasible (strictly, for Kleinrock).
    """
    rng = _rng(seed)
    if grid is not None:
        g = grid_graph(grid[0], grid[1], seed=seed)
    else:
        m = 4 if m is None else m
        g = random_graph(m, m if extra_arcs is None else extra_arcs, seed=seed)
    coms = random_commodities(g, N, seed=seed + 1)
    load = np.sum(witness_flows(g, coms), axis=0)
    cap = np.maximum(g.cap, 1.25 * load)
    g = GraphSpec(g.m, g.tails, g.heads, cap, g.freeflow)
    costs = 1.0 + rng.random(g.n)
    shape = f"g{grid[0]}x{grid[1]}" if grid is not None else f"m{g.m}"
    return gen_mcf(g, coms, objective, costs=costs, seed=seed,
                   name=f"mcf-{objective}-{shape}-n{g.n}-N{N}-s{seed}")


# ---------------------------------------------------------------------------
# controlled tabular adjustment


def table_incidence(rows, cols) -> sp.csc_matrix:
    """Cell ``(r, c)`` is an arc from row node ``r`` to column node ``rows + c``."""
    r, c = np.divmod(np.arange(rows * cols), cols)
    g = GraphSpec(rows + cols, r, rows + c, np.ones(rows * cols), np.zeros(rows * cols))
    return incidence(g)


def gen_cta(rows, cols, N, seed=0) -> BlockAngularProblem:
    """Tabular adjustment: ``N`` layers of a ``rows x cols`` table.

    Layer ``i`` keeps its row and column sums (``D_i x_i = b_i``), block 0 is
    the layer total (``x_0 = sum_i x_i``), every block minimises
    ``1/2 ||x_i - a_i||^2`` with ``a_i`` a perturbed copy of a hidden table
    and all cells nonnegative.
    """
    if min(rows, cols) < 1 or N < 1:
        raise ValueError("rows, cols and N must be positive")
    rng = _rng(seed)
    n = rows * cols
    M = table_incidence(rows, cols)
    tables = [rng.uniform(1.0, 10.0, n) for _ in range(N)]
    total = np.sum(tables, axis=0)
    I = as_csc(sp.identity(n, format="csc"))
    negI = as_csc(-sp.identity(n, format="csc"))
    Q = QuadTerm.diagonal(np.ones(n))

    def target(t):
        return t * (1.0 + 0.2 * rng.standard_normal(n))

    blocks = [Block(A=I, c=-target(total), cone=Cone.nonneg(n), Q=Q)]
    for t in tables:
        blocks.append(Block(A=negI, c=-target(t), cone=Cone.nonneg(n), Q=Q, D=M, b=M @ t))
    return BlockAngularProblem(blocks, np.zeros(n), name=f"cta-{rows}x{cols}-N{N}-s{seed}", seed=seed,
                               family="cta", metadata={"prng": PRNG,
                                                       "witness": np.concatenate([total] + tables)})


# ---------------------------------------------------------------------------
# dispatch


FAMILIES = ("rand-t1", "rand-t2", "cta", "mcf-linear", "mcf-quad", "mcf-kleinrock", "mcf-bpr")


def generate(family, seed=0, **kw) -> BlockAngularProblem:
    """Build an instance of ``family`` from keyword parameters.

    rand-t1/rand-t2: ``mi, ni, N`` (and optional ``m0``); cta: ``rows,
    cols, N``; mcf-*: ``N`` plus either ``grid=(r, c)`` or ``nodes`` and
    ``extra_arcs``.
    """
    if family in ("rand-t1", "rand-t2"):
        return gen_random(kw.get("mi", 4), kw.get("ni", 6), kw.get("N", 2), family[5:], seed, kw.get("m0"))
    if family == "cta":
        return gen_cta(kw.get("rows", 2), kw.get("cols", 3), kw.get("N", 2), seed)
    if family.startswith("mcf-"):
        return mcf_instance(family[4:], m=kw.get("nodes"), extra_arcs=kw.get("extra_arcs"),
                            grid=kw.get("grid"), N=kw.get("N", 2), seed=seed)
    raise ValueError(f"unknown family {family!r}; choose from {', '.join(FAMILIES)}")


def witness_residual(problem: BlockAngularProblem) -> float:
    """``||B w - b||`` for the stored witness ``w``."""
    w = problem.metadata["witness"]
    return float(np.linalg.norm(problem.constraint_matrix() @ w - problem.b_full()))


DESK_FAMILIES = ("rand-t1", "rand-t2", "cta", "mcf-linear", "mcf-quad")


def desk_suite(seeds=range(6)) -> list:
    """Thirty tiny instances (16 variables each) small enough for the
    enumeration oracle: five families times six seeds."""
    out = []
    for s in seeds:
        out.append(gen_random(2, 4, 3, "t1", seed=s, m0=2))
        out.append(gen_random(2, 4, 3, "t2", seed=s, m0=2))
        out.append(gen_cta(2, 2, 3, seed=s))
        out.append(mcf_instance("linear", m=3, extra_arcs=0, N=3, seed=s))
        out.append(mcf_instance("quad", m=3, extra_arcs=0, N=3, seed=s))
    return out
