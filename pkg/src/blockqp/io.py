"""Versioned text format for block-angular problems (``BAP 1``).

Floats are written with 17 significant digits so a write/read round trip is
bit-exact; matrices are 1-based coordinate triplets. A matrix or quadratic
term stored by an earlier block can be referenced instead of repeated
(``ref <block>``), which keeps shared incidence matrices shared after
reading. See ``docs/file_format.md`` for the grammar and an example.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .model import Block, BlockAngularProblem, Cone, QuadTerm, SeparableFunction, as_csc

VERSION = 1
MAGIC = "BAP"


class ParseError(ValueError):
    def __init__(self, msg, line=None):
        super().__init__(f"line {line}: {msg}" if line is not None else msg)
        self.line = line


def _f(v):
    return "%.17g" % v


# ---------------------------------------------------------------------------
# writing


def _vector(out, label, v):
    v = np.asarray(v, dtype=float)
    out.append(f"vector {label} {v.size}")
    out.extend(_f(t) for t in v)


def _matrix(out, label, M, seen, i):
    key = id(M)
    if key in seen:
        out.append(f"matrix {label} ref {seen[key]}")
        return
    seen[key] = i
    C = sp.coo_matrix(as_csc(M))
    order = np.lexsort((C.row, C.col))
    out.append(f"matrix {label} {M.shape[0]} {M.shape[1]} {C.nnz}")
    out.extend(f"{r + 1} {c + 1} {_f(v)}" for r, c, v in zip(C.row[order], C.col[order], C.data[order]))


def dumps(problem: BlockAngularProblem) -> str:
    out = [f"{MAGIC} {VERSION}", f"name {problem.name}", f"family {problem.family}",
           f"seed {problem.seed if problem.seed is not None else 'none'}",
           f"prng {problem.metadata.get('prng', 'none')}", f"N {problem.N}", f"m0 {problem.m0}"]
    _vector(out, "b0", problem.b0)
    seen, qseen = {}, {}
    for i, blk in enumerate(problem.blocks):
        out.append(f"block {i} {blk.n}")
        _matrix(out, "A", blk.A, seen, i)
        _vector(out, "c", blk.c)
        Q = blk.Q
        if id(Q) in qseen:
            out.append(f"quad ref {qseen[id(Q)]}")
        else:
            qseen[id(Q)] = i
            if Q.kind == "zero":
                out.append("quad zero")
            elif Q.kind == "diag":
                out.append("quad diag")
                _vector(out, "diag", Q.diag)
            else:
                out.append("quad matrix")
                _matrix(out, "Q", Q.matrix, {}, i)
        cone = blk.cone
        out.append(f"cone {cone.kind}")
        if cone.kind == "box":
            _vector(out, "lower", cone.lower)
            _vector(out, "upper", cone.upper)
        th = blk.theta
        if th.kind == "zero":
            out.append("theta zero")
        elif th.kind == "l1":
            out.append(f"theta l1 {_f(th.weight)}")
        elif th.kind == "kleinrock":
            out.append("theta kleinrock")
            _vector(out, "cap", th.cap)
        else:
            out.append(f"theta bpr {_f(th.B)} {_f(th.beta)}")
            _vector(out, "cap", th.cap)
            _vector(out, "freeflow", th.freeflow)
        if blk.D is not None:
            _matrix(out, "D", blk.D, seen, i)
            _vector(out, "b", blk.b)
        out.append("end block")
    w = problem.metadata.get("witness")
    if w is not None:
        _vector(out, "witness", w)
    out.append("end")
    return "\n".join(out) + "\n"


def write_problem(problem: BlockAngularProblem, path):
    with open(path, "w", newline="\n") as fh:
        fh.write(dumps(problem))


# ---------------------------------------------------------------------------
# reading


class _Lines:
    def __init__(self, text):
        self.lines = text.splitlines()
        self.pos = 0
        self.section = "header"

    @property
    def lineno(self):
        return self.pos

    def next(self):
        while self.pos < len(self.lines):
            s = self.lines[self.pos].strip()
            self.pos += 1
            if s and not s.startswith("#"):
                return s
        raise ParseError(f"unexpected end of file in section '{self.section}'", self.pos)

    def expect(self, key, nargs=None):
        s = self.next()
        tok = s.split()
        if tok[0] != key:
            raise ParseError(f"expected '{key}', found '{tok[0]}' in section '{self.section}'", self.pos)
        if nargs is not None and len(tok) - 1 != nargs:
            raise ParseError(f"'{key}' takes {nargs} argument(s), got {len(tok) - 1}", self.pos)
        return tok[1:]

    def error(self, msg):
        return ParseError(f"{msg} in section '{self.section}'", self.pos)


def _num(tok, lines):
    try:
        return float(tok)
    except ValueError:
        raise lines.error(f"bad number {tok!r}") from None


def _int(tok, lines):
    try:
        return int(tok)
    except ValueError:
        raise lines.error(f"bad integer {tok!r}") from None


def _read_vector(lines, label):
    args = lines.expect("vector", 2)
    if args[0] != label:
        raise lines.error(f"expected vector '{label}', found '{args[0]}'")
    n = _int(args[1], lines)
    sec = lines.section
    lines.section = f"{sec} vector {label}"
    v = np.array([_num(lines.next(), lines) for _ in range(n)], dtype=float)
    lines.section = sec
    return v


def _read_matrix(lines, label, store, cache_key=None):
    args = lines.expect("matrix")
    if not args or args[0] != label:
        raise lines.error(f"expected matrix '{label}'")
    if len(args) == 3 and args[1] == "ref":
        ref = _int(args[2], lines)
        if (ref, label) not in store:
            raise lines.error(f"reference to unknown matrix {label} of block {ref}")
        return store[(ref, label)]
    if len(args) != 4:
        raise lines.error(f"matrix header needs rows, cols, nnz")
    m, n, nnz = (_int(a, lines) for a in args[1:])
    sec = lines.section
    lines.section = f"{sec} matrix {label}"
    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz)
    for k in range(nnz):
        tok = lines.next().split()
        if len(tok) != 3:
            raise lines.error("triplet must have 3 fields")
        rows[k], cols[k], vals[k] = _int(tok[0], lines) - 1, _int(tok[1], lines) - 1, _num(tok[2], lines)
        if not (0 <= rows[k] < m and 0 <= cols[k] < n):
            raise lines.error(f"index ({rows[k] + 1}, {cols[k] + 1}) outside {m}x{n}")
    lines.section = sec
    M = as_csc(sp.coo_matrix((vals, (rows, cols)), shape=(m, n)))
    if cache_key is not None:
        store[cache_key] = M
    return M


def loads(text: str) -> BlockAngularProblem:
    lines = _Lines(text)
    head = lines.next().split()
    if len(head) != 2 or head[0] != MAGIC:
        raise ParseError(f"not a {MAGIC} file", lines.lineno)
    if head[1] != str(VERSION):
        raise ParseError(f"unsupported version {head[1]} (expected {VERSION})", lines.lineno)
    name = " ".join(lines.expect("name"))
    family = " ".join(lines.expect("family"))
    seed_tok = lines.expect("seed", 1)[0]
    seed = None if seed_tok == "none" else _int(seed_tok, lines)
    prng = lines.expect("prng", 1)[0]
    N = _int(lines.expect("N", 1)[0], lines)
    m0 = _int(lines.expect("m0", 1)[0], lines)
    b0 = _read_vector(lines, "b0")
    if b0.size != m0:
        raise lines.error(f"b0 has length {b0.size}, expected {m0}")
    store, quads, blocks = {}, {}, []
    for i in range(N + 1):
        lines.section = "header"
        args = lines.expect("block", 2)
        if _int(args[0], lines) != i:
            raise lines.error(f"expected block {i}")
        lines.section = f"block {i}"
        A = _read_matrix(lines, "A", store, (i, "A"))
        c = _read_vector(lines, "c")
        qa = lines.expect("quad")
        if qa == ["zero"]:
            Q = QuadTerm.zero(c.size)
        elif qa == ["diag"]:
            Q = QuadTerm.diagonal(_read_vector(lines, "diag"))
        elif qa == ["matrix"]:
            Q = QuadTerm.sparse(_read_matrix(lines, "Q", {}))
        elif len(qa) == 2 and qa[0] == "ref":
            Q = quads.get(_int(qa[1], lines))
            if Q is None:
                raise lines.error("reference to unknown quad term")
        else:
            raise lines.error(f"bad quad descriptor {' '.join(qa)!r}")
        quads.setdefault(i, Q)
        kind = lines.expect("cone", 1)[0]
        if kind == "free":
            cone = Cone.free(c.size)
        elif kind == "nonneg":
            cone = Cone.nonneg(c.size)
        elif kind == "box":
            cone = Cone.box(_read_vector(lines, "lower"), _read_vector(lines, "upper"))
        else:
            raise lines.error(f"unknown cone kind {kind!r}")
        ta = lines.expect("theta")
        if ta == ["zero"]:
            theta = SeparableFunction.zero()
        elif len(ta) == 2 and ta[0] == "l1":
            theta = SeparableFunction.l1(_num(ta[1], lines))
        elif ta == ["kleinrock"]:
            theta = SeparableFunction.kleinrock(_read_vector(lines, "cap"))
        elif len(ta) == 3 and ta[0] == "bpr":
            cap = _read_vector(lines, "cap")
            theta = SeparableFunction.bpr(cap, _read_vector(lines, "freeflow"),
                                          _num(ta[1], lines), _num(ta[2], lines))
        else:
            raise lines.error(f"bad theta descriptor {' '.join(ta)!r}")
        D = b = None
        s = lines.next()
        if s.startswith("matrix"):
            lines.pos -= 1
            D = _read_matrix(lines, "D", store, (i, "D"))
            b = _read_vector(lines, "b")
            s = lines.next()
        if s != "end block":
            raise lines.error(f"expected 'end block', found {s!r}")
        blocks.append(Block(A=A, c=c, cone=cone, Q=Q, D=D, b=b, theta=theta))
    lines.section = "trailer"
    meta = {"prng": prng}
    s = lines.next()
    if s.startswith("vector witness"):
        lines.pos -= 1
        meta["witness"] = _read_vector(lines, "witness")
        s = lines.next()
    if s != "end":
        raise lines.error(f"expected 'end', found {s!r}")
    return BlockAngularProblem(blocks, b0, name=name, seed=seed, family=family, metadata=meta)


def read_problem(path) -> BlockAngularProblem:
    with open(path) as fh:
        return loads(fh.read())
