import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from blockqp.generators import desk_suite, gen_random
from blockqp.model import (Block, BlockAngularProblem, Cone, QuadTerm, SeparableFunction, concat_blocks,
                           objective, split_blocks, validate)


def _small(m0=2, m1=1, n=3):
    A0 = sp.csc_matrix(np.ones((m0, n)))
    A1 = sp.csc_matrix(np.eye(m0, n))
    D1 = sp.csc_matrix(np.ones((m1, n)))
    blocks = [Block(A=A0, c=np.zeros(n), cone=Cone.nonneg(n)),
              Block(A=A1, c=np.zeros(n), cone=Cone.nonneg(n), D=D1, b=np.ones(m1))]
    return BlockAngularProblem(blocks, np.ones(m0))


def test_validate_consistent():
    assert validate(_small()).violations == []


def test_validate_row_mismatch():
    p = _small()
    bad = Block(A=sp.csc_matrix(np.ones((3, 3))), c=np.zeros(3), cone=Cone.nonneg(3),
                D=p.blocks[1].D, b=p.blocks[1].b)
    rep = validate(BlockAngularProblem([p.blocks[0], bad], p.b0))
    assert "A_1 row count 3 ≠ 2" in rep.violations


def test_validate_crossed_box():
    blk = Block(A=sp.csc_matrix((0, 1)), c=np.zeros(1), cone=Cone.box([1.0], [0.0]))
    rep = validate(BlockAngularProblem([blk], np.zeros(0)))
    assert any("box bounds crossed at index 0" in v for v in rep.violations)


def test_validate_reports_indefinite_q():
    blk = Block(A=sp.csc_matrix((0, 2)), c=np.zeros(2), cone=Cone.free(2),
                Q=QuadTerm.sparse(sp.csc_matrix([[0.0, 1.0], [1.0, 0.0]])))
    rep = validate(BlockAngularProblem([blk], np.zeros(0)))
    assert any("positive semidefinite" in v for v in rep.violations)


def test_validate_pure():
    p = gen_random(3, 4, 2, "t2", seed=3)
    assert validate(p).violations == validate(p).violations


def test_split_example():
    blk0 = Block(A=sp.csc_matrix((1, 2)), c=np.zeros(2), cone=Cone.free(2))
    blk1 = Block(A=sp.csc_matrix((1, 1)), c=np.zeros(1), cone=Cone.free(1), D=sp.csc_matrix((0, 1)), b=[])
    p = BlockAngularProblem([blk0, blk1], np.zeros(1))
    segs = split_blocks(p, np.array([1.0, 2.0, 3.0]))
    assert [s.tolist() for s in segs] == [[1.0, 2.0], [3.0]]
    with pytest.raises(ValueError):
        split_blocks(p, np.zeros(4))


def test_split_empty_block():
    blk0 = Block(A=sp.csc_matrix((1, 2)), c=np.zeros(2), cone=Cone.free(2))
    blk1 = Block(A=sp.csc_matrix((1, 0)), c=np.zeros(0), cone=Cone.free(0), D=sp.csc_matrix((0, 0)), b=[])
    p = BlockAngularProblem([blk0, blk1], np.zeros(1))
    segs = split_blocks(p, np.array([1.0, 2.0]))
    assert segs[1].size == 0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=1, max_size=5), st.integers(0, 2**31))
def test_split_concat_roundtrip(dims, seed):
    blocks = [Block(A=sp.csc_matrix((1, n)), c=np.zeros(n), cone=Cone.free(n),
                    D=None if i == 0 else sp.csc_matrix((0, n)), b=None if i == 0 else [])
              for i, n in enumerate(dims)]
    p = BlockAngularProblem(blocks, np.zeros(1))
    v = np.random.default_rng(seed).standard_normal(sum(dims))
    out = concat_blocks(split_blocks(p, v))
    assert out.tobytes() == v.tobytes()


def _one(theta, Q=None, n=1):
    blk = Block(A=sp.csc_matrix((0, n)), c=np.zeros(n), cone=Cone.free(n), Q=Q, theta=theta)
    return BlockAngularProblem([blk], np.zeros(0))


def test_objective_examples():
    p = _one(SeparableFunction.zero(), QuadTerm.diagonal(np.ones(2)), n=2)
    assert objective(p, [np.array([1.0, 1.0])]) == 1.0
    k = _one(SeparableFunction.kleinrock([2.0]))
    assert objective(k, [np.array([1.0])]) == pytest.approx(1.0, abs=1e-15)
    assert objective(k, [np.array([2.0])]) == np.inf


def test_objective_convex_along_segments():
    rng = np.random.default_rng(0)
    for p in desk_suite(seeds=[0, 1]):
        for _ in range(5):
            a = [rng.random(n) for n in p.dims]
            b = [rng.random(n) for n in p.dims]
            mid = [(u + v) / 2 for u, v in zip(a, b)]
            assert objective(p, mid) <= (objective(p, a) + objective(p, b)) / 2 + 1e-10


def test_conjugate_matches_numeric_sup():
    # theta^*(u) = sup_t u t - theta(t) on a fine grid
    grid = np.linspace(0, 3.9999, 400001)
    th = SeparableFunction.kleinrock([4.0])
    for u in (0.1, 0.5, 2.0):
        vals = u * grid - grid / (4.0 - grid)
        assert th.conjugate(np.array([u])) == pytest.approx(vals.max(), abs=1e-6)
    th = SeparableFunction.bpr([2.0], [1.0], B=0.15, beta=4.0)
    grid = np.linspace(0, 10, 400001)
    for u in (0.5, 1.5, 3.0):
        vals = u * grid - grid * (1 + 0.15 * (grid / 2.0) ** 4)
        assert th.conjugate(np.array([u])) == pytest.approx(max(vals.max(), 0.0), abs=1e-6)
