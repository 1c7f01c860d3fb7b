import numpy as np
import pytest

from blockqp.generators import gen_random, mcf_instance
from blockqp.io import ParseError, dumps, loads, read_problem, write_problem
from blockqp.model import Cone
from blockqp.oracle import OracleError, oracle_solve
from blockqp.sgs_admm import SgsAdmmParams, solve

HAND_LP = """BAP 1
name hand-lp
family custom
seed none
prng none
N 0
m0 1
vector b0 1
4
block 0 3
matrix A 1 3 3
1 1 1
1 2 1
1 3 1
vector c 3
3
1
2
quad zero
cone box
vector lower 3
0
0
0
vector upper 3
inf
3
inf
theta zero
end block
end
"""


def _same(p, q):
    assert p.name == q.name and p.N == q.N and p.b0.tobytes() == q.b0.tobytes()
    for a, b in zip(p.blocks, q.blocks):
        for M, K in ((a.A, b.A), (a.D, b.D)):
            if M is None:
                assert K is None
                continue
            assert (M != K).nnz == 0 and M.data.tobytes() == K.data.tobytes()
        assert a.c.tobytes() == b.c.tobytes()
        assert np.array_equal(a.Q.toarray(), b.Q.toarray())
        assert a.cone.kind == b.cone.kind and a.theta.kind == b.theta.kind


def test_roundtrip_random(tmp_path):
    p = gen_random(4, 6, 2, "t1", seed=1)
    path = tmp_path / "p.bap"
    write_problem(p, path)
    q = read_problem(path)
    _same(p, q)
    assert dumps(q) == dumps(p)


@pytest.mark.parametrize("obj", ["linear", "quad", "kleinrock", "bpr"])
def test_roundtrip_mcf_keeps_sharing(obj):
    p = mcf_instance(obj, m=5, N=3, seed=4)
    q = loads(dumps(p))
    _same(p, q)
    assert all(blk.D is q.blocks[1].D for blk in q.blocks[1:])
    assert dumps(q) == dumps(p)


def test_truncated_file_names_section():
    text = dumps(gen_random(2, 3, 1, "t1", seed=0))
    cut = text[: text.index("vector c", text.index("block 1"))]
    with pytest.raises(ParseError, match="block 1"):
        loads(cut)


def test_bad_version():
    with pytest.raises(ParseError, match="version"):
        loads(HAND_LP.replace("BAP 1", "BAP 7"))


def test_bad_number_has_line():
    bad = HAND_LP.replace("\n3\n1\n2\n", "\n3\nx\n2\n")
    with pytest.raises(ParseError) as exc:
        loads(bad)
    assert exc.value.line == 17


def test_hand_written_lp():
    p = loads(HAND_LP)
    assert p.blocks[0].cone.kind == "box" and np.isinf(p.blocks[0].cone.upper[0])
    o = oracle_solve(p)
    assert o.objective == pytest.approx(5.0) and np.allclose(o.x[0], [0, 3, 1])
    _, rep = solve(p, SgsAdmmParams(tol=1e-8))
    assert rep.converged and rep.objective == pytest.approx(5.0, abs=1e-6)


def test_oracle_calculus():
    import scipy.sparse as sp

    from blockqp.model import Block, BlockAngularProblem, QuadTerm
    blk = Block(A=sp.csc_matrix((0, 1)), c=np.array([-1.0]), cone=Cone.nonneg(1), Q=QuadTerm.diagonal([1.0]))
    o = oracle_solve(BlockAngularProblem([blk], np.zeros(0)))
    assert o.x[0][0] == pytest.approx(1.0) and o.objective == pytest.approx(-0.5)
    blk = Block(A=sp.csc_matrix((0, 1)), c=np.array([1.0]), cone=Cone.nonneg(1))
    o = oracle_solve(BlockAngularProblem([blk], np.zeros(0)))
    assert o.x[0][0] == 0.0 and o.z[0][0] == pytest.approx(1.0)


def test_oracle_size_bound():
    with pytest.raises(OracleError, match="size bound"):
        oracle_solve(gen_random(5, 5, 4, "t1", seed=0))


def test_oracle_two_blocks_vs_sgs():
    p = gen_random(1, 2, 1, "t1", seed=3)
    o = oracle_solve(p)
    _, rep = solve(p, SgsAdmmParams(tol=1e-8))
    assert abs(rep.objective - o.objective) <= 1e-5 * max(1, abs(o.objective))


def test_oracle_rejects_nonlinear_theta():
    with pytest.raises(OracleError):
        oracle_solve(mcf_instance("kleinrock", m=3, extra_arcs=0, N=1, seed=0))
