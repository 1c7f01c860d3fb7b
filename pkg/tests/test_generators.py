import numpy as np
import pytest

from blockqp.generators import (FAMILIES, Commodity, GraphSpec, desk_suite, gen_cta, gen_mcf, gen_random,
                                generate, grid_graph, incidence, mcf_instance, witness_residual)
from blockqp.io import dumps
from blockqp.model import validate
from blockqp.oracle import oracle_solve
from blockqp.sgs_admm import SgsAdmmParams, solve
from blockqp.sparse import form_normal


def _arc(cap=2.0):
    return GraphSpec(2, [0], [1], [cap], [1.0])


def test_incidence_single_arc():
    assert incidence(_arc()).toarray().ravel().tolist() == [1.0, -1.0]


def test_incidence_columns_sum_to_zero():
    M = incidence(grid_graph(3, 4, seed=1))
    assert np.all(M.sum(axis=0) == 0) and np.all(np.diff(M.indptr) == 2)


def test_path_laplacian():
    M = incidence(GraphSpec(3, [0, 1], [1, 2], [1, 1], [0, 0]))
    assert np.array_equal(form_normal(M).toarray(), M.toarray() @ M.toarray().T)


def test_disconnected_graph_rejected():
    g = GraphSpec(4, [0, 2], [1, 3], [1, 1], [0, 0])
    with pytest.raises(ValueError, match="disconnected"):
        gen_mcf(g, [Commodity(0, 1, 1.0)])


def test_mcf_linear_tiny():
    p = gen_mcf(_arc(), [Commodity(0, 1, 1.0)], "linear", costs=np.array([1.0]))
    o = oracle_solve(p)
    assert o.objective == pytest.approx(1.0, abs=1e-12)
    assert o.x[1][0] == pytest.approx(1.0, abs=1e-12)


def test_mcf_kleinrock_tiny():
    p = gen_mcf(_arc(), [Commodity(0, 1, 1.0)], "kleinrock")
    it, rep = solve(p, SgsAdmmParams(tol=1e-8))
    assert rep.converged
    assert rep.objective == pytest.approx(1.0, abs=1e-6)
    assert it.x[1][0] == pytest.approx(1.0, abs=1e-6)


def test_mcf_quad_diagonal():
    p = mcf_instance("quad", m=5, N=3, seed=0)
    assert all(blk.Q.kind == "diag" and np.all(blk.Q.diag == 0.1) for blk in p.blocks)


def test_mcf_structure():
    p = mcf_instance("bpr", grid=(3, 3), N=4, seed=2)
    assert p.N == 4 and p.blocks[0].cone.kind == "nonneg"
    assert all(blk.D is p.blocks[1].D for blk in p.blocks[1:])
    assert all(np.all(blk.c == 0) for blk in p.blocks)
    assert all(abs(blk.b.sum()) <= 1e-15 for blk in p.blocks[1:])
    assert np.array_equal(p.blocks[0].A.toarray(), np.eye(p.dims[0]))
    assert np.array_equal(p.blocks[1].A.toarray(), -np.eye(p.dims[0]))


def test_random_t1_t2():
    p1 = gen_random(3, 5, 2, "t1", seed=0)
    assert all(blk.Q.kind == "diag" for blk in p1.blocks)
    p2 = gen_random(3, 6, 2, "t2", seed=0)
    r = np.random.default_rng(0)
    for blk in p2.blocks:
        Q = blk.Q.toarray()
        for _ in range(20):
            v = r.standard_normal(6)
            assert v @ Q @ v >= -1e-10 * (v @ v)


def test_cta_structure():
    p = gen_cta(2, 2, 3, seed=0)
    D = p.blocks[1].D
    assert D.shape == (4, 4) and np.all(np.diff(D.indptr) == 2)
    assert all(blk.Q.kind == "diag" and np.all(blk.Q.diag == 1.0) for blk in p.blocks)


@pytest.mark.parametrize("family", FAMILIES)
def test_generated_problems_valid_feasible_deterministic(family):
    kw = {"N": 3}
    p = generate(family, seed=11, **kw)
    assert validate(p).ok
    assert witness_residual(p) <= 1e-10
    assert dumps(p) == dumps(generate(family, seed=11, **kw))
    assert dumps(p) != dumps(generate(family, seed=12, **kw))
    w = p.metadata["witness"]
    lo = np.concatenate([blk.cone.bounds()[0] for blk in p.blocks])
    hi = np.concatenate([blk.cone.bounds()[1] for blk in p.blocks])
    assert np.all((w >= lo) & (w <= hi))


def test_unknown_family():
    with pytest.raises(ValueError):
        generate("mcf-cubic")


def test_desk_suite_shape():
    suite = desk_suite()
    assert len(suite) == 30 and all(p.nvars <= 20 for p in suite)
    assert len({p.name for p in suite}) == 30
