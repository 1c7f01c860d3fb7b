import numpy as np
import pytest
import scipy.sparse as sp

from blockqp import backend
from blockqp.model import Block, BlockAngularProblem, Cone, QuadTerm


@pytest.fixture(params=sorted(backend.BACKENDS))
def kernels(request):
    """Every available kernel backend (compiled and pure Python)."""
    return backend.BACKENDS[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tiny_lp():
    """min x1 + 2 x2 s.t. x1 + x2 = 1, x >= 0 (one block, no local rows).

    Optimum x = (1, 0), y0 = 1, z = (0, 1).
    """
    blk = Block(A=sp.csc_matrix([[1.0, 1.0]]), c=np.array([1.0, 2.0]), cone=Cone.nonneg(2))
    return BlockAngularProblem([blk], np.array([1.0]), name="tiny-lp")


def two_block_qp(seed=0, q=1.0):
    """Two blocks of two variables with one coupling row and one local row."""
    r = np.random.default_rng(seed)
    A0 = sp.csc_matrix(r.standard_normal((1, 2)))
    A1 = sp.csc_matrix(r.standard_normal((1, 2)))
    D1 = sp.csc_matrix([[1.0, 1.0]])
    x0, x1 = r.random(2), r.random(2)
    blocks = [Block(A=A0, c=r.standard_normal(2), cone=Cone.nonneg(2), Q=QuadTerm.diagonal(q * np.ones(2))),
              Block(A=A1, c=r.standard_normal(2), cone=Cone.nonneg(2), Q=QuadTerm.diagonal(q * np.ones(2)),
                    D=D1, b=D1 @ x1)]
    return BlockAngularProblem(blocks, A0 @ x0 + A1 @ x1, name=f"two-block-s{seed}")
