import os
import subprocess
import sys

import numpy as np
import scipy.sparse as sp

from blockqp import backend
from blockqp.model import as_csc
from blockqp.sparse import cholesky, spmv


def _active(env_value):
    env = dict(os.environ, BLOCKQP_PURE_PYTHON=env_value)
    out = subprocess.run([sys.executable, "-c", "from blockqp import backend; print(backend.NAME)"],
                         env=env, capture_output=True, text=True, check=True)
    return out.stdout.strip()


def test_env_var_forces_python():
    assert _active("1") == "python"


def test_default_prefers_compiled():
    assert _active("") == ("compiled" if "compiled" in backend.BACKENDS else "python")


def test_backends_agree(rng):
    M = as_csc(sp.random(30, 20, density=0.2, random_state=1))
    S = as_csc(M.T @ M + sp.identity(20))
    v, r = rng.standard_normal(20), rng.standard_normal(20)
    outs = [(spmv(M, v, kernels=k), cholesky(S, kernels=k).solve(r)) for k in backend.BACKENDS.values()]
    for a, b in zip(outs, outs[1:]):
        np.testing.assert_allclose(a[0], b[0], rtol=1e-13, atol=1e-14)
        np.testing.assert_allclose(a[1], b[1], rtol=1e-12, atol=1e-13)


def test_get_unknown():
    import pytest
    with pytest.raises(ValueError):
        backend.get("fortran")
