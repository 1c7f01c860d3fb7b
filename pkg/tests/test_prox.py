import numpy as np
import pytest
from _oracles import bpr_prox_golden, kleinrock_prox_bisect, moreau_grid
from hypothesis import given, settings
from hypothesis import strategies as st

from blockqp.model import Cone, SeparableFunction
from blockqp.prox import moreau_cone_step, moreau_theta_step, project_cone, prox_theta

finite = st.floats(-50, 50, allow_nan=False)


def test_project_examples():
    assert project_cone(Cone.nonneg(2), [-1.0, 2.0]).tolist() == [0.0, 2.0]
    assert project_cone(Cone.box([0, 0], [1, 1]), [2.0, -3.0]).tolist() == [1.0, 0.0]
    v = np.array([3.0, -7.5])
    assert project_cone(Cone.free(2), v).tolist() == v.tolist()


def test_project_infinite_box():
    box = Cone.box([-np.inf, 0.0], [1.0, np.inf])
    assert project_cone(box, [-5.0, 9.0]).tolist() == [-5.0, 9.0]
    assert project_cone(box, [5.0, -9.0]).tolist() == [1.0, 0.0]


@settings(max_examples=100, deadline=None)
@given(st.lists(finite, min_size=3, max_size=3), st.lists(finite, min_size=3, max_size=3))
def test_projection_properties(a, b):
    a, b = np.array(a), np.array(b)
    for cone in (Cone.free(3), Cone.nonneg(3), Cone.box([-1, 0, 2], [1, 0.5, 3])):
        pa, pb = project_cone(cone, a), project_cone(cone, b)
        assert np.array_equal(project_cone(cone, pa), pa)
        d = pa - pb
        assert d @ d <= d @ (a - b) + 1e-12


def test_prox_examples(kernels):
    r = prox_theta(SeparableFunction.zero(), 1.0, np.array([5.0, -1.0]), kernels=kernels)
    assert r.point.tolist() == [5.0, -1.0] and r.newton_iterations == 0
    assert prox_theta(SeparableFunction.l1(1.0), 2.0, np.array([3.0])).point.tolist() == [1.0]
    with pytest.raises(ValueError):
        prox_theta(SeparableFunction.zero(), 0.0, np.ones(1))


def test_kleinrock_example(kernels):
    t = prox_theta(SeparableFunction.kleinrock([1.0]), 1.0, np.array([0.9]), kernels=kernels).point[0]
    assert abs(t - kleinrock_prox_bisect(0.9, 1.0, 1.0)) <= 1e-10


def test_bpr_example(kernels):
    th = SeparableFunction.bpr([1.0], [1.0], B=0.15, beta=4.0)
    t = prox_theta(th, 1.0, np.array([2.0]), kernels=kernels).point[0]
    assert abs(t - bpr_prox_golden(2.0, 1.0, 1.0, 0.15, 4.0, 1.0)) <= 1e-8


def test_kleinrock_clamp_rule(kernels):
    # t* = 0 exactly when v <= sigma / c
    th = SeparableFunction.kleinrock([2.0, 2.0])
    out = prox_theta(th, 1.0, np.array([0.5, 0.5 + 1e-6]), kernels=kernels).point
    assert out[0] == 0.0 and out[1] > 0.0


def test_prox_optimality_residual(kernels, rng):
    cap = rng.uniform(0.5, 3.0, 200)
    v = rng.uniform(-2, 6, 200)
    for sigma in (0.3, 1.0, 4.0):
        t = prox_theta(SeparableFunction.kleinrock(cap), sigma, v, kernels=kernels).point
        assert np.all((t >= 0) & (t < cap))
        inner = t > 0
        g = sigma * cap / (cap - t) ** 2 + t - v
        assert np.abs(g[inner]).max() <= 1e-10 * (1 + np.abs(v[inner]).max())
        assert np.all(g[~inner] >= -1e-12)


def test_backends_agree(rng):
    from blockqp import backend
    if len(backend.BACKENDS) < 2:
        pytest.skip("compiled backend not built")
    cap, r = rng.uniform(0.5, 3, 100), rng.uniform(0, 2, 100)
    v = rng.uniform(-2, 6, 100)
    for th in (SeparableFunction.kleinrock(cap), SeparableFunction.bpr(cap, r)):
        a = prox_theta(th, 0.7, v, kernels=backend.BACKENDS["python"]).point
        b = prox_theta(th, 0.7, v, kernels=backend.BACKENDS["compiled"]).point
        assert np.abs(a - b).max() <= 1e-12


def test_moreau_theta_examples():
    s, _ = moreau_theta_step(SeparableFunction.zero(), 1.7, np.array([1.0, -2.0]))
    assert s.tolist() == [0.0, 0.0]
    s, _ = moreau_theta_step(SeparableFunction.l1(1.0), 1.0, np.array([0.5]))
    assert s.tolist() == [-0.5]


@pytest.mark.parametrize("a", [0.2, 1.0, 3.0])
def test_moreau_kleinrock_grid(a):
    th = SeparableFunction.kleinrock([2.0])
    sigma = 1.5
    s, pr = moreau_theta_step(th, sigma, np.array([a]))
    assert abs(a - (pr.point[0] / sigma - s[0])) <= 1e-10
    ref = moreau_grid(th, sigma, a, -a - 5.0, 5.0)
    assert abs(s[0] - ref) <= 1e-6


@settings(max_examples=60, deadline=None)
@given(finite, st.floats(0.05, 20), st.sampled_from(["zero", "l1", "kleinrock", "bpr"]))
def test_moreau_identity(a, sigma, kind):
    th = {"zero": SeparableFunction.zero(), "l1": SeparableFunction.l1(0.7),
          "kleinrock": SeparableFunction.kleinrock([1.5]),
          "bpr": SeparableFunction.bpr([1.5], [0.8])}[kind]
    s, _ = moreau_theta_step(th, sigma, np.array([a]))
    p = prox_theta(th, sigma, np.array([sigma * a])).point
    assert abs(a - (p[0] / sigma - s[0])) <= 1e-10 * (1 + abs(a))


def test_moreau_cone_examples():
    assert moreau_cone_step(Cone.nonneg(2), 1.0, np.array([2.0, -3.0])).tolist() == [0.0, 3.0]
    assert moreau_cone_step(Cone.free(2), 3.0, np.array([2.0, -3.0])).tolist() == [0.0, 0.0]
    assert moreau_cone_step(Cone.box([0.0], [1.0]), 2.0, np.array([1.0])).tolist() == [-0.5]
