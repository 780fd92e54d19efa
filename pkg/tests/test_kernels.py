import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from copulameta import kernels
from copulameta.composite import univariate_negloglik
from copulameta.errors import InvalidArgumentError
from copulameta.likelihood import Dataset, ParamVector, negative_loglik
from copulameta.numerics import MarginSpec

needs_compiled = pytest.mark.skipif("compiled" not in kernels.available_backends(), reason="extension not built")


@pytest.fixture
def backend():
    previous = kernels.get_backend()
    yield kernels.set_backend
    kernels.set_backend(previous)


def test_set_backend_validation(backend):
    assert "python" in kernels.available_backends()
    with pytest.raises(InvalidArgumentError):
        backend("fortran")
    backend("python")
    assert kernels.get_backend() == "python"
    backend("auto")
    assert kernels.get_backend() == ("compiled" if "compiled" in kernels.available_backends() else "python")


def _inputs(rng, q, s):
    x1 = rng.uniform(1e-6, 1 - 1e-6, q)
    x2 = rng.uniform(1e-6, 1 - 1e-6, (q, q))
    n1 = rng.integers(0, 200, s).astype(float)
    n2 = rng.integers(0, 200, s).astype(float)
    y1 = np.floor(rng.uniform(0, 1, s) * (n1 + 1)).clip(max=n1)
    y2 = np.floor(rng.uniform(0, 1, s) * (n2 + 1)).clip(max=n2)
    logw = np.log(rng.dirichlet(np.ones(q)))
    return np.log(x1), np.log1p(-x1), np.log(x2), np.log1p(-x2), logw, y1, n1 - y1, y2, n2 - y2, rng.normal(size=s)


@needs_compiled
@given(seed=st.integers(0, 2**32 - 1), q=st.integers(2, 40), s=st.integers(1, 30))
@settings(max_examples=50, deadline=None)
def test_backends_agree_on_random_inputs(seed, q, s):
    args = _inputs(np.random.default_rng(seed), q, s)
    prev = kernels.set_backend("compiled")
    try:
        c2 = kernels.study_loglik_2d(*args)
        c1 = kernels.study_loglik_1d(args[0], args[1], args[4], args[5], args[6], args[9])
        kernels.set_backend("python")
        p2 = kernels.study_loglik_2d(*args)
        p1 = kernels.study_loglik_1d(args[0], args[1], args[4], args[5], args[6], args[9])
    finally:
        kernels.set_backend(prev)
    np.testing.assert_allclose(c2, p2, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(c1, p1, rtol=1e-12, atol=1e-12)


@needs_compiled
@pytest.mark.parametrize("margin,family", [("normal", "bvn"), ("beta", "clayton90"), ("normal-probit", "frank")])
def test_backends_agree_on_likelihood(backend, margin, family):
    data = Dataset.from_arrays([30, 0, 44, 12], [40, 10, 44, 50], [50, 20, 0, 61], [60, 20, 5, 70])
    m = MarginSpec.parse(margin)
    p = ParamVector(0.7, 0.8, 0.1 if m.is_beta else 0.9, 0.2 if m.is_beta else 1.4, -0.4)
    out = {}
    for name in ("compiled", "python"):
        backend(name)
        out[name] = (negative_loglik(data, p, m, family), univariate_negloglik(2, data, (p.pi2, p.delta2), m))
    assert out["compiled"][0] == pytest.approx(out["python"][0], rel=1e-12)
    assert out["compiled"][1] == pytest.approx(out["python"][1], rel=1e-12)


@pytest.mark.parametrize("name", kernels.available_backends())
def test_log_zero_terms(backend, name):
    backend(name)
    # x = 0 exactly at one node: log x = -inf must not poison studies with y = 0
    lp = np.array([-np.inf, math.log(0.5)])
    lq = np.array([0.0, math.log(0.5)])
    logw = np.log([0.5, 0.5])
    y = np.array([0.0, 1.0])
    m = np.array([2.0, 1.0])
    out = kernels.study_loglik_1d(lp, lq, logw, y, m, np.zeros(2))
    assert out[0] == pytest.approx(math.log(0.5 * 1.0 + 0.5 * 0.25), rel=1e-14)
    assert out[1] == pytest.approx(math.log(0.5 * 0.25), rel=1e-14)


@pytest.mark.parametrize("name", kernels.available_backends())
def test_all_nodes_impossible_gives_minus_infinity(backend, name):
    backend(name)
    lp = np.array([-np.inf, -np.inf])
    lq = np.zeros(2)
    out = kernels.study_loglik_1d(lp, lq, np.log([0.5, 0.5]), np.array([1.0]), np.array([0.0]), np.zeros(1))
    assert out[0] == -math.inf
