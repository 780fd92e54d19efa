import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from copulameta.errors import DomainError, InvalidArgumentError
from copulameta.numerics import (
    Link,
    MarginSpec,
    beta_cdf,
    beta_quantile,
    beta_shapes,
    betabinomial_logpmf,
    binomial_logpmf,
    gauss_legendre,
    link_apply,
    link_inverse,
    link_log_probs,
    margin_cdf,
    margin_log_probs,
    margin_logpdf,
    margin_quantile,
    normal_cdf,
    normal_quantile,
)

import oracles


@pytest.mark.parametrize("order", [1, 2, 5, 15, 35, 100])
def test_gauss_legendre_matches_reference_rule(order):
    rule = gauss_legendre(order)
    x, w = np.polynomial.legendre.leggauss(order)
    np.testing.assert_allclose(rule.nodes, 0.5 * (x + 1), atol=1e-14)
    np.testing.assert_allclose(rule.weights, 0.5 * w, atol=1e-14)
    assert abs(rule.weights.sum() - 1.0) < 1e-14


def test_gauss_legendre_polynomial_exactness():
    rule = gauss_legendre(15)
    for k in range(30):
        assert abs(rule.integrate(lambda u, k=k: u**k) - 1.0 / (k + 1)) < 1e-13


@pytest.mark.parametrize("order", [0, -3, 201])
def test_gauss_legendre_rejects_bad_order(order):
    with pytest.raises(InvalidArgumentError):
        gauss_legendre(order)


@pytest.mark.parametrize("p", [1e-300, 1e-12, 0.025, 0.3, 0.5, 0.9, 1 - 1e-10])
def test_normal_quantile_against_bisection(p):
    assert normal_quantile(p) == pytest.approx(oracles.bisect_normal_quantile(p), rel=1e-11, abs=1e-12)


def test_normal_quantile_known_value():
    assert normal_quantile(0.975) == pytest.approx(1.959963984540054, abs=1e-14)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, float("nan")])
def test_normal_quantile_domain(p):
    with pytest.raises(DomainError):
        normal_quantile(p)


def test_normal_cdf_symmetry():
    x = np.linspace(-8, 8, 41)
    np.testing.assert_allclose(normal_cdf(x) + normal_cdf(-x), 1.0, atol=1e-15)


def test_beta_mean_and_variance():
    pi, g = 0.76, 0.03
    a, b = beta_shapes(pi, g)
    mean = integrate.quad(lambda x: x * math.exp(margin_logpdf(MarginSpec.parse("beta"), x, pi, g)), 0, 1)[0]
    assert mean == pytest.approx(0.76, abs=1e-10)
    assert stats.beta(a, b).var() == pytest.approx(pi * (1 - pi) * g, rel=1e-12)


@given(p=st.floats(1e-6, 1 - 1e-6), pi=st.floats(0.05, 0.95), g=st.floats(0.005, 0.9))
@settings(max_examples=100, deadline=None)
def test_beta_quantile_roundtrip(p, pi, g):
    x = beta_quantile(p, pi, g)
    # bracket by neighbouring doubles: exact inversion is limited by the spacing of x near 0 or 1
    lo, hi = np.nextafter(x, 0.0), np.nextafter(x, 1.0)
    assert beta_cdf(lo, pi, g) <= p + 1e-9
    if hi < 1.0:
        assert beta_cdf(hi, pi, g) >= p - 1e-9


@pytest.mark.parametrize("gamma", [0.0, 1.0, 1.2])
def test_beta_shapes_domain(gamma):
    with pytest.raises(DomainError):
        beta_shapes(0.5, gamma)


def test_binomial_logpmf_matches_scipy():
    y = np.array([0, 3, 10, 10])
    n = np.array([10, 10, 10, 10])
    for p in (1e-5, 0.3, 0.999):
        np.testing.assert_allclose(binomial_logpmf(y, n, p), stats.binom.logpmf(y, n, p), rtol=1e-12)
    assert binomial_logpmf(0, 5, 0.0) == 0.0
    assert binomial_logpmf(5, 5, 1.0) == 0.0
    assert binomial_logpmf(1, 5, 0.0) == -math.inf


@pytest.mark.parametrize("pi,g", [(0.76, 0.03), (0.81, 0.28), (0.2, 0.6)])
def test_betabinomial_matches_scipy(pi, g):
    y = np.arange(0, 41)
    n = np.full_like(y, 40)
    a, b = beta_shapes(pi, g)
    np.testing.assert_allclose(betabinomial_logpmf(y, n, pi, g), stats.betabinom(40, a, b).logpmf(y), rtol=1e-11)


def test_counts_validation():
    with pytest.raises(InvalidArgumentError):
        binomial_logpmf(6, 5, 0.5)
    with pytest.raises(InvalidArgumentError):
        betabinomial_logpmf(-1, 5, 0.5, 0.1)


@pytest.mark.parametrize("link", list(Link))
@given(p=st.floats(1e-12, 1 - 1e-12))
@settings(max_examples=60, deadline=None)
def test_link_roundtrip(link, p):
    assert link_inverse(link, link_apply(link, p)) == pytest.approx(p, rel=1e-9, abs=1e-14)


@pytest.mark.parametrize("link", [Link.LOGIT, Link.PROBIT, Link.CLOGLOG])
def test_link_log_probs_tails(link):
    for x in (-700.0, -30.0, -1.0, 0.0, 2.0, 30.0):
        lp, lq = link_log_probs(link, x)
        p = link_inverse(link, x)
        if 1e-300 < p < 1 - 1e-12:
            assert lp == pytest.approx(math.log(p), rel=1e-10)
            assert lq == pytest.approx(math.log1p(-p), rel=1e-8, abs=1e-15)
    lp, _ = link_log_probs(Link.LOGIT, -800.0)
    assert lp == pytest.approx(-800.0, rel=1e-12)
    _, lq = link_log_probs(Link.LOGIT, 800.0)
    assert lq == pytest.approx(-800.0, rel=1e-12)


def test_margin_spec_parse():
    assert MarginSpec.parse("normal").link is Link.LOGIT
    assert MarginSpec.parse("normal-probit").link is Link.PROBIT
    assert MarginSpec.parse("beta").is_beta
    with pytest.raises(InvalidArgumentError):
        MarginSpec.parse("gamma")


@pytest.mark.parametrize("name", ["normal", "normal-probit", "normal-cloglog", "beta"])
def test_margin_log_probs_consistent_with_quantile(name):
    m = MarginSpec.parse(name)
    u = np.array([1e-8, 0.01, 0.3, 0.5, 0.9, 0.999, 1 - 1e-9])
    pi, d = (0.81, 0.28) if m.is_beta else (0.79, 1.2)
    x = margin_quantile(m, u, pi, d)
    lp, lq = margin_log_probs(m, u, pi, d)
    ok = (x > 1e-300) & (x < 1 - 1e-9)
    np.testing.assert_allclose(lp[ok], np.log(x[ok]), rtol=1e-10)
    np.testing.assert_allclose(lq[ok], np.log1p(-x[ok]), rtol=1e-7)
    s_lp, s_lq = margin_log_probs(m, 0.4, pi, d)
    assert s_lp == pytest.approx(math.log(margin_quantile(m, 0.4, pi, d)), rel=1e-10)
    assert math.isfinite(s_lq)


@pytest.mark.parametrize("name,pi,d", [("normal", 0.79, 0.43), ("normal-probit", 0.3, 1.1), ("beta", 0.76, 0.03), ("beta", 0.81, 0.28)])
def test_margin_density_is_normalised_and_matches_cdf(name, pi, d):
    m = MarginSpec.parse(name)
    f = lambda x: math.exp(margin_logpdf(m, x, pi, d))  # noqa: E731
    assert integrate.quad(f, 0, 1, limit=200)[0] == pytest.approx(1.0, abs=1e-7)
    x0 = 0.6
    assert integrate.quad(f, 0, x0, limit=200)[0] == pytest.approx(margin_cdf(m, x0, pi, d), abs=1e-8)


def test_margin_median_is_pi_for_normal():
    m = MarginSpec.parse("normal")
    assert margin_quantile(m, 0.5, 0.91, 1.83) == pytest.approx(0.91, abs=1e-14)
