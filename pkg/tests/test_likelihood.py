import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from copulameta.copulas import CopulaSpec
from copulameta.errors import InvalidArgumentError, NumericalFailure
from copulameta.likelihood import (
    Dataset,
    FitOptions,
    FitResult,
    ParamVector,
    StudyRecord,
    default_initial,
    fit_ml,
    joint_logpmf,
    negative_loglik,
    study_logliks,
)
from copulameta.numerics import MarginSpec, gauss_legendre
from copulameta.simulation import SimScenario, draw_dataset

import oracles

NORMAL = MarginSpec.parse("normal")
BETA = MarginSpec.parse("beta")


def test_study_record_validation():
    with pytest.raises(InvalidArgumentError):
        StudyRecord(5, 4, 1, 2)
    with pytest.raises(InvalidArgumentError):
        StudyRecord(1.5, 4, 1, 2)
    with pytest.raises(InvalidArgumentError):
        StudyRecord(0, 0, 0, 0)


def test_param_vector_validation():
    ParamVector(0.8, 0.9, 0.4, 1.8, -0.5).validate(NORMAL, "bvn")
    with pytest.raises(InvalidArgumentError):
        ParamVector(1.0, 0.9, 0.4, 1.8, -0.5).validate(NORMAL, "bvn")
    with pytest.raises(InvalidArgumentError):
        ParamVector(0.8, 0.9, 0.4, 1.2, 0.0).validate(BETA, "bvn")
    with pytest.raises(InvalidArgumentError):
        ParamVector(0.8, 0.9, 0.4, 0.2, 0.3).validate(NORMAL, "clayton90")


CASES = [
    ("normal", "bvn", (0.79, 0.91, 0.43, 1.83, -0.5), (30, 40, 55, 60)),
    ("normal", "frank", (0.7, 0.8, 0.8, 0.6, 0.4), (12, 20, 30, 37)),
    ("normal", "clayton270", (0.79, 0.91, 0.43, 1.2, -0.6), (45, 50, 70, 80)),
    ("normal", "clayton180", (0.6, 0.7, 0.5, 0.5, 0.3), (10, 20, 14, 20)),
    ("beta", "bvn", (0.76, 0.81, 0.03, 0.1, -0.5), (40, 50, 30, 40)),
    ("beta", "clayton90", (0.6, 0.7, 0.05, 0.08, -0.4), (20, 30, 25, 30)),
]


@pytest.mark.parametrize("margin,family,params,counts", CASES)
def test_joint_pmf_against_density_route(margin, family, params, counts):
    p = ParamVector(*params)
    m = MarginSpec.parse(margin)
    spec = CopulaSpec.from_tau(family, p.tau)
    rec = StudyRecord(*counts)
    got = math.exp(joint_logpmf(rec, p, m, family, gauss_legendre(150)))

    def ld(u, v):
        return np.log(np.vectorize(lambda a, b: oracles.copula_density(family, spec.theta, a, b))(u, v))

    ref = oracles.joint_pmf_density_route(rec.y1, rec.n1, rec.y2, rec.n2, margin, params[:4], ld, order=120)
    assert got == pytest.approx(ref, rel=2e-5)


@pytest.mark.parametrize("margin,family,params,counts", CASES)
def test_quadrature_order_stability(margin, family, params, counts):
    p = ParamVector(*params)
    m = MarginSpec.parse(margin)
    rec = StudyRecord(*counts)
    a = math.exp(joint_logpmf(rec, p, m, family, 15))
    b = math.exp(joint_logpmf(rec, p, m, family, 35))
    assert abs(a - b) < 1e-4


@given(
    n1=st.integers(1, 6),
    n2=st.integers(1, 6),
    pi1=st.floats(0.1, 0.9),
    pi2=st.floats(0.1, 0.9),
    tfrac=st.floats(-0.9, 0.9),
    beta=st.booleans(),
)
@settings(max_examples=40, deadline=None)
def test_pmf_sums_to_one(n1, n2, pi1, pi2, tfrac, beta):
    m = BETA if beta else NORMAL
    p = ParamVector(pi1, pi2, 0.2 if beta else 0.9, 0.1 if beta else 1.4, tfrac)
    total = sum(
        math.exp(joint_logpmf(StudyRecord(a, n1, b, n2), p, m, "frank"))
        for a in range(n1 + 1)
        for b in range(n2 + 1)
    )
    assert total == pytest.approx(1.0, abs=1e-12)


def test_joint_logpmf_needs_two_points():
    with pytest.raises(InvalidArgumentError):
        joint_logpmf(StudyRecord(1, 2, 1, 2), ParamVector(0.5, 0.5, 1, 1, 0), NORMAL, "bvn", 1)


def test_negative_loglik_is_sum_of_study_terms(rng):
    data = Dataset.from_arrays([3, 9, 20], [10, 12, 25], [8, 5, 30], [9, 11, 31])
    p = ParamVector(0.7, 0.8, 0.6, 0.9, 0.3)
    ll = study_logliks(data, p, NORMAL, "bvn")
    assert negative_loglik(data, p, NORMAL, "bvn") == pytest.approx(-ll.sum(), rel=1e-14)
    for i, rec in enumerate(data):
        assert ll[i] == pytest.approx(joint_logpmf(rec, p, NORMAL, "bvn"), rel=1e-13)


def test_independence_copulas_agree():
    data = Dataset.from_arrays([3, 9, 20], [10, 12, 25], [8, 5, 30], [9, 11, 31])
    p = ParamVector(0.7, 0.8, 0.6, 0.9, 0.0)
    ref = negative_loglik(data, p, NORMAL, "bvn")
    for fam in ("frank", "clayton", "clayton270"):
        assert negative_loglik(data, p, NORMAL, fam) == pytest.approx(ref, rel=1e-13)


def test_non_finite_study_is_reported(monkeypatch):
    from copulameta import likelihood

    data = Dataset.from_arrays([3, 9, 20], [10, 12, 25], [8, 5, 30], [9, 11, 31], labels=["a", "b", "c"])
    real = likelihood.kernels.study_loglik_2d

    def broken(*args):
        out = real(*args)
        out[1] = -np.inf
        return out

    monkeypatch.setattr(likelihood.kernels, "study_loglik_2d", broken)
    with pytest.raises(NumericalFailure) as exc:
        negative_loglik(data, ParamVector(0.7, 0.8, 0.6, 0.9, 0.3), NORMAL, "bvn")
    assert exc.value.study == 1
    assert "b" in str(exc.value)


def _scenario(margin="normal", n=200, tau=-0.5, family="bvn", truth=None):
    t = truth or ((0.79, 0.91, 0.43, 1.83) if margin == "normal" else (0.76, 0.81, 0.03, 0.28))
    return SimScenario(MarginSpec.parse(margin), family, ParamVector(*t, tau), n)


def test_default_initial_is_inside():
    d = draw_dataset(_scenario(n=20), np.random.default_rng(1))
    p = default_initial(d, NORMAL, "clayton90")
    assert -0.9 <= p.tau <= 0.0
    assert 0.0 < p.pi1 < 1.0 and p.delta1 == 0.5
    b = default_initial(d, BETA, "bvn")
    assert b.delta1 == 0.1


@pytest.mark.parametrize("margin,family", [("normal", "bvn"), ("beta", "clayton270")])
def test_fit_recovers_truth_on_large_sample(margin, family):
    sc = _scenario(margin, n=200, family=family, tau=-0.5)
    data = draw_dataset(sc, np.random.default_rng(2024))
    # beta margins with a large spread need more nodes than the default at n ~ 150 per arm
    fit = fit_ml(data, sc.margin, family, rule=15 if margin == "normal" else 60)
    assert fit.converged
    assert not fit.boundary_flag
    truth = sc.truth.as_array()
    for i, name in enumerate(ParamVector.NAMES):
        se = fit.std_errors[name]
        assert se is not None and se > 0
        assert abs(fit.estimates.as_array()[i] - truth[i]) < 4 * se, name
    assert fit.covariance.shape == (5, 5)
    np.testing.assert_allclose(fit.covariance, fit.covariance.T, atol=1e-10)


def test_fit_with_fixed_tau():
    data = draw_dataset(_scenario(n=30), np.random.default_rng(3))
    fit = fit_ml(data, NORMAL, "bvn", options=FitOptions(fix_tau=0.0))
    assert fit.estimates.tau == 0.0
    assert fit.std_errors["tau"] is None
    assert np.all(fit.covariance[4] == 0.0)


def test_boundary_fit_withholds_standard_errors():
    data = Dataset.from_arrays([5, 7], [10, 12], [8, 9], [10, 11])
    fit = fit_ml(data, NORMAL, "bvn")
    assert fit.converged
    assert fit.boundary_flag
    assert fit.to_dict()["se_note"] is not None


def test_fit_result_roundtrip():
    data = draw_dataset(_scenario(n=15), np.random.default_rng(4))
    fit = fit_ml(data, NORMAL, "frank")
    back = FitResult.from_dict(fit.to_dict())
    assert back.estimates == fit.estimates
    assert back.loglik == fit.loglik
    assert back.family == fit.family and back.margin == fit.margin
    assert back.label == "frank-normal"


def test_fit_needs_two_studies():
    with pytest.raises(InvalidArgumentError):
        fit_ml(Dataset.from_arrays([1], [2], [1], [2]), NORMAL, "bvn")


def test_loglik_matches_objective_at_estimate():
    data = draw_dataset(_scenario(n=15), np.random.default_rng(5))
    fit = fit_ml(data, NORMAL, "bvn")
    assert fit.loglik == pytest.approx(-negative_loglik(data, fit.estimates, NORMAL, "bvn"), rel=1e-12)
