"""Acceptance criteria, each run at its stated tolerance.

Every test appends one PASS/FAIL line to the terminal summary, then asserts.
The simulation criteria run the shipped scenario files with a fixed seed.
"""

import math
import time
import zlib

import numpy as np
import pytest

import conftest
import oracles
from copulameta.copulas import CopulaFamily, CopulaSpec, ccdf, inv_ccdf, log_density, sample, tau_range, tau_to_theta, theta_to_tau
from copulameta.likelihood import ParamVector, joint_logpmf, negative_loglik
from copulameta.numerics import MarginSpec, betabinomial_logpmf, gauss_legendre
from copulameta.simulation import FitConfig, SimScenario, draw_dataset, draw_study, load_scenarios, run_scenario, with_replicates
from copulameta.synthesis import Direction, diagnostic_odds_ratio, quantile_curve

FAMILIES = [f.value for f in CopulaFamily]

# Known failures keep their full tolerance; strict, so an unexpected pass is reported.
QUADRATURE_LIMIT = pytest.mark.xfail(
    strict=True,
    reason="Gauss-Legendre on the copula scale converges slowly for beta margins and outlying studies",
)


def record(number: int, title: str, passed: bool, detail: str):
    line = f"{'PASS' if passed else 'FAIL'}  criterion {number}: {title} ({detail})"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    assert passed, line


def _scenario(repo_root, filename, n_studies, tau, replicates, configs):
    scs, seed = load_scenarios(repo_root / "scenarios" / filename)
    (sc,) = [s for s in scs if s.n_studies == n_studies and s.truth.tau == tau]
    sc = with_replicates(sc, replicates)
    from dataclasses import replace

    return replace(sc, configs=tuple(FitConfig.parse(c) for c in configs)), seed


@QUADRATURE_LIMIT
def test_criterion_1_quadrature_order_stability():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst, failures = {}, {}
    for name in ("normal", "beta"):
        m = MarginSpec.parse(name)
        diffs = []
        for k in range(200):
            fam = FAMILIES[k % len(FAMILIES)]
            lo, hi = tau_range(fam)
            tau = rng.uniform(max(lo, -0.8), min(hi, 0.8))
            pi1, pi2 = rng.uniform(0.6, 0.95, 2)
            d1, d2 = rng.uniform(0.2, 1.8, 2) if name == "normal" else rng.uniform(0.01, 0.3, 2)
            p = ParamVector(pi1, pi2, d1, d2, tau)
            rec = draw_study(SimScenario(m, fam, p, 2), rng)
            a = math.exp(joint_logpmf(rec, p, m, fam, 15))
            b = math.exp(joint_logpmf(rec, p, m, fam, 35))
            diffs.append(abs(a - b))
        worst[name] = max(diffs)
        failures[name] = int(np.sum(np.array(diffs) >= 1e-4))
    elapsed = time.perf_counter() - start
    ok = all(v == 0 for v in failures.values()) and elapsed < 10.0
    detail = ", ".join(f"{k}: max {worst[k]:.2e}, {failures[k]}/200 >= 1e-4" for k in worst) + f"; {elapsed:.1f} s"
    record(1, "order 15 vs 35 within 1e-4", ok, detail)


@QUADRATURE_LIMIT
def test_criterion_2_independence_factorisation():
    beta = MarginSpec.parse("beta")
    truth = ParamVector(0.76, 0.81, 0.03, 0.28, 0.0)
    sc = SimScenario(beta, "bvn", truth, 20)
    rng = np.random.default_rng(2)
    datasets = [draw_dataset(sc, rng) for _ in range(50)]
    start = time.perf_counter()
    errs = {}
    for order in (15, 200):
        rule = gauss_legendre(order)
        e = []
        for d in datasets:
            y1, n1, y2, n2 = d.arrays()
            closed = betabinomial_logpmf(y1, n1, truth.pi1, truth.delta1).sum() + betabinomial_logpmf(y2, n2, truth.pi2, truth.delta2).sum()
            e.append(abs(-negative_loglik(d, truth, beta, "bvn", rule) - closed))
        errs[order] = np.array(e)
    elapsed = time.perf_counter() - start
    # the library default is 15 nodes; 200 is the largest rule offered
    ok = bool(np.all(errs[200] < 1e-6)) and elapsed < 5.0
    detail = (
        f"order 15 max {errs[15].max():.2e}, order 200 max {errs[200].max():.2e}, "
        f"{int(np.sum(errs[200] < 1e-6))}/50 within 1e-6 at order 200; {elapsed:.1f} s"
    )
    record(2, "beta-binomial factorisation at tau=0 within 1e-6", ok, detail)


def test_criterion_3_copula_identities():
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    worst_rt = worst_mass = worst_z = 0.0
    cases = 0
    x, w = np.polynomial.legendre.leggauss(80)
    a, b = 0.2, 0.7
    t = a + (b - a) * 0.5 * (x + 1)
    wt = (b - a) * 0.5 * w
    for fam in FAMILIES:
        for tau in (-0.8, -0.3, 0.3, 0.8):
            lo, hi = tau_range(fam)
            if not lo < tau < hi:
                continue
            cases += 1
            spec = CopulaSpec(fam, tau_to_theta(fam, tau))
            wq = rng.uniform(1e-6, 1 - 1e-6, 2000)
            u = rng.uniform(1e-6, 1 - 1e-6, 2000)
            v = inv_ccdf(spec, wq, u)
            inner = (v > 1e-12) & (v < 1 - 1e-12)
            worst_rt = max(worst_rt, float(np.max(np.abs(ccdf(spec, v[inner], u[inner]) - wq[inner]))))
            mass = float(np.einsum("i,j,ij->", wt, wt, np.exp(log_density(spec, t[:, None], t[None, :]))))
            C = lambda p, q: oracles.copula_cdf(fam, spec.theta, p, q)  # noqa: E731
            worst_mass = max(worst_mass, abs(mass - (C(b, b) - C(a, b) - C(b, a) + C(a, a))))
            srng = np.random.default_rng(zlib.crc32(f"{fam}{tau}".encode()))
            batches = [oracles.empirical_kendall(*sample(spec, 500, srng)) for _ in range(40)]
            se = np.std(batches, ddof=1) / math.sqrt(len(batches))
            worst_z = max(worst_z, abs(np.mean(batches) - theta_to_tau(fam, spec.theta)) / se)
    elapsed = time.perf_counter() - start
    ok = worst_rt < 1e-9 and worst_mass < 1e-6 and worst_z < 3.0 and elapsed < 60.0
    detail = f"{cases} cases; roundtrip {worst_rt:.1e}, box mass {worst_mass:.1e}, Kendall {worst_z:.2f} SE; {elapsed:.1f} s"
    record(3, "copula identities", ok, detail)


def test_criterion_7_dor_values():
    a = diagnostic_odds_ratio(0.71, 0.79)
    b = diagnostic_odds_ratio(0.74, 0.75)
    ok = abs(a - 0.65) <= 0.005 and abs(b - 0.94) <= 0.01
    record(7, "diagnostic odds ratio values", ok, f"{a:.4f}, {b:.4f}")


def test_criterion_9_bvn_median_curve():
    p = ParamVector(0.79, 0.91, 0.43, 1.83, -0.5)
    curve = quantile_curve(p, MarginSpec.parse("normal"), "bvn", Direction.X1_ON_X2, q=0.5, scale="logit")
    rho = math.sin(math.pi * p.tau / 2)
    lx2 = curve.points[:, 1]
    lp1, lp2 = math.log(p.pi1 / (1 - p.pi1)), math.log(p.pi2 / (1 - p.pi2))
    line = lp1 + rho * p.delta1 / p.delta2 * (lx2 - lp2)
    err = float(np.max(np.abs(curve.points[:, 0] - line)))
    record(9, "BVN median curve on the logit scale", len(lx2) == 101 and err < 1e-8, f"101 points, max error {err:.1e}")


@pytest.mark.slow
def test_criterion_4_recovery_normal_truth(repo_root):
    sc, seed = _scenario(repo_root, "reference.txt", 20, -0.5, 300, ["ML-normal"])
    s = run_scenario(sc, seed)
    r1, r2 = s.row("pi1", "ML", "normal", "own"), s.row("pi2", "ML", "normal", "own")
    ok = abs(r1.bias) < 0.008 and abs(r2.bias) < 0.025 and 0.015 <= r1.sd <= 0.027
    detail = f"bias pi1 {r1.bias:+.4f}, bias pi2 {r2.bias:+.4f}, SD pi1 {r1.sd:.4f}, {r1.n_used} converged, {s.wall_time:.0f} s"
    record(4, "ML-normal recovery, normal truth", ok, detail)


@pytest.fixture(scope="module")
def beta_truth_run(repo_root):
    sc, seed = _scenario(repo_root, "beta_truth.txt", 20, -0.5, 300, ["ML-normal", "ML-beta", "CL-beta"])
    return run_scenario(sc, seed)


@pytest.mark.slow
def test_criterion_5_margin_misspecification(beta_truth_run):
    s = beta_truth_run
    wrong = s.row("pi2", "ML", "normal", "own")
    right = s.row("pi2", "ML", "beta", "own")
    ok = 0.06 <= wrong.bias <= 0.10 and abs(right.bias) < 0.015
    detail = f"ML-normal bias pi2 {wrong.bias:+.4f} ({wrong.n_used}), ML-beta bias pi2 {right.bias:+.4f} ({right.n_used})"
    record(5, "margin misspecification, beta truth", ok, detail)


@pytest.mark.slow
def test_criterion_8_godambe_standard_error(beta_truth_run):
    s = beta_truth_run
    est = s.estimates("CL-beta")[:, 0]
    se = s.standard_errors("CL-beta")[:, 0]
    se = se[np.isfinite(se)]
    sd = float(np.std(est))
    ratio = float(np.mean(se)) / sd
    record(8, "CL-beta Godambe SE of pi1", abs(ratio - 1.0) <= 0.25, f"mean SE {np.mean(se):.4f}, SD {sd:.4f}, ratio {ratio:.3f}")


@pytest.mark.slow
@pytest.mark.xfail(
    strict=True,
    reason="CL-normal reaches a spread-at-floor plateau that meets the simplex tolerances, so it never counts as non-converged",
)
def test_criterion_6_nonconvergence_ordering(repo_root):
    sc, seed = _scenario(repo_root, "reference.txt", 10, -0.5, 500, ["ML-normal", "ML-beta", "CL-normal", "CL-beta"])
    s = run_scenario(sc, seed)
    nc = s.non_convergence
    n = sc.replicates
    ml_rate = max(nc["ML-normal"], nc["ML-beta"]) / n
    ok = nc["CL-beta"] == 0 and ml_rate < 0.02 and nc["CL-normal"] > nc["ML-normal"]
    detail = ", ".join(f"{k} {v}/{n}" for k, v in nc.items()) + f"; {s.wall_time:.0f} s"
    record(6, "non-convergence ordering", ok, detail)
