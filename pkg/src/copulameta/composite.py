"""Composite likelihood under working independence of the random effects.

With the independence copula the joint likelihood splits into one
univariate likelihood for the sensitivities and one for the
specificities.  Each is maximised on its own; the beta margin has the
closed-form beta-binomial likelihood, the normal margin uses univariate
Gauss-Legendre quadrature.  Standard errors come from the inverse Godambe
information, whose off-diagonal block couples the two sides through the
empirical cross-product of per-study scores.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import kernels
from .errors import InvalidArgumentError, NumericalFailure
from .likelihood import (
    Dataset,
    FitOptions,
    FitResult,
    ParamVector,
    _near_floor,
    _rule,
    delta_bounds,
    hessian_steps,
    nelder_mead,
    numerical_hessian,
    LOGIT_PI_LIMIT,
)
from .numerics import MarginSpec, betabinomial_logpmf, log_binomial_coefficient, margin_log_probs

__all__ = ["GodambeMatrix", "univariate_negloglik", "side_study_logliks", "fit_cl", "godambe"]

SIDES = ("sensitivity", "specificity")
SCORE_STEP = 1e-5


def _side_index(side) -> int:
    if side in (1, "1", "sensitivity", "sens"):
        return 0
    if side in (2, "2", "specificity", "spec"):
        return 1
    raise InvalidArgumentError(f"side must be 'sensitivity' or 'specificity', got {side!r}")


def _side_counts(data: Dataset, side) -> tuple[np.ndarray, np.ndarray]:
    y1, n1, y2, n2 = data.arrays()
    return (y1, n1) if _side_index(side) == 0 else (y2, n2)


def _alpha_ok(alpha, margin: MarginSpec) -> bool:
    pi, delta = alpha
    if not (0.0 < pi < 1.0 and delta > 0.0):
        return False
    return delta < 1.0 if margin.is_beta else True


def side_study_logliks(side, data: Dataset, alpha, margin: MarginSpec, rule=None) -> np.ndarray:
    """Per-study log of the univariate marginal likelihood on one side."""
    y, n = _side_counts(data, side)
    return _side_logliks(y, n, alpha, margin, _rule(rule))


def _side_logliks(y, n, alpha, margin, rule):
    pi, delta = float(alpha[0]), float(alpha[1])
    if not _alpha_ok((pi, delta), margin):
        raise InvalidArgumentError(f"invalid univariate parameters (pi={pi}, delta={delta})")
    yi, ni = y.astype(int), n.astype(int)
    if margin.is_beta:
        return np.asarray(betabinomial_logpmf(yi, ni, pi, delta), dtype=float).reshape(-1)
    lp, lq = margin_log_probs(margin, rule.nodes, pi, delta)
    logc = np.asarray(log_binomial_coefficient(yi, ni), dtype=float).reshape(-1)
    return kernels.study_loglik_1d(lp, lq, rule.log_weights, y, n - y, logc)


def univariate_negloglik(side, data: Dataset, alpha, margin: MarginSpec, rule=None) -> float:
    """Negative log of one factor of the independence likelihood."""
    ll = side_study_logliks(side, data, alpha, margin, rule)
    bad = ~np.isfinite(ll)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise NumericalFailure(
            f"non-finite {SIDES[_side_index(side)]} log-likelihood for study {data.label(i)}",
            params=tuple(alpha),
            study=i,
            side=SIDES[_side_index(side)],
        )
    return -float(np.sum(ll))


@dataclass(frozen=True, eq=False)
class GodambeMatrix:
    """Inverse Godambe information over ``(pi1, delta1, pi2, delta2)``."""

    v: np.ndarray
    info11: np.ndarray
    info22: np.ndarray
    cross12: np.ndarray

    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.v))

    def to_param_order(self) -> np.ndarray:
        """Embed in the 5x5 ParamVector order (pi1, pi2, delta1, delta2, tau)."""
        perm = [0, 2, 1, 3]
        out = np.zeros((5, 5))
        out[:4, :4] = self.v[np.ix_(perm, perm)]
        return out


def _side_hessian_ok(alpha, margin, steps):
    for s in (1.0, -1.0):
        for da in (np.array([steps[0], 0.0]), np.array([0.0, steps[1]]), steps):
            if not _alpha_ok(np.asarray(alpha) + s * da, margin):
                return False
            if not _alpha_ok(np.asarray(alpha) + s * np.array([da[0], -da[1]]), margin):
                return False
    return True


def _per_study_scores(y, n, alpha, margin, rule, step=SCORE_STEP):
    alpha = np.asarray(alpha, dtype=float)
    cols = []
    for k in range(2):
        e = np.zeros(2)
        e[k] = step
        up = _side_logliks(y, n, alpha + e, margin, rule)
        down = _side_logliks(y, n, alpha - e, margin, rule)
        cols.append((up - down) / (2.0 * step))
    return np.column_stack(cols)


def godambe(data: Dataset, fit, margin: MarginSpec, rule=None) -> GodambeMatrix:
    """Observed inverse Godambe information at the CL estimates.

    ``fit`` is a CL :class:`FitResult` or a pair ``((pi1, delta1), (pi2, delta2))``.
    Raises :class:`NumericalFailure` when an information block is singular
    or the difference stencil leaves the parameter space.
    """
    rule = _rule(rule)
    if isinstance(fit, FitResult):
        e = fit.estimates
        alphas = ((e.pi1, e.delta1), (e.pi2, e.delta2))
    else:
        alphas = tuple(tuple(float(x) for x in a) for a in fit)
    infos, invs, scores = [], [], []
    for j, alpha in enumerate(alphas):
        y, n = _side_counts(data, j + 1)
        steps = hessian_steps(alpha)
        if not _side_hessian_ok(alpha, margin, np.maximum(steps, SCORE_STEP)):
            raise NumericalFailure(f"{SIDES[j]} estimate too close to the boundary for the information", side=SIDES[j])

        def f(a, y=y, n=n):
            return -float(np.sum(_side_logliks(y, n, a, margin, rule)))

        H = numerical_hessian(f, np.asarray(alpha, dtype=float), steps)
        H = 0.5 * (H + H.T)
        if not np.all(np.isfinite(H)):
            raise NumericalFailure(f"non-finite {SIDES[j]} information", side=SIDES[j])
        try:
            np.linalg.cholesky(H)
        except np.linalg.LinAlgError:
            raise NumericalFailure(f"singular {SIDES[j]} information matrix", side=SIDES[j]) from None
        inv = np.linalg.inv(H)
        infos.append(H)
        invs.append(0.5 * (inv + inv.T))
        scores.append(_per_study_scores(y, n, alpha, margin, rule))
    cross = scores[0].T @ scores[1]
    off = invs[0] @ cross @ invs[1]
    v = np.block([[invs[0], off], [off.T, invs[1]]])
    return GodambeMatrix(v=v, info11=infos[0], info22=infos[1], cross12=cross)


# ---------------------------------------------------------------------------
# Fitting


def _z_to_alpha(z, margin):
    lo, hi = delta_bounds(margin)
    pi = float(special.expit(min(max(z[0], -LOGIT_PI_LIMIT), LOGIT_PI_LIMIT)))
    d = float(special.expit(z[1])) if margin.is_beta else math.exp(min(z[1], 10.0))
    return pi, min(max(d, lo), hi)


def _alpha_to_z(alpha, margin):
    pi, d = alpha
    return np.array([special.logit(pi), special.logit(d) if margin.is_beta else math.log(d)])


def _fit_side(y, n, margin, rule, start, options):
    def objective(z):
        try:
            ll = _side_logliks(y, n, _z_to_alpha(z, margin), margin, rule)
        except (InvalidArgumentError, FloatingPointError):
            return np.inf
        val = -float(np.sum(ll))
        return val if math.isfinite(val) else np.inf

    with np.errstate(all="ignore"):
        z, fun, n_eval, ok = nelder_mead(objective, _alpha_to_z(start, margin), options)
        if not ok and margin.is_beta:
            # closed-form side: restart from the best point of a coarse grid
            grid = [(p, g) for p in (0.1, 0.3, 0.5, 0.7, 0.9) for g in (0.01, 0.05, 0.1, 0.3, 0.6)]
            vals = [objective(_alpha_to_z(a, margin)) for a in grid]
            best = grid[int(np.argmin(vals))]
            z2, fun2, n2, ok = nelder_mead(objective, _alpha_to_z(best, margin), options)
            n_eval += n2 + len(grid)
            if fun2 <= fun:
                z, fun = z2, fun2
    return _z_to_alpha(z, margin), fun, n_eval, ok


def fit_cl(data: Dataset, margin: MarginSpec | str, rule=None, options: FitOptions | None = None) -> FitResult:
    """Composite likelihood fit: two independent univariate maximisations.

    The reported tau is exactly 0 with no standard error; the univariate
    standard errors are the square roots of the Godambe diagonal.
    """
    margin = MarginSpec.parse(margin) if isinstance(margin, str) else margin
    options = options or FitOptions()
    rule = _rule(rule)
    if len(data) < 2:
        raise InvalidArgumentError("fitting needs at least two studies")
    y1, n1, y2, n2 = data.arrays()
    delta0 = 0.1 if margin.is_beta else 0.5
    results = []
    for y, n in ((y1, n1), (y2, n2)):
        pi0 = float(np.clip(y.sum() / max(n.sum(), 1.0), 0.01, 0.99))
        start = (pi0, delta0)
        results.append(_fit_side(y, n, margin, rule, start, options))
    (a1, f1, e1, ok1), (a2, f2, e2, ok2) = results
    est = ParamVector(a1[0], a2[0], a1[1], a2[1], 0.0)
    converged = ok1 and ok2
    boundary = _near_floor(margin, a1[1]) or _near_floor(margin, a2[1])
    cov = None
    ses = {name: None for name in ParamVector.NAMES}
    if converged and options.compute_se:
        try:
            with np.errstate(all="ignore"):
                G = godambe(data, (a1, a2), margin, rule)
        except NumericalFailure:
            boundary = True
        else:
            cov = G.to_param_order()
            for i, name in enumerate(ParamVector.NAMES[:4]):
                ses[name] = float(math.sqrt(cov[i, i]))
    return FitResult(
        method="CL",
        margin=margin,
        family=None,
        estimates=est,
        std_errors=ses,
        loglik=-(f1 + f2),
        converged=converged,
        boundary_flag=bool(boundary),
        n_evaluations=e1 + e2,
        covariance=cov,
        message="converged" if converged else "univariate fit did not converge",
        side_converged=(ok1, ok2),
    )
