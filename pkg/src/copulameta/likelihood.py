"""Joint likelihood of the copula mixed model and its maximum likelihood fit.

For one study the joint pmf of the true positives and true negatives is a
double integral over the copula of the two random effects.  It is
evaluated on a Gauss-Legendre grid after converting the independent node
pairs ``(u_a, u_b)`` into dependent pairs ``(u_a, C^{-1}(u_b | u_a))``:

    sum_a sum_b w_a w_b g(y1; n1, x1(u_a)) g(y2; n2, x2(C^{-1}(u_b | u_a)))

with ``xj(u) = l^{-1}(F^{-1}(u; l(pi_j), delta_j))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import numpy as np
from scipy import optimize, special, stats

from . import kernels
from .copulas import CopulaFamily, CopulaSpec, inv_ccdf, tau_range, tau_to_theta
from .errors import InvalidArgumentError, NumericalFailure
from .numerics import (
    MarginSpec,
    QuadratureRule,
    gauss_legendre,
    log_binomial_coefficient,
    margin_log_probs,
)

__all__ = [
    "StudyRecord",
    "Dataset",
    "ParamVector",
    "FitResult",
    "FitOptions",
    "joint_logpmf",
    "negative_loglik",
    "study_logliks",
    "fit_ml",
    "default_initial",
    "numerical_hessian",
]

DEFAULT_QUAD_POINTS = 15

SIGMA_FLOOR, SIGMA_CEIL = 1e-4, 50.0
GAMMA_FLOOR, GAMMA_CEIL = 1e-6, 0.99
LOGIT_PI_LIMIT = 15.0
# fitted tau stays this far inside the family range
TAU_EDGE = 1e-4
# boundary_flag is raised this close to an edge of the tau range
TAU_BOUNDARY_TOL = 1e-3


# ---------------------------------------------------------------------------
# Data


@dataclass(frozen=True)
class StudyRecord:
    """One study: true positives of the diseased and true negatives of the healthy."""

    y1: int
    n1: int
    y2: int
    n2: int

    def __post_init__(self):
        for name in ("y1", "n1", "y2", "n2"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value:
                raise InvalidArgumentError(f"{name} must be an integer count, got {value!r}")
            object.__setattr__(self, name, int(value))
        if not (0 <= self.y1 <= self.n1 and 0 <= self.y2 <= self.n2):
            raise InvalidArgumentError(f"counts must satisfy 0 <= y <= n, got {self}")
        if self.n1 < 1 and self.n2 < 1:
            raise InvalidArgumentError("a study needs at least one diseased or healthy subject")


@dataclass(frozen=True)
class Dataset:
    studies: tuple
    labels: tuple | None = None

    def __post_init__(self):
        studies = tuple(
            s if isinstance(s, StudyRecord) else StudyRecord(*s) for s in self.studies
        )
        object.__setattr__(self, "studies", studies)
        if self.labels is not None:
            labels = tuple(str(x) for x in self.labels)
            if len(labels) != len(studies):
                raise InvalidArgumentError("labels must match the number of studies")
            object.__setattr__(self, "labels", labels)

    @classmethod
    def from_arrays(cls, y1, n1, y2, n2, labels=None) -> "Dataset":
        return cls(tuple(StudyRecord(*row) for row in zip(y1, n1, y2, n2)), labels)

    def __len__(self):
        return len(self.studies)

    def __iter__(self):
        return iter(self.studies)

    def label(self, i: int) -> str:
        return self.labels[i] if self.labels is not None else str(i + 1)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        a = np.array([(s.y1, s.n1, s.y2, s.n2) for s in self.studies], dtype=float).reshape(-1, 4)
        return a[:, 0], a[:, 1], a[:, 2], a[:, 3]


# ---------------------------------------------------------------------------
# Parameters


@dataclass(frozen=True)
class ParamVector:
    """Meta-analytic sensitivity/specificity, between-study spreads and Kendall's tau.

    ``delta1``/``delta2`` are standard deviations on the link scale for
    normal margins and dispersions in (0, 1) for beta margins.
    """

    pi1: float
    pi2: float
    delta1: float
    delta2: float
    tau: float = 0.0

    NAMES = ("pi1", "pi2", "delta1", "delta2", "tau")

    def __post_init__(self):
        for f in fields(self):
            v = float(getattr(self, f.name))
            if not math.isfinite(v):
                raise InvalidArgumentError(f"{f.name} must be finite, got {v}")
            object.__setattr__(self, f.name, v)

    def as_array(self) -> np.ndarray:
        return np.array([self.pi1, self.pi2, self.delta1, self.delta2, self.tau])

    @classmethod
    def from_array(cls, values) -> "ParamVector":
        return cls(*[float(v) for v in values])

    def named(self, margin: MarginSpec) -> dict:
        d = margin.delta_name
        return {"pi1": self.pi1, "pi2": self.pi2, f"{d}1": self.delta1, f"{d}2": self.delta2, "tau": self.tau}

    def validate(self, margin: MarginSpec, family=None):
        if not (0.0 < self.pi1 < 1.0 and 0.0 < self.pi2 < 1.0):
            raise InvalidArgumentError("pi1 and pi2 must lie in (0, 1)")
        if margin.is_beta:
            if not (0.0 < self.delta1 < 1.0 and 0.0 < self.delta2 < 1.0):
                raise InvalidArgumentError("beta dispersions must lie in (0, 1)")
        elif not (self.delta1 > 0.0 and self.delta2 > 0.0):
            raise InvalidArgumentError("normal margin standard deviations must be positive")
        if family is not None:
            lo, hi = tau_range(family)
            if not lo <= self.tau <= hi:
                raise InvalidArgumentError(f"tau {self.tau} outside [{lo}, {hi}]")
        return self


# ---------------------------------------------------------------------------
# Likelihood evaluation


def _family_of(copula) -> CopulaFamily:
    if isinstance(copula, CopulaSpec):
        return copula.family
    return CopulaFamily.parse(copula)


class _Problem:
    """Dataset arrays and quadrature constants reused across evaluations."""

    def __init__(self, data: Dataset, margin: MarginSpec, family, rule: QuadratureRule):
        self.data = data
        self.margin = margin
        self.family = None if family is None else _family_of(family)
        self.rule = rule
        y1, n1, y2, n2 = data.arrays()
        self.y1, self.y2 = y1, y2
        self.m1, self.m2 = n1 - y1, n2 - y2
        self.logc1 = np.asarray(log_binomial_coefficient(y1.astype(int), n1.astype(int)), dtype=float).reshape(-1)
        self.logc2 = np.asarray(log_binomial_coefficient(y2.astype(int), n2.astype(int)), dtype=float).reshape(-1)
        self.logc = self.logc1 + self.logc2
        self.nodes = rule.nodes
        self.logw = rule.log_weights
        self._row = np.broadcast_to(self.nodes[:, None], (rule.order, rule.order))
        self._col = np.broadcast_to(self.nodes[None, :], (rule.order, rule.order))

    def copula(self, tau: float) -> CopulaSpec:
        return CopulaSpec(self.family, tau_to_theta(self.family, tau))

    def study_logliks(self, p: ParamVector) -> np.ndarray:
        lp1, lq1 = margin_log_probs(self.margin, self.nodes, p.pi1, p.delta1)
        spec = self.copula(p.tau)
        if spec.is_independence:
            v = self._col
        else:
            v = inv_ccdf(spec, self._col, self._row)
        lp2, lq2 = margin_log_probs(self.margin, v, p.pi2, p.delta2)
        return kernels.study_loglik_2d(
            lp1, lq1, lp2, lq2, self.logw, self.y1, self.m1, self.y2, self.m2, self.logc
        )

    def negloglik(self, p: ParamVector) -> float:
        ll = self.study_logliks(p)
        bad = ~np.isfinite(ll)
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise NumericalFailure(
                f"non-finite log-likelihood for study {self.data.label(i)} at {p}", params=p, study=i
            )
        return -float(np.sum(ll))


def _rule(rule) -> QuadratureRule:
    if rule is None:
        return gauss_legendre(DEFAULT_QUAD_POINTS)
    if isinstance(rule, QuadratureRule):
        return rule
    return gauss_legendre(int(rule))


def study_logliks(data: Dataset, params: ParamVector, margin: MarginSpec, copula, rule=None) -> np.ndarray:
    """Per-study joint log-pmf values (may contain ``-inf``)."""
    rule = _rule(rule)
    params.validate(margin, _family_of(copula))
    return _Problem(data, margin, copula, rule).study_logliks(params)


def joint_logpmf(record: StudyRecord, params: ParamVector, margin: MarginSpec, copula, rule=None) -> float:
    """Log joint pmf of one study.

    ``copula`` names the family (a :class:`CopulaSpec` contributes only
    its family); the dependence is taken from ``params.tau``.
    """
    rule = _rule(rule)
    if rule.order < 2:
        raise InvalidArgumentError("joint_logpmf needs a quadrature rule of order >= 2")
    params.validate(margin, _family_of(copula))
    value = float(_Problem(Dataset((record,)), margin, copula, rule).study_logliks(params)[0])
    if not math.isfinite(value):
        raise NumericalFailure(f"non-finite joint log-pmf at {params}", params=params)
    return value


def negative_loglik(data: Dataset, params: ParamVector, margin: MarginSpec, copula, rule=None) -> float:
    rule = _rule(rule)
    params.validate(margin, _family_of(copula))
    return _Problem(data, margin, copula, rule).negloglik(params)


# ---------------------------------------------------------------------------
# Optimizer-scale transforms


def delta_bounds(margin: MarginSpec) -> tuple[float, float]:
    return (GAMMA_FLOOR, GAMMA_CEIL) if margin.is_beta else (SIGMA_FLOOR, SIGMA_CEIL)


def fit_tau_bounds(family) -> tuple[float, float]:
    lo, hi = tau_range(family)
    return lo + TAU_EDGE, hi - TAU_EDGE


def _delta_to_z(margin, d):
    return special.logit(d) if margin.is_beta else math.log(d)


def _delta_from_z(margin, z):
    lo, hi = delta_bounds(margin)
    d = special.expit(z) if margin.is_beta else math.exp(min(z, 10.0))
    return min(max(d, lo), hi)


def _pi_from_z(z):
    return float(special.expit(min(max(z, -LOGIT_PI_LIMIT), LOGIT_PI_LIMIT)))


def _tau_from_z(family, z):
    lo, hi = tau_range(family)
    t = 0.5 * (lo + hi) + 0.5 * (hi - lo) * math.tanh(z)
    blo, bhi = fit_tau_bounds(family)
    return min(max(t, blo), bhi)


def _tau_to_z(family, tau):
    lo, hi = tau_range(family)
    s = (2.0 * tau - (lo + hi)) / (hi - lo)
    s = min(max(s, -1.0 + 1e-12), 1.0 - 1e-12)
    return math.atanh(s)


class _Transform:
    def __init__(self, margin, family, fix_tau=None):
        self.margin = margin
        self.family = family
        self.fix_tau = fix_tau

    @property
    def size(self):
        return 4 if self.fix_tau is not None else 5

    def to_z(self, p: ParamVector) -> np.ndarray:
        z = [special.logit(p.pi1), special.logit(p.pi2), _delta_to_z(self.margin, p.delta1), _delta_to_z(self.margin, p.delta2)]
        if self.fix_tau is None:
            z.append(_tau_to_z(self.family, p.tau))
        return np.array(z, dtype=float)

    def from_z(self, z) -> ParamVector:
        tau = self.fix_tau if self.fix_tau is not None else _tau_from_z(self.family, z[4])
        return ParamVector(
            _pi_from_z(z[0]), _pi_from_z(z[1]), _delta_from_z(self.margin, z[2]), _delta_from_z(self.margin, z[3]), tau
        )


# ---------------------------------------------------------------------------
# Fitting


@dataclass(frozen=True)
class FitOptions:
    initial: ParamVector | None = None
    fix_tau: float | None = None
    max_evaluations: int = 5000
    xatol: float = 1e-8
    fatol: float = 1e-10
    initial_step: float = 0.5
    restart_step: float = 0.1
    compute_se: bool = True


@dataclass
class FitResult:
    """Outcome of an ML or CL fit.

    ``std_errors`` maps the five parameter names to a standard error or
    ``None``; ``covariance`` is on the natural scale in ParamVector order
    (``None`` when withheld).  ``boundary_flag`` marks estimates on the edge
    of the parameter space, for which standard errors are unreliable.
    """

    method: str
    margin: MarginSpec
    family: CopulaFamily | None
    estimates: ParamVector
    std_errors: dict
    loglik: float
    converged: bool
    boundary_flag: bool
    n_evaluations: int
    covariance: np.ndarray | None = None
    message: str = ""
    side_converged: tuple | None = None

    @property
    def label(self) -> str:
        if self.method == "CL":
            return f"CL-{self.margin.name}"
        return f"{self.family.value}-{self.margin.name}"

    @property
    def se_reliable(self) -> bool:
        return self.converged and not self.boundary_flag and self.covariance is not None

    def to_dict(self) -> dict:
        names = ParamVector.NAMES
        cov = None if self.covariance is None else [[float(x) for x in row] for row in self.covariance]
        return {
            "method": self.method,
            "margin": self.margin.name,
            "copula": None if self.family is None else self.family.value,
            "estimates": {k: float(v) for k, v in zip(names, self.estimates.as_array())},
            "std_errors": {k: (None if self.std_errors.get(k) is None else float(self.std_errors[k])) for k in names},
            "loglik": float(self.loglik),
            "converged": bool(self.converged),
            "boundary_flag": bool(self.boundary_flag),
            "se_note": None if not self.boundary_flag else "standard errors unreliable: estimate on the boundary of the parameter space",
            "n_evaluations": int(self.n_evaluations),
            "covariance": cov,
            "message": self.message,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        est = ParamVector(*[d["estimates"][k] for k in ParamVector.NAMES])
        cov = None if d.get("covariance") is None else np.array(d["covariance"], dtype=float)
        return cls(
            method=d["method"],
            margin=MarginSpec.parse(d["margin"]),
            family=None if d.get("copula") is None else CopulaFamily.parse(d["copula"]),
            estimates=est,
            std_errors=dict(d["std_errors"]),
            loglik=float(d["loglik"]),
            converged=bool(d["converged"]),
            boundary_flag=bool(d["boundary_flag"]),
            n_evaluations=int(d["n_evaluations"]),
            covariance=cov,
            message=d.get("message", ""),
        )


def _empirical_logits(y, n):
    return special.logit((y + 0.5) / (n + 1.0))


def default_initial(data: Dataset, margin: MarginSpec, family) -> ParamVector:
    """Pooled proportions, a fixed spread, and the clamped empirical Kendall's tau."""
    y1, n1, y2, n2 = data.arrays()
    pi1 = float(np.clip(y1.sum() / max(n1.sum(), 1.0), 0.01, 0.99))
    pi2 = float(np.clip(y2.sum() / max(n2.sum(), 1.0), 0.01, 0.99))
    delta = 0.1 if margin.is_beta else 0.5
    tau = 0.0
    if family is not None:
        lo, hi = tau_range(family)
        tau = 0.0
        if len(data) >= 2:
            t = stats.kendalltau(_empirical_logits(y1, n1), _empirical_logits(y2, n2)).statistic
            tau = 0.0 if not np.isfinite(t) else float(t)
        width = hi - lo
        tau = min(max(tau, lo + 0.05 * width), hi - 0.05 * width)
    return ParamVector(pi1, pi2, delta, delta, tau)


def _simplex(x0, step):
    k = len(x0)
    sim = np.tile(x0, (k + 1, 1))
    for i in range(k):
        sim[i + 1, i] += step
    return sim


def nelder_mead(objective, x0, options: FitOptions):
    """Derivative-free minimisation with one restart from the optimum.

    Returns ``(x, fun, n_evaluations, converged)``; convergence means the
    final run met both tolerances within the evaluation budget.
    """
    total = 0
    x = np.asarray(x0, dtype=float)
    fun = objective(x)
    total += 1
    converged = False
    for step in (options.initial_step, options.restart_step):
        budget = options.max_evaluations - total
        if budget <= len(x) + 1:
            converged = False
            break
        res = optimize.minimize(
            objective,
            x,
            method="Nelder-Mead",
            options={
                "initial_simplex": _simplex(x, step),
                "xatol": options.xatol,
                "fatol": options.fatol,
                "maxfev": budget,
                "maxiter": 10 * options.max_evaluations,
            },
        )
        total += res.nfev
        if res.fun <= fun:
            x, fun = res.x, float(res.fun)
        converged = bool(res.success) and res.nfev < budget
        if not converged:
            break
    if not math.isfinite(fun):
        converged = False
    return x, fun, total, converged


def numerical_hessian(f, x, steps) -> np.ndarray:
    """Central-difference Hessian of a scalar function."""
    x = np.asarray(x, dtype=float)
    k = len(x)
    h = np.asarray(steps, dtype=float)
    f0 = f(x)
    H = np.empty((k, k))
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = h[i]
        H[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / (h[i] * h[i])
        for j in range(i):
            ej = np.zeros(k)
            ej[j] = h[j]
            H[i, j] = H[j, i] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4.0 * h[i] * h[j])
    return H


def hessian_steps(x) -> np.ndarray:
    return np.maximum(1e-4, 1e-3 * np.abs(np.asarray(x, dtype=float)))


def _inside(p: np.ndarray, margin: MarginSpec, family, free_tau: bool) -> bool:
    if not (0.0 < p[0] < 1.0 and 0.0 < p[1] < 1.0):
        return False
    if not (p[2] > 0.0 and p[3] > 0.0):
        return False
    if margin.is_beta and not (p[2] < 1.0 and p[3] < 1.0):
        return False
    if free_tau:
        tlo, thi = tau_range(family)
        if not tlo < p[4] < thi:
            return False
    return True


def covariance_from_hessian(f, x, margin, family, free_tau):
    """Inverse Hessian of a negative log-likelihood, or ``None`` when unusable."""
    steps = hessian_steps(x)
    for sign in (1.0, -1.0):
        for i in range(len(x)):
            for j in range(len(x)):
                probe = x.copy()
                probe[i] += sign * steps[i]
                probe[j] += sign * steps[j] if j != i else 0.0
                if not _inside(probe, margin, family, free_tau):
                    return None
    try:
        H = numerical_hessian(f, x, steps)
    except (NumericalFailure, InvalidArgumentError, ValueError):
        return None
    if not np.all(np.isfinite(H)):
        return None
    H = 0.5 * (H + H.T)
    try:
        np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        return None
    return np.linalg.inv(H)


def _near_floor(margin, d):
    lo, _ = delta_bounds(margin)
    return d <= 10.0 * lo


def fit_ml(data: Dataset, margin: MarginSpec | str, copula, rule=None, options: FitOptions | None = None) -> FitResult:
    """Maximise the joint log-likelihood over (pi1, pi2, delta1, delta2, tau)."""
    options = options or FitOptions()
    margin = MarginSpec.parse(margin) if isinstance(margin, str) else margin
    rule = _rule(rule)
    family = _family_of(copula)
    if len(data) < 2:
        raise InvalidArgumentError("fitting needs at least two studies")
    problem = _Problem(data, margin, family, rule)
    transform = _Transform(margin, family, options.fix_tau)
    start = options.initial or default_initial(data, margin, family)
    if options.fix_tau is not None:
        start = replace(start, tau=options.fix_tau)

    def objective(z):
        try:
            val = problem.negloglik(transform.from_z(z))
        except (NumericalFailure, InvalidArgumentError, FloatingPointError):
            return np.inf
        return val if math.isfinite(val) else np.inf

    with np.errstate(all="ignore"):
        z, fun, n_eval, converged = nelder_mead(objective, transform.to_z(start), options)
    est = transform.from_z(z)
    free_tau = options.fix_tau is None

    boundary = _near_floor(margin, est.delta1) or _near_floor(margin, est.delta2)
    boundary |= max(abs(special.logit(est.pi1)), abs(special.logit(est.pi2))) >= LOGIT_PI_LIMIT - 1e-9
    if free_tau:
        lo, hi = tau_range(family)
        boundary |= (est.tau - lo) < TAU_BOUNDARY_TOL or (hi - est.tau) < TAU_BOUNDARY_TOL

    cov = None
    if converged and options.compute_se:
        k = 5 if free_tau else 4
        x_nat = est.as_array()[:k]

        def f_nat(x):
            full = x if free_tau else np.append(x, options.fix_tau)
            return problem.negloglik(ParamVector.from_array(full))

        with np.errstate(all="ignore"):
            cov_k = covariance_from_hessian(f_nat, x_nat, margin, family, free_tau)
        if cov_k is None:
            boundary = True
        else:
            cov = np.zeros((5, 5))
            cov[:k, :k] = cov_k
    ses = {name: None for name in ParamVector.NAMES}
    if cov is not None:
        k = 5 if free_tau else 4
        for i in range(k):
            ses[ParamVector.NAMES[i]] = float(math.sqrt(cov[i, i]))
    message = "converged" if converged else "evaluation budget exhausted or non-finite objective"
    return FitResult(
        method="ML",
        margin=margin,
        family=family,
        estimates=est,
        std_errors=ses,
        loglik=-fun,
        converged=converged,
        boundary_flag=bool(boundary),
        n_evaluations=n_eval,
        covariance=cov,
        message=message,
    )
