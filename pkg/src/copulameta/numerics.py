"""Special functions, univariate distributions and quadrature rules.

Every routine accepts scalars or numpy arrays and broadcasts.  The
random-effect distributions are parametrised the way the mixed model uses
them: a normal margin is ``N(l(pi), sigma)`` on the link scale and a beta
margin is ``Beta(pi, gamma)`` with mean ``pi`` and variance
``pi (1 - pi) gamma``.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DomainError, InvalidArgumentError

__all__ = [
    "Link",
    "MarginFamily",
    "MarginSpec",
    "QuadratureRule",
    "gauss_legendre",
    "normal_cdf",
    "normal_quantile",
    "normal_logpdf",
    "beta_shapes",
    "beta_cdf",
    "beta_quantile",
    "beta_logpdf",
    "log_binomial_coefficient",
    "binomial_logpmf",
    "betabinomial_logpmf",
    "link_apply",
    "link_inverse",
    "link_log_probs",
    "margin_quantile",
    "margin_log_probs",
    "margin_cdf",
    "margin_logpdf",
]

MAX_QUADRATURE_ORDER = 200


class Link(str, enum.Enum):
    LOGIT = "logit"
    PROBIT = "probit"
    CLOGLOG = "cloglog"
    IDENTITY = "identity"


class MarginFamily(str, enum.Enum):
    NORMAL = "normal"
    BETA = "beta"


_ALLOWED_LINKS = {
    MarginFamily.NORMAL: (Link.LOGIT, Link.PROBIT, Link.CLOGLOG),
    MarginFamily.BETA: (Link.IDENTITY,),
}


@dataclass(frozen=True)
class MarginSpec:
    """Univariate random-effect family and its link.

    Normal margins take one of logit/probit/cloglog; beta margins live on
    the probability scale and only take the identity link.
    """

    family: MarginFamily = MarginFamily.NORMAL
    link: Link | None = None

    def __post_init__(self):
        family = MarginFamily(self.family)
        link = self.link
        if link is None:
            link = Link.LOGIT if family is MarginFamily.NORMAL else Link.IDENTITY
        link = Link(link)
        if link not in _ALLOWED_LINKS[family]:
            raise InvalidArgumentError(
                f"{family.value} margin does not permit the {link.value} link"
            )
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "link", link)

    @classmethod
    def parse(cls, text: str) -> "MarginSpec":
        """Build from ``"normal"``, ``"beta"`` or ``"normal-probit"`` style names."""
        parts = text.strip().lower().replace("_", "-").split("-")
        family = {"norm": "normal"}.get(parts[0], parts[0])
        try:
            fam = MarginFamily(family)
        except ValueError:
            raise InvalidArgumentError(f"unknown margin family {text!r}") from None
        link = parts[1] if len(parts) > 1 else None
        try:
            return cls(fam, Link(link) if link else None)
        except ValueError as exc:
            raise InvalidArgumentError(str(exc)) from None

    @property
    def is_beta(self) -> bool:
        return self.family is MarginFamily.BETA

    @property
    def name(self) -> str:
        if self.family is MarginFamily.NORMAL and self.link is not Link.LOGIT:
            return f"normal-{self.link.value}"
        return self.family.value

    @property
    def delta_name(self) -> str:
        return "gamma" if self.is_beta else "sigma"


# ---------------------------------------------------------------------------
# Quadrature


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Gauss-Legendre nodes and weights on the unit interval."""

    order: int
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def log_weights(self) -> np.ndarray:
        return np.log(self.weights)

    def integrate(self, f) -> float:
        """Apply the rule to a vectorised callable on (0, 1)."""
        return float(np.dot(self.weights, f(self.nodes)))


def _legendre_nodes(n: int) -> tuple[np.ndarray, np.ndarray]:
    # Newton iteration on P_n from the Tricomi-type cosine guesses.
    i = np.arange(1, n + 1, dtype=float)
    x = np.cos(np.pi * (i - 0.25) / (n + 0.5))
    for _ in range(100):
        p_prev = np.ones_like(x)
        p = x.copy()
        for k in range(2, n + 1):
            p_prev, p = p, ((2 * k - 1) * x * p - (k - 1) * p_prev) / k
        dp = n * (x * p - p_prev) / (x * x - 1.0)
        step = p / dp
        x = x - step
        if np.max(np.abs(step)) < 1e-16:
            break
    p_prev = np.ones_like(x)
    p = x.copy()
    for k in range(2, n + 1):
        p_prev, p = p, ((2 * k - 1) * x * p - (k - 1) * p_prev) / k
    dp = n * (x * p - p_prev) / (x * x - 1.0)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    return x, w


@functools.lru_cache(maxsize=None)
def gauss_legendre(order: int) -> QuadratureRule:
    """Gauss-Legendre rule of the given order mapped to (0, 1)."""
    if isinstance(order, bool) or int(order) != order:
        raise InvalidArgumentError(f"quadrature order must be an integer, got {order!r}")
    order = int(order)
    if not 1 <= order <= MAX_QUADRATURE_ORDER:
        raise InvalidArgumentError(
            f"quadrature order must lie in [1, {MAX_QUADRATURE_ORDER}], got {order}"
        )
    x, w = _legendre_nodes(order)
    u = 0.5 * (1.0 - x)
    # enforce the exact reflection symmetry u_q + u_{n+1-q} = 1
    u = 0.5 * (u + 1.0 - u[::-1])
    w = 0.25 * (w + w[::-1])
    w = w / w.sum()
    u.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(order, u, w)


# ---------------------------------------------------------------------------
# Normal distribution


def _check_open_unit(p, name="p"):
    p = np.asarray(p, dtype=float)
    if np.any(~(p > 0.0)) or np.any(~(p < 1.0)):
        raise DomainError(f"{name} must lie strictly inside (0, 1)")
    return p


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def normal_cdf(x):
    return _out(special.ndtr(np.asarray(x, dtype=float)))


def normal_quantile(p):
    p = _check_open_unit(p)
    return _out(special.ndtri(p))


def normal_logpdf(x, mean=0.0, sd=1.0):
    z = (np.asarray(x, dtype=float) - mean) / sd
    return _out(-0.5 * z * z - np.log(sd) - 0.5 * math.log(2.0 * math.pi))


# ---------------------------------------------------------------------------
# Beta distribution in the (mean, dispersion) parametrisation


def beta_shapes(pi, gamma):
    """Shape parameters with mean ``pi`` and variance ``pi (1 - pi) gamma``."""
    pi = _check_open_unit(pi, "pi")
    gamma = _check_open_unit(gamma, "gamma")
    scale = (1.0 - gamma) / gamma
    return pi * scale, (1.0 - pi) * scale


def beta_cdf(x, pi, gamma):
    a, b = beta_shapes(pi, gamma)
    x = np.asarray(x, dtype=float)
    if np.any((x < 0.0) | (x > 1.0)):
        raise DomainError("x must lie in [0, 1]")
    return _out(special.betainc(a, b, x))


def beta_quantile(p, pi, gamma):
    a, b = beta_shapes(pi, gamma)
    p = np.asarray(p, dtype=float)
    if np.any((p < 0.0) | (p > 1.0)):
        raise DomainError("p must lie in [0, 1]")
    return _out(special.betaincinv(a, b, p))


def beta_logpdf(x, pi, gamma):
    a, b = beta_shapes(pi, gamma)
    x = _check_open_unit(x, "x")
    return _out((a - 1.0) * np.log(x) + (b - 1.0) * np.log1p(-x) - special.betaln(a, b))


# ---------------------------------------------------------------------------
# Binomial and beta-binomial


def _check_counts(y, n):
    y = np.asarray(y)
    n = np.asarray(n)
    if np.any(y < 0) or np.any(y > n):
        raise InvalidArgumentError("counts must satisfy 0 <= y <= n")
    return y, n


def log_binomial_coefficient(y, n):
    y, n = _check_counts(y, n)
    y = y.astype(float)
    n = n.astype(float)
    return _out(special.gammaln(n + 1.0) - special.gammaln(y + 1.0) - special.gammaln(n - y + 1.0))


def binomial_logpmf(y, n, p):
    """Binomial log-pmf with the convention ``0 ** 0 = 1``."""
    y, n = _check_counts(y, n)
    p = np.asarray(p, dtype=float)
    if np.any((p < 0.0) | (p > 1.0)):
        raise DomainError("success probability must lie in [0, 1]")
    yf = y.astype(float)
    nf = n.astype(float)
    with np.errstate(divide="ignore"):
        out = log_binomial_coefficient(y, n) + special.xlogy(yf, p) + special.xlog1py(nf - yf, -p)
    return _out(out)


def betabinomial_logpmf(y, n, pi, gamma):
    """Beta-binomial log-pmf, i.e. the binomial pmf mixed over ``Beta(pi, gamma)``."""
    y, n = _check_counts(y, n)
    a, b = beta_shapes(pi, gamma)
    yf = y.astype(float)
    nf = n.astype(float)
    out = (
        log_binomial_coefficient(y, n)
        + special.gammaln(yf + a)
        + special.gammaln(nf - yf + b)
        - special.gammaln(nf + a + b)
        - special.gammaln(a)
        - special.gammaln(b)
        + special.gammaln(a + b)
    )
    return _out(out)


# ---------------------------------------------------------------------------
# Links


def _as_link(link) -> Link:
    try:
        return Link(link)
    except ValueError:
        raise InvalidArgumentError(f"unknown link {link!r}") from None


def link_apply(link, p):
    link = _as_link(link)
    if link is Link.IDENTITY:
        return _out(np.asarray(p, dtype=float))
    p = _check_open_unit(p)
    if link is Link.LOGIT:
        out = special.logit(p)
    elif link is Link.PROBIT:
        out = special.ndtri(p)
    else:
        out = np.log(-np.log1p(-p))
    return _out(out)


def link_inverse(link, x):
    link = _as_link(link)
    x = np.asarray(x, dtype=float)
    if link is Link.LOGIT:
        out = special.expit(x)
    elif link is Link.PROBIT:
        out = special.ndtr(x)
    elif link is Link.CLOGLOG:
        out = -np.expm1(-np.exp(x))
    else:
        out = x
    return _out(out)


def link_log_probs(link, x):
    """``(log p, log(1 - p))`` for ``p = link_inverse(link, x)``, tail-accurate."""
    link = _as_link(link)
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        if link is Link.LOGIT:
            return -np.logaddexp(0.0, -x), -np.logaddexp(0.0, x)
        if link is Link.PROBIT:
            return special.log_ndtr(x), special.log_ndtr(-x)
        if link is Link.CLOGLOG:
            ex = np.exp(x)
            return np.log(-np.expm1(-ex)), -ex
        return np.log(x), np.log1p(-x)


def _link_log_derivative(link, p):
    # log |dl/dp|, used for change of variables to the probability scale
    if link is Link.LOGIT:
        return -np.log(p) - np.log1p(-p)
    if link is Link.PROBIT:
        z = special.ndtri(p)
        return -normal_logpdf(z)
    if link is Link.CLOGLOG:
        return -np.log1p(-p) - np.log(-np.log1p(-p))
    return np.zeros_like(p)


# ---------------------------------------------------------------------------
# Random-effect margins on the probability scale


def margin_quantile(margin: MarginSpec, u, pi, delta):
    """``l^{-1}(F^{-1}(u; l(pi), delta))``: the study-level probability at level u."""
    u = np.asarray(u, dtype=float)
    if margin.is_beta:
        a, b = beta_shapes(pi, delta)
        return _out(special.betaincinv(a, b, u))
    mu = link_apply(margin.link, pi)
    return link_inverse(margin.link, mu + delta * special.ndtri(u))


def margin_log_probs(margin: MarginSpec, u, pi, delta):
    """Like :func:`margin_quantile` but return ``(log x, log(1 - x))``.

    For beta margins the upper complement is computed from the reflected
    quantile so that values close to one keep their precision.
    """
    u = np.asarray(u, dtype=float)
    if margin.is_beta:
        a, b = beta_shapes(pi, delta)
        uu = np.atleast_1d(u)
        x = special.betaincinv(a, b, uu)
        with np.errstate(divide="ignore"):
            lq = np.log1p(-x)
            hi = x > 0.9
            if np.any(hi):
                lq[hi] = np.log(special.betaincinv(b, a, 1.0 - uu[hi]))
            lp = np.log(x)
        if u.ndim == 0:
            return float(lp[0]), float(lq[0])
        return lp, lq
    mu = link_apply(margin.link, pi)
    return link_log_probs(margin.link, mu + delta * special.ndtri(u))


def margin_cdf(margin: MarginSpec, x, pi, delta):
    """``F(l(x); l(pi), delta)`` for probability-scale x."""
    x = _check_open_unit(x, "x")
    if margin.is_beta:
        a, b = beta_shapes(pi, delta)
        return _out(special.betainc(a, b, x))
    mu = link_apply(margin.link, pi)
    return _out(special.ndtr((link_apply(margin.link, x) - mu) / delta))


def margin_logpdf(margin: MarginSpec, x, pi, delta):
    """Log density of the study-level probability ``X`` on the probability scale."""
    x = _check_open_unit(x, "x")
    if margin.is_beta:
        return beta_logpdf(x, pi, delta)
    mu = link_apply(margin.link, pi)
    t = link_apply(margin.link, x)
    return _out(normal_logpdf(t, mu, delta) + _link_log_derivative(margin.link, x))
