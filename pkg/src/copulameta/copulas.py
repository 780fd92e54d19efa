"""Bivariate copulas for the random-effects distribution.

Families: bivariate normal (BVN), Frank, Clayton and Clayton rotated by
90, 180 and 270 degrees.  The rotations follow

    c90(u, v) = c(1 - u, v),  c180(u, v) = c(1 - u, 1 - v),  c270(u, v) = c(u, 1 - v)

so Clayton by 90 and by 270 carry negative dependence.

``ccdf(spec, v, u)`` is ``C(v | u) = dC(u, v)/du``, the distribution of the
second variable given the first; ``inv_ccdf`` is its inverse in ``v``.
All work happens on the natural parameter theta; Kendall's tau is the
user-facing parametrisation and is converted with :func:`tau_to_theta`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import optimize, special

from .errors import DomainError, InvalidArgumentError

__all__ = [
    "CopulaFamily",
    "CopulaSpec",
    "tau_range",
    "tau_to_theta",
    "theta_to_tau",
    "ccdf",
    "inv_ccdf",
    "ccdf_given_second",
    "inv_ccdf_given_second",
    "log_density",
    "sample",
    "sample_pair",
]

# |theta| below this is treated as the independence copula
INDEPENDENCE_EPS = 1e-8
# BVN correlation is clamped to this magnitude inside conditionals
BVN_MAX_RHO = 1.0 - 1e-7
FRANK_MAX_THETA = 1e7


class CopulaFamily(str, enum.Enum):
    BVN = "bvn"
    FRANK = "frank"
    CLAYTON0 = "clayton"
    CLAYTON90 = "clayton90"
    CLAYTON180 = "clayton180"
    CLAYTON270 = "clayton270"

    @classmethod
    def parse(cls, text) -> "CopulaFamily":
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower()
        key = {"clayton0": "clayton", "normal": "bvn", "gaussian": "bvn"}.get(key, key)
        try:
            return cls(key)
        except ValueError:
            names = ", ".join(f.value for f in cls)
            raise InvalidArgumentError(f"unknown copula family {text!r} (expected one of {names})") from None

    @property
    def is_clayton(self) -> bool:
        return self not in (CopulaFamily.BVN, CopulaFamily.FRANK)

    @property
    def exchangeable(self) -> bool:
        return self not in (CopulaFamily.CLAYTON90, CopulaFamily.CLAYTON270)


def tau_range(family) -> tuple[float, float]:
    """Closed interval of Kendall's tau attainable by a family."""
    family = CopulaFamily.parse(family)
    if family in (CopulaFamily.BVN, CopulaFamily.FRANK):
        return -1.0, 1.0
    if family in (CopulaFamily.CLAYTON0, CopulaFamily.CLAYTON180):
        return 0.0, 1.0
    return -1.0, 0.0


# ---------------------------------------------------------------------------
# Kendall's tau <-> theta


@lru_cache(maxsize=1)
def _frank_series_coefs() -> np.ndarray:
    # tau(theta) = 4 * sum_{k even >= 2} B_k theta^(k-1) / ((k+1) k!), |theta| < 2 pi
    ks = np.arange(2, 42, 2)
    b = special.bernoulli(ks[-1])[ks]
    return 4.0 * b / ((ks + 1.0) * special.factorial(ks))


def _frank_tau_positive(theta: float) -> float:
    if theta < 2.0:
        coefs = _frank_series_coefs()
        powers = theta ** np.arange(1, 2 * len(coefs), 2)
        return float(np.dot(coefs, powers))
    k = np.arange(1, 41, dtype=float)
    debye_integral = math.pi ** 2 / 6.0 - float(np.sum(np.exp(-k * theta) * (theta / k + 1.0 / k ** 2)))
    return 1.0 - 4.0 / theta + 4.0 * debye_integral / theta ** 2


def theta_to_tau(family, theta: float) -> float:
    family = CopulaFamily.parse(family)
    theta = float(theta)
    if family is CopulaFamily.BVN:
        if not -1.0 <= theta <= 1.0:
            raise InvalidArgumentError("BVN theta must lie in [-1, 1]")
        return 2.0 / math.pi * math.asin(theta)
    if family is CopulaFamily.FRANK:
        if not math.isfinite(theta):
            raise InvalidArgumentError("Frank theta must be finite")
        if abs(theta) < INDEPENDENCE_EPS:
            return 0.0
        return math.copysign(_frank_tau_positive(abs(theta)), theta)
    if not (theta >= 0.0 and math.isfinite(theta)):
        raise InvalidArgumentError("Clayton theta must be positive")
    tau = theta / (theta + 2.0)
    return -tau if family in (CopulaFamily.CLAYTON90, CopulaFamily.CLAYTON270) else tau


def tau_to_theta(family, tau: float) -> float:
    family = CopulaFamily.parse(family)
    tau = float(tau)
    lo, hi = tau_range(family)
    if not lo <= tau <= hi:
        raise InvalidArgumentError(
            f"Kendall's tau {tau} is outside the range [{lo}, {hi}] of the {family.value} copula"
        )
    if family is CopulaFamily.BVN:
        return math.sin(math.pi * tau / 2.0)
    if family is CopulaFamily.FRANK:
        a = abs(tau)
        if a < INDEPENDENCE_EPS:
            return 0.0
        upper = 10.0
        while _frank_tau_positive(upper) < a:
            upper *= 4.0
            if upper > FRANK_MAX_THETA:
                raise InvalidArgumentError(f"Frank tau {tau} is numerically unattainable")
        theta = optimize.brentq(
            lambda t: _frank_tau_positive(t) - a, 0.0, upper, xtol=1e-14, rtol=1e-15
        )
        return math.copysign(theta, tau)
    a = abs(tau)
    if a >= 1.0:
        raise InvalidArgumentError("Clayton families cannot attain |tau| = 1")
    return 2.0 * a / (1.0 - a)


# ---------------------------------------------------------------------------
# Family plus parameter


@dataclass(frozen=True)
class CopulaSpec:
    family: CopulaFamily
    theta: float = 0.0

    def __post_init__(self):
        family = CopulaFamily.parse(self.family)
        theta = float(self.theta)
        if not math.isfinite(theta):
            raise InvalidArgumentError("copula parameter must be finite")
        if family is CopulaFamily.BVN and not -1.0 <= theta <= 1.0:
            raise InvalidArgumentError("BVN theta must lie in [-1, 1]")
        if family.is_clayton and theta < 0.0:
            raise InvalidArgumentError("Clayton theta must be positive")
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def from_tau(cls, family, tau: float) -> "CopulaSpec":
        family = CopulaFamily.parse(family)
        return cls(family, tau_to_theta(family, tau))

    @property
    def tau(self) -> float:
        return theta_to_tau(self.family, self.theta)

    @property
    def is_independence(self) -> bool:
        if self.family is CopulaFamily.BVN:
            return self.theta == 0.0
        return abs(self.theta) < INDEPENDENCE_EPS


# ---------------------------------------------------------------------------
# Base families (unrotated).  Arguments are arrays already validated.


def _bvn_rho(theta):
    return min(max(theta, -BVN_MAX_RHO), BVN_MAX_RHO)


def _bvn_ccdf(v, u, rho):
    return special.ndtr((special.ndtri(v) - rho * special.ndtri(u)) / math.sqrt(1.0 - rho * rho))


def _bvn_inv(w, u, rho):
    return special.ndtr(math.sqrt(1.0 - rho * rho) * special.ndtri(w) + rho * special.ndtri(u))


def _bvn_logpdf(u, v, rho):
    x = special.ndtri(u)
    y = special.ndtri(v)
    one_m = 1.0 - rho * rho
    return -0.5 * math.log(one_m) - (rho * rho * (x * x + y * y) - 2.0 * rho * x * y) / (2.0 * one_m)


def _log1mexp(x):
    # log(1 - exp(-x)) for x > 0
    return np.where(x > math.log(2.0), np.log1p(-np.exp(-x)), np.log(-np.expm1(-x)))


def _frank_ccdf(v, u, theta):
    # theta > 0; log-stable rearrangement of the Frank conditional cdf
    r = -theta * v + _log1mexp(theta * (1.0 - v)) + theta * u - _log1mexp(theta * v)
    return special.expit(-r)


def _frank_inv(w, u, theta):
    lw = np.log1p(-w) - np.log(w)
    s = lw - theta * u
    return -(np.logaddexp(s, -theta) - np.logaddexp(s, 0.0)) / theta


def _frank_logpdf(u, v, theta):
    log_d = np.logaddexp(-theta * u + _log1mexp(theta * v), -theta * v + _log1mexp(theta * (1.0 - v)))
    return math.log(theta) + float(_log1mexp(np.float64(theta))) - theta * (u + v) - 2.0 * log_d


def _clayton_logs(u, v, theta):
    a = -theta * np.log(u)
    b = -theta * np.log(v)
    m = np.maximum(a, b)
    return m + np.log1p(np.exp(np.minimum(a, b) - m) - np.exp(-m))


def _clayton_ccdf(v, u, theta):
    return np.exp(-(theta + 1.0) * np.log(u) - (1.0 / theta + 1.0) * _clayton_logs(u, v, theta))


def _clayton_inv(w, u, theta):
    p = np.log(np.expm1(-(theta / (1.0 + theta)) * np.log(w))) - theta * np.log(u)
    return np.exp(-np.logaddexp(p, 0.0) / theta)


def _clayton_logpdf(u, v, theta):
    return (
        math.log1p(theta)
        - (theta + 1.0) * (np.log(u) + np.log(v))
        - (2.0 + 1.0 / theta) * _clayton_logs(u, v, theta)
    )


def _base_ccdf(family, theta, v, u):
    if family is CopulaFamily.BVN:
        return _bvn_ccdf(v, u, _bvn_rho(theta))
    if family is CopulaFamily.FRANK:
        if theta > 0.0:
            return _frank_ccdf(v, u, theta)
        return 1.0 - _frank_ccdf(1.0 - v, u, -theta)
    return _clayton_ccdf(v, u, theta)


def _base_inv(family, theta, w, u):
    if family is CopulaFamily.BVN:
        return _bvn_inv(w, u, _bvn_rho(theta))
    if family is CopulaFamily.FRANK:
        if theta > 0.0:
            return _frank_inv(w, u, theta)
        return 1.0 - _frank_inv(1.0 - w, u, -theta)
    return _clayton_inv(w, u, theta)


def _base_logpdf(family, theta, u, v):
    if family is CopulaFamily.BVN:
        return _bvn_logpdf(u, v, _bvn_rho(theta))
    if family is CopulaFamily.FRANK:
        if theta > 0.0:
            return _frank_logpdf(u, v, theta)
        return _frank_logpdf(u, 1.0 - v, -theta)
    return _clayton_logpdf(u, v, theta)


# ---------------------------------------------------------------------------
# Public evaluation with rotations


def _check_unit(*arrays):
    out = []
    for a in arrays:
        a = np.asarray(a, dtype=float)
        if np.any(~(a > 0.0)) or np.any(~(a < 1.0)):
            raise DomainError("copula arguments must lie strictly inside (0, 1)")
        out.append(a)
    return out


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def _base_family(family):
    return CopulaFamily.CLAYTON0 if family.is_clayton else family


def ccdf(spec: CopulaSpec, v, u):
    """``P(V <= v | U = u)``."""
    v, u = _check_unit(v, u)
    if spec.is_independence:
        return _out(np.broadcast_to(v, np.broadcast(v, u).shape).copy())
    fam, base, th = spec.family, _base_family(spec.family), spec.theta
    if fam is CopulaFamily.CLAYTON90:
        res = _base_ccdf(base, th, v, 1.0 - u)
    elif fam is CopulaFamily.CLAYTON180:
        res = 1.0 - _base_ccdf(base, th, 1.0 - v, 1.0 - u)
    elif fam is CopulaFamily.CLAYTON270:
        res = 1.0 - _base_ccdf(base, th, 1.0 - v, u)
    else:
        res = _base_ccdf(base, th, v, u)
    return _out(res)


def inv_ccdf(spec: CopulaSpec, w, u):
    """Inverse of :func:`ccdf` in its first argument: the w-quantile of V given U = u."""
    w, u = _check_unit(w, u)
    if spec.is_independence:
        return _out(np.broadcast_to(w, np.broadcast(w, u).shape).copy())
    fam, base, th = spec.family, _base_family(spec.family), spec.theta
    if fam is CopulaFamily.CLAYTON90:
        res = _base_inv(base, th, w, 1.0 - u)
    elif fam is CopulaFamily.CLAYTON180:
        res = 1.0 - _base_inv(base, th, 1.0 - w, 1.0 - u)
    elif fam is CopulaFamily.CLAYTON270:
        res = 1.0 - _base_inv(base, th, 1.0 - w, u)
    else:
        res = _base_inv(base, th, w, u)
    return _out(res)


def _swapped(spec: CopulaSpec) -> CopulaSpec:
    # Copula of (V, U): exchangeable families are unchanged, 90 <-> 270
    if spec.family is CopulaFamily.CLAYTON90:
        return CopulaSpec(CopulaFamily.CLAYTON270, spec.theta)
    if spec.family is CopulaFamily.CLAYTON270:
        return CopulaSpec(CopulaFamily.CLAYTON90, spec.theta)
    return spec


def ccdf_given_second(spec: CopulaSpec, u, v):
    """``P(U <= u | V = v)``."""
    return ccdf(_swapped(spec), u, v)


def inv_ccdf_given_second(spec: CopulaSpec, w, v):
    """The w-quantile of U given V = v."""
    return inv_ccdf(_swapped(spec), w, v)


def log_density(spec: CopulaSpec, u, v):
    u, v = _check_unit(u, v)
    if spec.is_independence:
        return _out(np.zeros(np.broadcast(u, v).shape))
    fam, base, th = spec.family, _base_family(spec.family), spec.theta
    if fam is CopulaFamily.CLAYTON90:
        u = 1.0 - u
    elif fam is CopulaFamily.CLAYTON180:
        u, v = 1.0 - u, 1.0 - v
    elif fam is CopulaFamily.CLAYTON270:
        v = 1.0 - v
    return _out(_base_logpdf(base, th, u, v))


# ---------------------------------------------------------------------------
# Sampling

_U_MIN = np.finfo(float).tiny
_U_MAX = 1.0 - np.finfo(float).epsneg


def _uniforms(rng: np.random.Generator, size):
    return np.clip(rng.random(size), _U_MIN, _U_MAX)


def sample(spec: CopulaSpec, size: int, rng: np.random.Generator):
    """Draw ``size`` pairs by the conditional method; returns ``(u1, u2)`` arrays."""
    u1 = _uniforms(rng, size)
    w = _uniforms(rng, size)
    u2 = np.clip(np.asarray(inv_ccdf(spec, w, u1)), _U_MIN, _U_MAX)
    return u1, u2


def sample_pair(spec: CopulaSpec, rng: np.random.Generator) -> tuple[float, float]:
    u1, u2 = sample(spec, 1, rng)
    return float(u1[0]), float(u2[0])
