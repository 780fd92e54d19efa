"""Summaries of a fitted copula mixed model.

Diagnostic odds ratio, the summary operating point, copula quantile
regression curves for the SROC plot, and the fitted density of the
study-level (sensitivity, specificity) pair, which gives the predictive
region.

The diagnostic odds ratio here is the ratio of the sensitivity odds to the
specificity odds, ``[pi1 / (1 - pi1)] / [pi2 / (1 - pi2)]``.  That is the
quantity summarised in the simulation and application tables; it differs
from the textbook definition, which multiplies the two odds.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .copulas import CopulaFamily, CopulaSpec, inv_ccdf, inv_ccdf_given_second, log_density, tau_to_theta
from .errors import DomainError, InvalidArgumentError, InvalidStateError
from .likelihood import GAMMA_FLOOR, SIGMA_FLOOR, FitResult, ParamVector
from .numerics import MarginSpec, margin_cdf, margin_logpdf, margin_quantile

__all__ = [
    "Direction",
    "SrocCurve",
    "DensityGrid",
    "diagnostic_odds_ratio",
    "dor_standard_error",
    "fit_dor",
    "quantile_curve",
    "random_effects_density",
    "predictive_levels",
    "summary_point",
    "dependence_near_countermonotonic",
    "DEFAULT_QUANTILES",
]

DEFAULT_QUANTILES = (0.01, 0.5, 0.99)
COUNTERMONOTONIC_TAU = 0.99
# lower tail keeps full precision; upper tail is limited by the spacing of doubles below 1
_P_LO = 1e-300
_P_HI = float(np.nextafter(1.0, 0.0))


class Direction(str, enum.Enum):
    X1_ON_X2 = "x1_on_x2"
    X2_ON_X1 = "x2_on_x1"


def diagnostic_odds_ratio(pi1: float, pi2: float) -> float:
    if not (0.0 < pi1 < 1.0 and 0.0 < pi2 < 1.0):
        raise DomainError("sensitivity and specificity must lie in (0, 1)")
    return (pi1 / (1.0 - pi1)) / (pi2 / (1.0 - pi2))


def dor_standard_error(pi1: float, pi2: float, cov) -> float:
    """Delta-method standard error of the odds ratio.

    ``cov`` is the covariance of ``(pi1, pi2)``: either 2x2 or a full 5x5
    matrix in ParamVector order.  The variance is propagated on the log scale
    and mapped back.
    """
    cov = np.asarray(cov, dtype=float)
    c = cov[:2, :2]
    g = np.array([1.0 / (pi1 * (1.0 - pi1)), -1.0 / (pi2 * (1.0 - pi2))])
    var_log = float(g @ c @ g)
    if var_log < 0.0:
        raise InvalidArgumentError("covariance is not positive semi-definite")
    return diagnostic_odds_ratio(pi1, pi2) * math.sqrt(var_log)


def fit_dor(fit: FitResult) -> tuple[float, float | None]:
    """Odds ratio at the estimates and its standard error when available."""
    e = fit.estimates
    dor = diagnostic_odds_ratio(e.pi1, e.pi2)
    if fit.covariance is None:
        return dor, None
    return dor, dor_standard_error(e.pi1, e.pi2, fit.covariance)


def summary_point(fit: FitResult) -> tuple[float, float]:
    """(sensitivity, specificity) at the meta-analytic estimates."""
    if not fit.converged:
        raise InvalidStateError("summary point requested for an unconverged fit")
    return fit.estimates.pi1, fit.estimates.pi2


def dependence_near_countermonotonic(tau: float) -> bool:
    return abs(tau) > COUNTERMONOTONIC_TAU


# ---------------------------------------------------------------------------
# Quantile regression curves


@dataclass(frozen=True, eq=False)
class SrocCurve:
    """Conditional-quantile curve; ``points[:, 0]`` sensitivity, ``points[:, 1]`` specificity."""

    direction: Direction
    q: float
    points: np.ndarray
    scale: str = "natural"

    @property
    def conditioning(self) -> np.ndarray:
        return self.points[:, 1] if self.direction is Direction.X1_ON_X2 else self.points[:, 0]

    @property
    def response(self) -> np.ndarray:
        return self.points[:, 0] if self.direction is Direction.X1_ON_X2 else self.points[:, 1]

    def on_scale(self, scale: str) -> "SrocCurve":
        if scale == self.scale:
            return self
        if self.scale == "natural" and scale == "logit":
            return SrocCurve(self.direction, self.q, special.logit(self.points), "logit")
        if self.scale == "logit" and scale == "natural":
            return SrocCurve(self.direction, self.q, special.expit(self.points), "natural")
        raise InvalidArgumentError(f"unknown scale {scale!r}")


def _margins(margin) -> tuple[MarginSpec, MarginSpec]:
    if isinstance(margin, (MarginSpec, str)):
        margin = (margin, margin)
    return tuple(MarginSpec.parse(m) if isinstance(m, str) else m for m in margin)


def _copula(copula, tau: float) -> CopulaSpec:
    family = copula.family if isinstance(copula, CopulaSpec) else CopulaFamily.parse(copula)
    return CopulaSpec(family, tau_to_theta(family, tau))


def _clip_unit(x):
    return np.clip(x, _P_LO, _P_HI)


def default_grid(n: int = 101) -> np.ndarray:
    return np.linspace(0.01, 0.99, n)


def quantile_curve(
    params: ParamVector,
    margin,
    copula,
    direction=Direction.X1_ON_X2,
    q: float = 0.5,
    grid=None,
    scale: str = "natural",
) -> SrocCurve:
    """q-quantile regression curve of one latent accuracy on the other.

    ``X1_ON_X2`` gives the sensitivity curve ``x1(x2, q)`` over a grid of
    specificities; ``X2_ON_X1`` the reverse.  ``copula`` names the family,
    with dependence taken from ``params.tau``.
    """
    if not 0.0 < q < 1.0:
        raise DomainError("quantile level must lie in (0, 1)")
    direction = Direction(direction)
    m1, m2 = _margins(margin)
    spec = _copula(copula, params.tau)
    x = default_grid() if grid is None else np.asarray(grid, dtype=float)
    if np.any((x <= 0.0) | (x >= 1.0)):
        raise DomainError("grid values must lie in (0, 1)")
    x = np.sort(x)
    if direction is Direction.X1_ON_X2:
        v = _clip_unit(margin_cdf(m2, x, params.pi2, params.delta2))
        u = _clip_unit(inv_ccdf_given_second(spec, np.full_like(v, q), v))
        x1 = _clip_unit(margin_quantile(m1, u, params.pi1, params.delta1))
        pts = np.column_stack([x1, x])
    else:
        u = _clip_unit(margin_cdf(m1, x, params.pi1, params.delta1))
        v = _clip_unit(inv_ccdf(spec, np.full_like(u, q), u))
        x2 = _clip_unit(margin_quantile(m2, v, params.pi2, params.delta2))
        pts = np.column_stack([x, x2])
    curve = SrocCurve(direction, float(q), pts, "natural")
    return curve.on_scale(scale)


# ---------------------------------------------------------------------------
# Random-effects density


@dataclass(frozen=True, eq=False)
class DensityGrid:
    """``density[i, j]`` is the density at ``(grid_x1[i], grid_x2[j])``."""

    grid_x1: np.ndarray
    grid_x2: np.ndarray
    density: np.ndarray
    scale: str = "natural"

    def mass(self) -> float:
        return float(np.trapezoid(np.trapezoid(self.density, self.grid_x2, axis=1), self.grid_x1))


def _check_spread(m: MarginSpec, delta: float):
    floor = GAMMA_FLOOR if m.is_beta else SIGMA_FLOOR
    if not delta > floor:
        raise DomainError(f"between-study spread {delta} is at or below its floor {floor}")


def _default_axis(m: MarginSpec, pi, delta, n, scale):
    lo = margin_quantile(m, 1e-4, pi, delta)
    hi = margin_quantile(m, 1.0 - 1e-4, pi, delta)
    lo, hi = float(np.clip(lo, 1e-6, 1 - 1e-6)), float(np.clip(hi, 1e-6, 1 - 1e-6))
    if scale == "logit":
        return np.linspace(special.logit(lo), special.logit(hi), n)
    return np.linspace(lo, hi, n)


def random_effects_density(params: ParamVector, margin, copula, grid_spec=None, scale: str = "natural") -> DensityGrid:
    """Joint density of the latent (sensitivity, specificity) pair.

    ``grid_spec`` is ``None`` (default axes covering the central 99.98 % of
    each margin), an integer number of points per axis, or a pair of axis
    arrays given on the requested ``scale`` (``"natural"`` or ``"logit"``).
    """
    if scale not in ("natural", "logit"):
        raise InvalidArgumentError(f"unknown scale {scale!r}")
    m1, m2 = _margins(margin)
    _check_spread(m1, params.delta1)
    _check_spread(m2, params.delta2)
    spec = _copula(copula, params.tau)
    if grid_spec is None or isinstance(grid_spec, (int, np.integer)):
        n = 121 if grid_spec is None else int(grid_spec)
        a1 = _default_axis(m1, params.pi1, params.delta1, n, scale)
        a2 = _default_axis(m2, params.pi2, params.delta2, n, scale)
    else:
        a1, a2 = (np.asarray(a, dtype=float) for a in grid_spec)
    if np.any(np.diff(a1) <= 0) or np.any(np.diff(a2) <= 0):
        raise InvalidArgumentError("grid axes must be strictly increasing")
    x1 = special.expit(a1) if scale == "logit" else a1
    x2 = special.expit(a2) if scale == "logit" else a2
    if np.any((x1 <= 0) | (x1 >= 1)) or np.any((x2 <= 0) | (x2 >= 1)):
        raise DomainError("density grid must lie inside the unit square")
    lf1 = np.asarray(margin_logpdf(m1, x1, params.pi1, params.delta1))
    lf2 = np.asarray(margin_logpdf(m2, x2, params.pi2, params.delta2))
    if scale == "logit":
        lf1 = lf1 + np.log(x1) + np.log1p(-x1)
        lf2 = lf2 + np.log(x2) + np.log1p(-x2)
    u = _clip_unit(margin_cdf(m1, x1, params.pi1, params.delta1))
    v = _clip_unit(margin_cdf(m2, x2, params.pi2, params.delta2))
    lc = log_density(spec, u[:, None], v[None, :])
    dens = np.exp(lc + lf1[:, None] + lf2[None, :])
    return DensityGrid(a1, a2, dens, scale)


def predictive_levels(grid: DensityGrid, masses=(0.5, 0.9, 0.99)) -> list[float]:
    """Density thresholds whose super-level sets hold the given probability masses."""
    d = grid.density
    w1 = np.gradient(grid.grid_x1)
    w2 = np.gradient(grid.grid_x2)
    cell = (w1[:, None] * w2[None, :]).ravel()
    flat = d.ravel()
    order = np.argsort(flat)[::-1]
    cum = np.cumsum(flat[order] * cell[order])
    cum = cum / cum[-1]
    levels = []
    for m in masses:
        k = int(np.searchsorted(cum, m))
        levels.append(float(flat[order[min(k, len(order) - 1)]]))
    return levels
