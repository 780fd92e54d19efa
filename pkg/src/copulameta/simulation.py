"""Monte Carlo study of estimator bias and efficiency.

Each replicate draws ``n_studies`` studies from a copula mixed model:

* total study size ``round(offset + Gamma(shape, rate))``;
* latent uniforms from the copula, transformed to accuracies through the
  true random-effect margin;
* diseased count ``Binomial(n, prevalence)``, the rest healthy;
* true positives and true negatives binomial given the accuracies.

The replicate is then fitted by every configured estimator.  Replicate ``r``
of a run with seed ``s`` uses the generator seeded by
``SeedSequence(s, spawn_key=(r,))``, so results do not depend on the number of
worker processes.
"""

from __future__ import annotations

import csv
import json
import math
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels
from .composite import fit_cl
from .copulas import CopulaFamily, CopulaSpec, sample, tau_range
from .errors import DomainError, InvalidArgumentError, NumericalFailure
from .likelihood import Dataset, FitResult, ParamVector, StudyRecord, fit_ml
from .numerics import MarginSpec, gauss_legendre, margin_quantile
from .synthesis import diagnostic_odds_ratio, dor_standard_error

__all__ = [
    "FitConfig",
    "SimScenario",
    "SimSummary",
    "SummaryRow",
    "ReplicateOutcome",
    "DEFAULT_CONFIGS",
    "draw_dataset",
    "draw_study",
    "replicate_rng",
    "run_replicate",
    "run_scenario",
    "parse_scenario_text",
    "load_scenarios",
    "THREADS_ENV",
]

THREADS_ENV = "COPULAMETA_THREADS"
STAT_PARAMS = ("pi1", "pi2", "delta1", "delta2", "dor")


@dataclass(frozen=True)
class FitConfig:
    """An estimator: ``ML`` with the scenario's copula family, or ``CL``."""

    method: str
    margin: MarginSpec

    def __post_init__(self):
        if self.method not in ("ML", "CL"):
            raise InvalidArgumentError(f"method must be 'ML' or 'CL', got {self.method!r}")

    @property
    def label(self) -> str:
        return f"{self.method}-{self.margin.name}"

    @classmethod
    def parse(cls, text: str) -> "FitConfig":
        method, _, margin = text.strip().partition("-")
        if not margin:
            raise InvalidArgumentError(f"fit configuration must look like 'ML-normal', got {text!r}")
        return cls(method.upper(), MarginSpec.parse(margin))


DEFAULT_CONFIGS = tuple(
    FitConfig(m, MarginSpec.parse(g)) for m in ("ML", "CL") for g in ("normal", "beta")
)


@dataclass(frozen=True)
class SimScenario:
    """Data-generating model plus the estimators to compare."""

    margin: MarginSpec
    copula: CopulaFamily
    truth: ParamVector
    n_studies: int
    replicates: int = 100
    prevalence: float = 0.534
    size_offset: float = 30.0
    size_shape: float = 1.2
    size_rate: float = 0.01
    quad_points: int = 15
    configs: tuple = DEFAULT_CONFIGS
    name: str = "scenario"

    def __post_init__(self):
        object.__setattr__(self, "copula", CopulaFamily.parse(self.copula))
        if isinstance(self.margin, str):
            object.__setattr__(self, "margin", MarginSpec.parse(self.margin))
        if self.n_studies < 2:
            raise InvalidArgumentError("n_studies must be at least 2")
        if self.replicates < 1:
            raise InvalidArgumentError("replicates must be positive")
        if not 0.0 < self.prevalence < 1.0:
            raise InvalidArgumentError("prevalence must lie in (0, 1)")
        if self.size_shape <= 0 or self.size_rate <= 0 or self.size_offset < 1:
            raise InvalidArgumentError("study-size distribution parameters are invalid")
        lo, hi = tau_range(self.copula)
        if not lo <= self.truth.tau <= hi:
            raise DomainError(f"tau={self.truth.tau} is not attainable by the {self.copula.value} copula")
        self.truth.validate(self.margin, self.copula)

    @property
    def copula_spec(self) -> CopulaSpec:
        return CopulaSpec.from_tau(self.copula, self.truth.tau)

    @property
    def true_dor(self) -> float:
        return diagnostic_odds_ratio(self.truth.pi1, self.truth.pi2)


def replicate_rng(seed: int, replicate: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replicate,)))


def draw_dataset(scenario: SimScenario, rng: np.random.Generator, n_studies: int | None = None) -> Dataset:
    """One simulated meta-analysis."""
    k = scenario.n_studies if n_studies is None else n_studies
    p = scenario.truth
    raw = scenario.size_offset + rng.gamma(scenario.size_shape, 1.0 / scenario.size_rate, size=k)
    n = np.floor(raw + 0.5).astype(np.int64)
    u1, u2 = sample(scenario.copula_spec, k, rng)
    x1 = np.asarray(margin_quantile(scenario.margin, u1, p.pi1, p.delta1), dtype=float).reshape(-1)
    x2 = np.asarray(margin_quantile(scenario.margin, u2, p.pi2, p.delta2), dtype=float).reshape(-1)
    n1 = rng.binomial(n, scenario.prevalence)
    n2 = n - n1
    y1 = rng.binomial(n1, np.clip(x1, 0.0, 1.0))
    y2 = rng.binomial(n2, np.clip(x2, 0.0, 1.0))
    return Dataset.from_arrays(y1, n1, y2, n2)


def draw_study(scenario: SimScenario, rng: np.random.Generator) -> StudyRecord:
    return draw_dataset(scenario, rng, n_studies=1).studies[0]


# ---------------------------------------------------------------------------
# Replicates


@dataclass
class ReplicateOutcome:
    """Estimates (pi1, pi2, delta1, delta2, dor) and their variances per config label."""

    replicate: int
    converged: dict
    estimates: dict
    variances: dict
    boundary: dict


def _fit(config: FitConfig, data: Dataset, scenario: SimScenario, rule) -> FitResult | None:
    try:
        if config.method == "ML":
            return fit_ml(data, config.margin, scenario.copula, rule)
        return fit_cl(data, config.margin, rule)
    except (NumericalFailure, InvalidArgumentError, DomainError, FloatingPointError):
        return None


def _summaries(fit: FitResult):
    e = fit.estimates
    est = np.array([e.pi1, e.pi2, e.delta1, e.delta2, np.nan])
    var = np.full(5, np.nan)
    if 0.0 < e.pi1 < 1.0 and 0.0 < e.pi2 < 1.0:
        est[4] = diagnostic_odds_ratio(e.pi1, e.pi2)
    if fit.covariance is not None:
        var[:4] = np.diag(fit.covariance)[:4]
        if np.isfinite(est[4]):
            var[4] = dor_standard_error(e.pi1, e.pi2, fit.covariance) ** 2
    return est, var


def run_replicate(scenario: SimScenario, seed: int, replicate: int) -> ReplicateOutcome:
    rng = replicate_rng(seed, replicate)
    data = draw_dataset(scenario, rng)
    rule = gauss_legendre(scenario.quad_points)
    out = ReplicateOutcome(replicate, {}, {}, {}, {})
    for cfg in scenario.configs:
        fit = _fit(cfg, data, scenario, rule)
        ok = fit is not None and fit.converged
        out.converged[cfg.label] = ok
        if fit is None:
            out.estimates[cfg.label] = np.full(5, np.nan)
            out.variances[cfg.label] = np.full(5, np.nan)
            out.boundary[cfg.label] = True
            continue
        est, var = _summaries(fit)
        out.estimates[cfg.label] = est
        out.variances[cfg.label] = var
        out.boundary[cfg.label] = fit.boundary_flag
    return out


def _replicate_task(args):
    scenario, seed, r, backend = args
    kernels.set_backend(backend)
    return run_replicate(scenario, seed, r)


def _resolve_workers(workers):
    if workers is None:
        env = os.environ.get(THREADS_ENV)
        if env is None or env.strip() == "":
            return 1
        try:
            workers = int(env)
        except ValueError:
            raise InvalidArgumentError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    if workers < 1:
        raise InvalidArgumentError("worker count must be positive")
    return workers


# ---------------------------------------------------------------------------
# Summary statistics


@dataclass(frozen=True)
class SummaryRow:
    parameter: str
    method: str
    margin: str
    subset: str
    n_used: int
    bias: float
    sd: float
    sqrt_vbar: float
    rmse: float


def _stats(est, var, truth):
    """Bias, population SD, root mean model variance, and RMSE."""
    n = est.size
    if n == 0:
        return math.nan, math.nan, math.nan, math.nan
    mean = float(np.mean(est))
    sd = float(np.std(est))
    v = var[np.isfinite(var)]
    sqrt_vbar = float(math.sqrt(np.mean(v))) if v.size else math.nan
    if truth is None or not math.isfinite(truth):
        return math.nan, sd, sqrt_vbar, math.nan
    bias = mean - truth
    rmse = float(math.sqrt(np.mean((est - truth) ** 2)))
    return bias, sd, sqrt_vbar, rmse


def _param_label(name: str, margin: MarginSpec) -> str:
    if name.startswith("delta"):
        return f"{margin.delta_name}{name[-1]}"
    return name


@dataclass
class SimSummary:
    """Aggregated results of one scenario run.

    ``rows`` hold statistics over two replicate subsets: ``common`` (every
    estimator converged) and ``own`` (that estimator converged).  Bias and
    RMSE of a spread parameter are blank when the fitted margin differs from
    the true one, because the parameters are not comparable.
    """

    scenario: SimScenario
    seed: int
    outcomes: list
    rows: list = field(default_factory=list)
    non_convergence: dict = field(default_factory=dict)
    wall_time: float = 0.0

    @classmethod
    def from_outcomes(cls, scenario: SimScenario, seed: int, outcomes: list, wall_time: float = 0.0) -> "SimSummary":
        labels = [c.label for c in scenario.configs]
        conv = {lab: np.array([o.converged[lab] for o in outcomes], dtype=bool) for lab in labels}
        common = np.logical_and.reduce([conv[lab] for lab in labels]) if labels else np.zeros(0, bool)
        t = scenario.truth
        rows = []
        for cfg in scenario.configs:
            lab = cfg.label
            est = np.array([o.estimates[lab] for o in outcomes]).reshape(-1, 5)
            var = np.array([o.variances[lab] for o in outcomes]).reshape(-1, 5)
            same_margin = cfg.margin == scenario.margin
            truths = [t.pi1, t.pi2, t.delta1 if same_margin else None, t.delta2 if same_margin else None, scenario.true_dor]
            for subset, mask in (("common", common), ("own", conv[lab])):
                for j, name in enumerate(STAT_PARAMS):
                    e = est[mask, j]
                    keep = np.isfinite(e)
                    bias, sd, sv, rmse = _stats(e[keep], var[mask, j][keep], truths[j])
                    rows.append(
                        SummaryRow(_param_label(name, cfg.margin), cfg.method, cfg.margin.name, subset, int(keep.sum()), bias, sd, sv, rmse)
                    )
        nonconv = {lab: int((~conv[lab]).sum()) for lab in labels}
        return cls(scenario, seed, outcomes, rows, nonconv, wall_time)

    def row(self, parameter: str, method: str, margin: str, subset: str = "common") -> SummaryRow:
        for r in self.rows:
            if (r.parameter, r.method, r.margin, r.subset) == (parameter, method, margin, subset):
                return r
        raise KeyError((parameter, method, margin, subset))

    def estimates(self, label: str, converged_only: bool = True) -> np.ndarray:
        est = np.array([o.estimates[label] for o in self.outcomes]).reshape(-1, 5)
        if converged_only:
            est = est[[o.converged[label] for o in self.outcomes]]
        return est

    def standard_errors(self, label: str, converged_only: bool = True) -> np.ndarray:
        var = np.array([o.variances[label] for o in self.outcomes]).reshape(-1, 5)
        if converged_only:
            var = var[[o.converged[label] for o in self.outcomes]]
        return np.sqrt(var)

    def write_csv(self, path, scale: float = 1.0, subset: str = "common"):
        """Write one statistics table; ``scale`` multiplies bias, SD, sqrt(Vbar) and RMSE."""

        def fmt(x):
            return "" if not math.isfinite(x) else repr(float(x) * scale)

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["parameter", "method", "margin", "bias", "sd", "sqrt_vbar", "rmse", "n_used"])
            for r in self.rows:
                if r.subset != subset:
                    continue
                w.writerow([r.parameter, r.method, r.margin, fmt(r.bias), fmt(r.sd), fmt(r.sqrt_vbar), fmt(r.rmse), r.n_used])

    def write_nonconvergence(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["config", "non_converged", "replicates"])
            for lab, k in self.non_convergence.items():
                w.writerow([lab, k, len(self.outcomes)])

    def manifest(self) -> dict:
        import scipy

        s = self.scenario
        return {
            "name": s.name,
            "seed": self.seed,
            "replicates": s.replicates,
            "n_studies": s.n_studies,
            "margin": s.margin.name,
            "copula": s.copula.value,
            "truth": dict(zip(ParamVector.NAMES, map(float, s.truth.as_array()))),
            "quad_points": s.quad_points,
            "configs": [c.label for c in s.configs],
            "non_convergence": self.non_convergence,
            "wall_time_seconds": self.wall_time,
            "backend": kernels.get_backend(),
            "versions": {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__},
        }

    def write(self, directory) -> dict:
        """Write scaled and raw tables, non-convergence counts and the manifest."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        stem = self.scenario.name
        paths = {
            "scaled": d / f"{stem}_x100.csv",
            "raw": d / f"{stem}_raw.csv",
            "nonconvergence": d / f"{stem}_nonconvergence.csv",
            "manifest": d / f"{stem}_manifest.json",
        }
        self.write_csv(paths["scaled"], scale=100.0)
        self.write_csv(paths["raw"], scale=1.0)
        self.write_nonconvergence(paths["nonconvergence"])
        paths["manifest"].write_text(json.dumps(self.manifest(), indent=2))
        return paths


def run_scenario(scenario: SimScenario, seed: int, workers: int | None = None, progress=None) -> SimSummary:
    """Run every replicate and aggregate.

    ``workers`` defaults to the ``COPULAMETA_THREADS`` environment variable,
    else 1.  The output is identical for any worker count.
    """
    workers = _resolve_workers(workers)
    start = time.perf_counter()
    reps = range(scenario.replicates)
    if workers == 1:
        outcomes = []
        for r in reps:
            outcomes.append(run_replicate(scenario, seed, r))
            if progress is not None:
                progress(r + 1, scenario.replicates)
    else:
        backend = kernels.get_backend()
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_replicate_task, [(scenario, seed, r, backend) for r in reps], chunksize=4))
    return SimSummary.from_outcomes(scenario, seed, outcomes, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# Scenario files

_FLOAT_KEYS = {"pi1", "pi2", "delta1", "delta2", "prevalence", "size_offset", "size_shape", "size_rate"}
_INT_KEYS = {"replicates", "quad_points", "seed"}
_LIST_KEYS = {"tau": float, "n_studies": int}
_TEXT_KEYS = {"name", "margin", "copula", "configs"}
_KNOWN = _FLOAT_KEYS | _INT_KEYS | set(_LIST_KEYS) | _TEXT_KEYS


def parse_scenario_text(text: str) -> tuple[list, int | None]:
    """Parse a flat ``key = value`` scenario description.

    ``tau`` and ``n_studies`` accept comma-separated lists; the result is
    their full cross product.  Returns ``(scenarios, seed)``.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise InvalidArgumentError(f"line {lineno}: expected key = value")
        values[key.strip()] = (lineno, val.strip())
    unknown = sorted(set(values) - _KNOWN)
    if unknown:
        raise InvalidArgumentError(f"unknown scenario keys: {', '.join(unknown)}")
    missing = sorted({"margin", "copula", "pi1", "pi2", "delta1", "delta2", "tau", "n_studies"} - set(values))
    if missing:
        raise InvalidArgumentError(f"missing scenario keys: {', '.join(missing)}")

    def conv(key, fn):
        lineno, val = values[key]
        try:
            return fn(val)
        except ValueError:
            raise InvalidArgumentError(f"line {lineno}: invalid value for {key!r}: {val!r}") from None

    kw = {k: conv(k, float) for k in _FLOAT_KEYS & set(values)}
    ints = {k: conv(k, int) for k in _INT_KEYS & set(values)}
    lists = {k: conv(k, lambda s, f=f: [f(x) for x in s.split(",") if x.strip()]) for k, f in _LIST_KEYS.items()}
    seed = ints.pop("seed", None)
    base = dict(
        margin=MarginSpec.parse(values["margin"][1]),
        copula=CopulaFamily.parse(values["copula"][1]),
        name=values.get("name", (0, "scenario"))[1],
        prevalence=kw.pop("prevalence", 0.534),
        size_offset=kw.pop("size_offset", 30.0),
        size_shape=kw.pop("size_shape", 1.2),
        size_rate=kw.pop("size_rate", 0.01),
        **ints,
    )
    if "configs" in values:
        base["configs"] = tuple(FitConfig.parse(c) for c in values["configs"][1].split(",") if c.strip())
    scenarios = []
    for n in lists["n_studies"]:
        for tau in lists["tau"]:
            truth = ParamVector(kw["pi1"], kw["pi2"], kw["delta1"], kw["delta2"], tau)
            name = f"{base['name']}_N{n}_tau{tau:+g}"
            scenarios.append(SimScenario(truth=truth, n_studies=n, **{**base, "name": name}))
    return scenarios, seed


def load_scenarios(path) -> tuple[list, int | None]:
    return parse_scenario_text(Path(path).read_text())


def with_replicates(scenario: SimScenario, replicates: int) -> SimScenario:
    return replace(scenario, replicates=replicates)
