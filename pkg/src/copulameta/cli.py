"""Command-line interface: ``fit``, ``simulate`` and ``sroc``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .composite import fit_cl
from .copulas import CopulaFamily
from .errors import DomainError, InvalidArgumentError, InvalidStateError, NumericalFailure
from .likelihood import DEFAULT_QUAD_POINTS, Dataset, FitResult, StudyRecord, fit_ml
from .numerics import MarginSpec, gauss_legendre
from .simulation import THREADS_ENV, load_scenarios, run_scenario, with_replicates
from .synthesis import (
    DEFAULT_QUANTILES,
    Direction,
    dependence_near_countermonotonic,
    fit_dor,
    predictive_levels,
    quantile_curve,
    random_effects_density,
    summary_point,
)

SCHEMA_VERSION = 1
CSV_HEADER = ("study", "tp", "n_diseased", "tn", "n_healthy")
ALL_FAMILIES = tuple(CopulaFamily)
ALL_MARGINS = ("normal", "beta")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3
EXIT_NO_CONVERGENCE = 4


class InputError(Exception):
    """Bad user input; maps to exit code 2."""


# ---------------------------------------------------------------------------
# Data ingestion


def parse_dataset_text(text: str, label: str = "dataset") -> Dataset:
    """Parse the ``study,tp,n_diseased,tn,n_healthy`` CSV format."""
    rows = []
    header_seen = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = next(csv.reader([line]))
        fields = [f.strip() for f in fields]
        if not header_seen:
            if tuple(f.lower() for f in fields) != CSV_HEADER:
                raise InputError(f"line {lineno}: expected header {','.join(CSV_HEADER)}")
            header_seen = True
            continue
        if len(fields) != len(CSV_HEADER):
            raise InputError(f"line {lineno}: expected {len(CSV_HEADER)} columns, found {len(fields)}")
        counts = []
        for col, (name, val) in enumerate(zip(CSV_HEADER[1:], fields[1:]), start=2):
            try:
                k = int(val)
            except ValueError:
                raise InputError(f"line {lineno}, column {col} ({name}): not an integer: {val!r}") from None
            if k < 0:
                raise InputError(f"line {lineno}, column {col} ({name}): negative count {k}")
            counts.append(k)
        tp, n1, tn, n2 = counts
        study = fields[0]
        if tp > n1:
            raise InputError(f"line {lineno}, column 2 (tp): {tp} exceeds n_diseased {n1}")
        if tn > n2:
            raise InputError(f"line {lineno}, column 4 (tn): {tn} exceeds n_healthy {n2}")
        if n1 == 0 and n2 == 0:
            raise InputError(f"line {lineno}: study {study!r} has no diseased and no healthy subjects")
        rows.append((study, StudyRecord(tp, n1, tn, n2)))
    if not header_seen:
        raise InputError("empty input: no header found")
    if len(rows) < 2:
        raise InputError("at least two studies are needed")
    return Dataset(tuple(r for _, r in rows), labels=tuple(s for s, _ in rows))


def read_dataset(path) -> Dataset:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    return parse_dataset_text(text, label=p.stem)


def format_dataset(data: Dataset) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for i, s in enumerate(data.studies):
        w.writerow([data.label(i), s.y1, s.n1, s.y2, s.n2])
    return out.getvalue()


def _dataset_json(data: Dataset, label: str) -> dict:
    return {
        "label": label,
        "studies": [
            {"study": data.label(i), "tp": s.y1, "n_diseased": s.n1, "tn": s.y2, "n_healthy": s.n2}
            for i, s in enumerate(data.studies)
        ],
    }


def _dataset_from_json(d: dict) -> Dataset:
    st = d["studies"]
    return Dataset(
        tuple(StudyRecord(s["tp"], s["n_diseased"], s["tn"], s["n_healthy"]) for s in st),
        labels=tuple(str(s["study"]) for s in st),
    )


# ---------------------------------------------------------------------------
# fit


def _select(value: str, universe, parse):
    if value.strip().lower() == "all":
        return list(universe)
    out = []
    for item in value.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            out.append(parse(item))
        except (InvalidArgumentError, ValueError) as exc:
            raise InputError(str(exc)) from None
    if not out:
        raise InputError("empty selection")
    return out


def _fit_task(args):
    kind, data, margin, family, order = args
    rule = gauss_legendre(order)
    if kind == "ML":
        return fit_ml(data, margin, family, rule)
    return fit_cl(data, margin, rule)


def _workers() -> int:
    env = os.environ.get(THREADS_ENV, "").strip()
    if not env:
        return 1
    try:
        return max(1, int(env))
    except ValueError:
        raise InputError(f"{THREADS_ENV} must be an integer, got {env!r}") from None


def _entry(fit: FitResult) -> dict:
    d = fit.to_dict()
    try:
        dor, se = fit_dor(fit)
    except DomainError:
        dor, se = None, None
    d["label"] = fit.label
    d["dor"] = dor
    d["dor_se"] = se
    return d


def rank_key(entry: dict):
    return (-entry["loglik"], int(bool(entry["boundary_flag"])), entry["copula"] or "", entry["margin"])


def build_report(data: Dataset, label: str, families, margins, method: str, order: int) -> dict:
    tasks = []
    if method in ("ml", "both"):
        tasks += [("ML", data, m, f, order) for m in margins for f in families]
    if method in ("cl", "both"):
        tasks += [("CL", data, m, None, order) for m in margins]
    workers = min(_workers(), max(len(tasks), 1))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            fits = list(pool.map(_fit_task, tasks))
    else:
        fits = [_fit_task(t) for t in tasks]
    ml = [_entry(f) for f in fits if f.method == "ML"]
    cl = [_entry(f) for f in fits if f.method == "CL"]
    ranked = sorted((e for e in ml if e["converged"]), key=rank_key)
    for i, e in enumerate(ranked, start=1):
        e["rank"] = i
    unconverged = sorted((e for e in ml if not e["converged"]), key=lambda e: (e["copula"], e["margin"]))
    return {
        "schema_version": SCHEMA_VERSION,
        "generator": f"copulameta {__version__}",
        "quad_points": order,
        "dataset": _dataset_json(data, label),
        "ml_fits": ranked,
        "ml_unconverged": unconverged,
        "cl_fits": cl,
        "best_model": ranked[0]["label"] if ranked else None,
    }


def _fmt(x, width=8, digits=3):
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return "-".rjust(width)
    return f"{x:{width}.{digits}f}"


def report_table(report: dict, per_block: int = 4) -> str:
    """Parameters as rows, one (Est., SE) column pair per model."""
    entries = report["ml_fits"] + report["ml_unconverged"] + report["cl_fits"]
    lines = [f"dataset: {report['dataset']['label']}  ({len(report['dataset']['studies'])} studies)"]
    if report["best_model"]:
        lines.append(f"best model by log-likelihood: {report['best_model']}")
    rows = ("pi1", "pi2", "delta1", "delta2", "tau")
    for start in range(0, len(entries), per_block):
        block = entries[start : start + per_block]
        lines.append("")
        lines.append(" " * 8 + "".join(f"{e['label']:>18s}" for e in block))
        lines.append(" " * 8 + "".join(f"{'Est.':>9s}{'SE':>9s}" for _ in block))
        for name in rows:
            cells = []
            for e in block:
                est = e["estimates"][name]
                se = e["std_errors"][name]
                if e["method"] == "CL" and name == "tau":
                    cells.append(f"{'0':>9s}{'-':>9s}")
                    continue
                cells.append(_fmt(est, 9) + _fmt(se, 9))
            pname = name if not name.startswith("delta") else ("spread" + name[-1])
            lines.append(f"{pname:<8s}" + "".join(cells))
        lines.append(f"{'dOR':<8s}" + "".join(_fmt(e["dor"], 9) + _fmt(e["dor_se"], 9) for e in block))
        lines.append(f"{'logL':<8s}" + "".join(_fmt(e["loglik"], 9, 2) + " " * 9 for e in block))
        flags = []
        for e in block:
            mark = "*" if e["boundary_flag"] else ""
            mark += "!" if not e["converged"] else ""
            flags.append(f"{mark:>18s}")
        if any(f.strip() for f in flags):
            lines.append(" " * 8 + "".join(flags))
    lines.append("")
    lines.append("* estimate on the boundary of the parameter space: standard errors unreliable")
    lines.append("! optimizer did not converge")
    return "\n".join(lines) + "\n"


def report_csv(report: dict) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["model", "method", "copula", "margin", "parameter", "estimate", "se", "loglik", "converged", "boundary_flag"])
    for e in report["ml_fits"] + report["ml_unconverged"] + report["cl_fits"]:
        params = list(e["estimates"].items()) + [("dor", e["dor"])]
        for name, est in params:
            se = e["dor_se"] if name == "dor" else e["std_errors"][name]
            w.writerow(
                [
                    e["label"],
                    e["method"],
                    e["copula"] or "",
                    e["margin"],
                    name,
                    "" if est is None else repr(float(est)),
                    "" if se is None else repr(float(se)),
                    repr(float(e["loglik"])),
                    int(e["converged"]),
                    int(e["boundary_flag"]),
                ]
            )
    return out.getvalue()


def _emit(text: str, output_dir, filename: str):
    if output_dir is None:
        sys.stdout.write(text)
        return
    d = Path(output_dir)
    d.mkdir(parents=True, exist_ok=True)
    (d / filename).write_text(text)


def _report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=False) + "\n"


def cmd_fit(args) -> int:
    data = read_dataset(args.input)
    label = Path(args.input).stem
    families = _select(args.copula, ALL_FAMILIES, CopulaFamily.parse)
    margins = _select(args.margin, [MarginSpec.parse(m) for m in ALL_MARGINS], MarginSpec.parse)
    report = build_report(data, label, families, margins, args.method, args.quad_points)
    if args.output is not None:
        _emit(_report_json(report), args.output, f"{label}_report.json")
    if args.format == "json":
        if args.output is None:
            sys.stdout.write(_report_json(report))
    elif args.format == "table":
        sys.stdout.write(report_table(report))
    else:
        sys.stdout.write(report_csv(report))
    if not report["ml_fits"] and not any(e["converged"] for e in report["cl_fits"]):
        print("error: no model converged", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    try:
        scenarios, file_seed = load_scenarios(args.scenario)
    except OSError as exc:
        raise InputError(f"cannot read {args.scenario}: {exc.strerror}") from None
    seed = args.seed if args.seed is not None else (file_seed if file_seed is not None else 0)
    out_dir = Path(args.output) if args.output is not None else Path(".")
    for sc in scenarios:
        if args.replicates is not None:
            sc = with_replicates(sc, args.replicates)
        if args.quad_points_given:
            from dataclasses import replace

            sc = replace(sc, quad_points=args.quad_points)
        summary = run_scenario(sc, seed)
        paths = summary.write(out_dir)
        if args.format == "table":
            sys.stdout.write(f"{sc.name}: non-convergence {summary.non_convergence}\n")
            sys.stdout.write(paths["scaled"].read_text())
        elif args.format == "csv":
            sys.stdout.write(paths["raw"].read_text())
        else:
            sys.stdout.write(json.dumps(summary.manifest(), indent=2) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sroc


def _load_report(path) -> dict:
    try:
        report = json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} is not valid JSON: {exc.msg} (line {exc.lineno})") from None
    if report.get("schema_version") != SCHEMA_VERSION:
        raise InputError(f"unsupported report schema version {report.get('schema_version')!r}")
    return report


def _pick_model(report: dict, label):
    if not report.get("ml_fits"):
        if report.get("cl_fits"):
            raise InputError(
                "the report holds only composite-likelihood fits; an SROC curve needs an estimated "
                "dependence, which the composite likelihood fixes at independence"
            )
        raise InputError("the report holds no converged ML fit")
    if label is None:
        return report["ml_fits"][0]
    for e in report["ml_fits"]:
        if e["label"] == label:
            return e
    raise InputError(f"model {label!r} not among the converged ML fits")


def _curve_rows(curves) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["x2", "x1", "q", "direction"])
    for c in curves:
        for x1, x2 in c.points:
            w.writerow([repr(float(x2)), repr(float(x1)), repr(c.q), c.direction.value])
    return out.getvalue()


def _density_rows(grid) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["x1", "x2", "density", "scale"])
    for i, a in enumerate(grid.grid_x1):
        for j, b in enumerate(grid.grid_x2):
            w.writerow([repr(float(a)), repr(float(b)), repr(float(grid.density[i, j])), grid.scale])
    return out.getvalue()


def _svg(curves, studies, point, contours, title: str) -> str:
    """Single-file plot; sensitivity up, specificity decreasing to the right."""
    W, H, M = 480, 480, 50

    def px(spec, sens):
        return M + (1.0 - spec) * (W - 2 * M), H - M - sens * (H - 2 * M)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<rect x="{M}" y="{M}" width="{W - 2 * M}" height="{H - 2 * M}" fill="none" stroke="black"/>',
        f'<text x="{W / 2}" y="{M / 2}" text-anchor="middle" font-size="14">{title}</text>',
        f'<text x="{W / 2}" y="{H - 12}" text-anchor="middle" font-size="12">specificity</text>',
        f'<text x="14" y="{H / 2}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {H / 2})">sensitivity</text>',
    ]
    for t in (0.0, 0.25, 0.5, 0.75, 1.0):
        x, _ = px(t, 0.0)
        _, y = px(1.0, t)
        parts.append(f'<text x="{x:.1f}" y="{H - M + 16}" text-anchor="middle" font-size="10">{t:g}</text>')
        parts.append(f'<text x="{M - 6}" y="{y + 3:.1f}" text-anchor="end" font-size="10">{t:g}</text>')
    for segs in contours:
        for seg in segs:
            pts = " ".join("%.2f,%.2f" % px(s2, s1) for s1, s2 in seg)
            parts.append(f'<polyline points="{pts}" fill="none" stroke="grey" stroke-dasharray="4 3"/>')
    styles = {0.5: "stroke-width:2", 0.01: "stroke-width:1", 0.99: "stroke-width:1"}
    colors = {Direction.X1_ON_X2: "black", Direction.X2_ON_X1: "red"}
    for c in curves:
        pts = " ".join("%.2f,%.2f" % px(s2, s1) for s1, s2 in c.points)
        style = styles.get(c.q, "stroke-width:1")
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{colors[c.direction]}" style="{style}"/>')
    for s1, s2 in studies:
        x, y = px(s2, s1)
        parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="2.5" fill="none" stroke="blue"/>')
    x, y = px(point[1], point[0])
    parts.append(f'<rect x="{x - 4:.2f}" y="{y - 4:.2f}" width="8" height="8" fill="black"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _contour_segments(grid, levels):
    import contourpy

    from scipy import special

    gen = contourpy.contour_generator(grid.grid_x2, grid.grid_x1, grid.density)
    out = []
    for lev in levels:
        segs = []
        for line in gen.lines(lev):
            pts = np.asarray(line)
            if grid.scale == "logit":
                pts = special.expit(pts)
            segs.append([(float(p[1]), float(p[0])) for p in pts])
        out.append(segs)
    return out


def cmd_sroc(args) -> int:
    report = _load_report(args.report)
    entry = _pick_model(report, args.model)
    fit = FitResult.from_dict(entry)
    data = _dataset_from_json(report["dataset"])
    params = fit.estimates
    qs = DEFAULT_QUANTILES if args.quantiles is None else tuple(float(q) for q in args.quantiles.split(","))
    out = Path(args.output) if args.output is not None else Path(".")
    out.mkdir(parents=True, exist_ok=True)
    strong = dependence_near_countermonotonic(params.tau)
    if strong:
        print(
            f"warning: |tau| = {abs(params.tau):.3f} > 0.99; predictive region and outer quantile curves "
            "are not meaningful and are omitted",
            file=sys.stderr,
        )
        qs = (0.5,)
    curves = []
    for q in qs:
        pair = [quantile_curve(params, fit.margin, fit.family, d, q) for d in Direction]
        curves += pair
        (out / f"curve_q{q:g}.csv").write_text(_curve_rows(pair))
    y1, n1, y2, n2 = data.arrays()
    with np.errstate(invalid="ignore", divide="ignore"):
        s1, s2 = y1 / n1, y2 / n2
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["study", "sensitivity", "specificity"])
    for i in range(len(data)):
        w.writerow([data.label(i), "" if not np.isfinite(s1[i]) else repr(float(s1[i])), "" if not np.isfinite(s2[i]) else repr(float(s2[i]))])
    (out / "studies.csv").write_text(buf.getvalue())
    point = summary_point(fit)
    (out / "summary_point.csv").write_text(f"sensitivity,specificity\n{point[0]!r},{point[1]!r}\n")
    contours = []
    if not strong:
        try:
            grid = random_effects_density(params, fit.margin, fit.family, scale=args.scale)
        except DomainError as exc:
            print(f"warning: density grid skipped: {exc}", file=sys.stderr)
        else:
            (out / "density.csv").write_text(_density_rows(grid))
            if args.svg:
                contours = _contour_segments(grid, predictive_levels(grid, (0.5, 0.9, 0.99)))
    if args.svg:
        keep = np.isfinite(s1) & np.isfinite(s2)
        svg = _svg(curves, list(zip(s1[keep], s2[keep])), point, contours, entry["label"])
        (out / "sroc.svg").write_text(svg)
    sys.stdout.write(f"wrote SROC artifacts for {entry['label']} to {out}\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def _common(parser, suppress: bool):
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--quad-points", type=int, default=d if suppress else DEFAULT_QUAD_POINTS, help="Gauss-Legendre order (default 15)")
    parser.add_argument("--seed", type=int, default=d, help="master seed")
    parser.add_argument("--output", default=d, help="output directory")
    parser.add_argument("--format", choices=("json", "table", "csv"), default=d if suppress else "json")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="copulameta", description="Copula mixed models for diagnostic test accuracy meta-analysis")
    p.add_argument("--version", action="version", version=f"copulameta {__version__}")
    _common(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    _common(common, suppress=True)

    f = sub.add_parser("fit", parents=[common], help="fit copula mixed models and rank them")
    f.add_argument("input", help="CSV with columns study,tp,n_diseased,tn,n_healthy")
    f.add_argument("--method", choices=("ml", "cl", "both"), default="both")
    f.add_argument("--copula", default="all", help="comma list of families or 'all'")
    f.add_argument("--margin", default="all", help="comma list of margins (normal, beta, normal-probit, ...) or 'all'")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", parents=[common], help="run a simulation scenario file")
    s.add_argument("scenario", help="key = value scenario file")
    s.add_argument("--replicates", type=int, default=None, help="override the replicate count")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("sroc", parents=[common], help="emit SROC curves and the predictive region")
    r.add_argument("report", help="JSON report written by 'fit'")
    r.add_argument("--model", default=None, help="model label; default is the best-ranked ML fit")
    r.add_argument("--quantiles", default=None, help="comma list of quantile levels (default 0.01,0.5,0.99)")
    r.add_argument("--scale", choices=("natural", "logit"), default="natural", help="density grid scale")
    r.add_argument("--svg", action="store_true", help="also write sroc.svg")
    r.set_defaults(func=cmd_sroc)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    raw = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(raw)
    args.quad_points_given = any(a == "--quad-points" or a.startswith("--quad-points=") for a in raw)
    if args.quad_points < 1:
        print("error: --quad-points must be positive", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except (InputError, InvalidArgumentError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalFailure, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except InvalidStateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
