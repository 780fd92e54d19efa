"""Compare the compiled and numpy kernel backends.

Times the raw quadrature sum and a full likelihood evaluation for both margin
types, then one complete ML fit.  Run with ``python benchmarks/bench_kernels.py``.
"""

import argparse
import timeit

import numpy as np

from copulameta import kernels
from copulameta.likelihood import ParamVector, fit_ml, negative_loglik
from copulameta.numerics import MarginSpec, gauss_legendre
from copulameta.simulation import SimScenario, draw_dataset


def _kernel_inputs(rng, order, studies):
    x1 = rng.uniform(0.01, 0.99, order)
    x2 = rng.uniform(0.01, 0.99, (order, order))
    n = rng.integers(30, 300, (2, studies)).astype(float)
    y = np.floor(n * rng.uniform(0.5, 0.95, (2, studies)))
    logw = np.log(np.full(order, 1.0 / order))
    return np.log(x1), np.log1p(-x1), np.log(x2), np.log1p(-x2), logw, y[0], n[0] - y[0], y[1], n[1] - y[1], np.zeros(studies)


def _time(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--studies", type=int, default=20)
    ap.add_argument("--order", type=int, default=15)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    kin = _kernel_inputs(rng, args.order, args.studies)
    normal, beta = MarginSpec.parse("normal"), MarginSpec.parse("beta")
    sc_n = SimScenario(normal, "bvn", ParamVector(0.79, 0.91, 0.43, 1.83, -0.5), args.studies)
    sc_b = SimScenario(beta, "bvn", ParamVector(0.76, 0.81, 0.03, 0.28, -0.5), args.studies)
    d_n, d_b = draw_dataset(sc_n, rng), draw_dataset(sc_b, rng)
    rule = gauss_legendre(args.order)

    cases = {
        "kernel sum": (lambda: kernels.study_loglik_2d(*kin), 200),
        "loglik normal": (lambda: negative_loglik(d_n, sc_n.truth, normal, "bvn", rule), 50),
        "loglik beta": (lambda: negative_loglik(d_b, sc_b.truth, beta, "bvn", rule), 20),
        "ML fit normal": (lambda: fit_ml(d_n, normal, "bvn", rule), 1),
    }
    backends = kernels.available_backends()
    previous = kernels.get_backend()
    results = {}
    try:
        for name in backends:
            kernels.set_backend(name)
            for case, (fn, number) in cases.items():
                results[case, name] = _time(fn, args.repeat, number)
    finally:
        kernels.set_backend(previous)

    print(f"{args.studies} studies, {args.order} nodes per axis; best of {args.repeat}")
    print(f"{'case':<16s}" + "".join(f"{b:>14s}" for b in backends) + ("   speed-up" if len(backends) > 1 else ""))
    for case in cases:
        row = f"{case:<16s}" + "".join(f"{results[case, b] * 1e3:>11.3f} ms" for b in backends)
        if len(backends) > 1:
            row += f"   {results[case, 'python'] / results[case, 'compiled']:8.2f}x"
        print(row)


if __name__ == "__main__":
    main()
