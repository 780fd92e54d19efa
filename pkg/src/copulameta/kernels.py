"""Backend selection for the likelihood quadrature sums.

The compiled extension is used when it was built; otherwise the numpy
implementation is selected at import.  ``set_backend`` switches at run
time, which the tests and the benchmark use to compare the two.
"""

import numpy as np

from . import _pykernels
from .errors import InvalidArgumentError

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_IMPLS = {"python": _pykernels}
if _ckernels is not None:
    _IMPLS["compiled"] = _ckernels

_active = _IMPLS.get("compiled", _pykernels)


def available_backends():
    return sorted(_IMPLS)


def get_backend():
    return "compiled" if _active is _ckernels and _ckernels is not None else "python"


def set_backend(name):
    """Select ``"compiled"``, ``"python"`` or ``"auto"``; returns the previous name."""
    global _active
    previous = get_backend()
    if name == "auto":
        name = "compiled" if "compiled" in _IMPLS else "python"
    if name not in _IMPLS:
        raise InvalidArgumentError(f"backend {name!r} is not available (have {available_backends()})")
    _active = _IMPLS[name]
    return previous


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def study_loglik_2d(lp1, lq1, lp2, lq2, logw, y1, m1, y2, m2, logc):
    """Per-study log of the bivariate quadrature sum.

    ``lp1``/``lq1`` hold log x and log(1 - x) at the first-margin nodes,
    ``lp2``/``lq2`` the same on the (node, node) grid of the second margin.
    ``m = n - y`` are the failure counts and ``logc`` the summed log
    binomial coefficients per study.
    """
    return _active.study_loglik_2d(
        _c(lp1), _c(lq1), _c(lp2), _c(lq2), _c(logw), _c(y1), _c(m1), _c(y2), _c(m2), _c(logc)
    )


def study_loglik_1d(lp, lq, logw, y, m, logc):
    """Per-study log of the univariate quadrature sum."""
    return _active.study_loglik_1d(_c(lp), _c(lq), _c(logw), _c(y), _c(m), _c(logc))
