"""Numpy implementation of the quadrature sums (fallback backend)."""

import numpy as np
from scipy.special import logsumexp


def _terms(count, logp):
    with np.errstate(invalid="ignore"):
        return np.where(count == 0.0, 0.0, count * logp)


def study_loglik_2d(lp1, lq1, lp2, lq2, logw, y1, m1, y2, m2, logc):
    a1 = _terms(y1[:, None], lp1[None, :]) + _terms(m1[:, None], lq1[None, :])
    a2 = _terms(y2[:, None, None], lp2[None]) + _terms(m2[:, None, None], lq2[None])
    with np.errstate(divide="ignore", invalid="ignore"):
        inner = logsumexp(a2 + logw[None, None, :], axis=2)
        inner = np.where(np.isneginf(np.max(a2, axis=2)), -np.inf, inner)
        t = logw[None, :] + a1 + inner
        out = logsumexp(t, axis=1)
        out = np.where(np.isneginf(np.max(t, axis=1)), -np.inf, out)
    return logc + out


def study_loglik_1d(lp, lq, logw, y, m, logc):
    t = logw[None, :] + _terms(y[:, None], lp[None, :]) + _terms(m[:, None], lq[None, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        out = logsumexp(t, axis=1)
        out = np.where(np.isneginf(np.max(t, axis=1)), -np.inf, out)
    return logc + out
