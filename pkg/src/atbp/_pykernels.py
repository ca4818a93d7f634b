"""Pure numpy versions of the Monte Carlo kernels.

Draw order matches ``atbp._ckernels``: replicate-major with the shared
draw first for :func:`posterior_sums`, unit-major for :func:`unit_means`.
Rejected draws are replaced from the stream after the main block, which is
the one place the two backends can diverge.
"""
from __future__ import annotations

import numpy as np

_MAX_REJECT = 1_000_000


def _hinv(u, fam, p0, p1, eps):
    with np.errstate(over="ignore", invalid="ignore"):
        if fam == 0:
            return u
        if fam == 1:
            return np.exp(u)
        if fam in (2, 3):
            e = u if p0 <= eps else np.arcsinh(p0 * u) / p0
            return np.exp(e) - p1 if fam == 3 else np.exp(e)
        return np.sinh((np.arcsinh(u) + p0) / p1)


def _target(u, fam, p0, p1, eps, tgt, z, alpha, hz):
    if tgt == 1:
        return (u < hz).astype(np.float64)
    if tgt == 2:
        out = np.zeros_like(u)
        below = u < hz
        if alpha == 0.0:
            out[below] = 1.0
        else:
            x = _hinv(u[below], fam, p0, p1, eps)
            out[below] = np.power((z - x) / z, alpha)
        return out
    return _hinv(u, fam, p0, p1, eps)


def _redraw(gen, vals, centre, scale, args):
    bad = ~np.isfinite(vals)
    rejected = 0
    while bad.any() and rejected <= _MAX_REJECT:
        idx = np.flatnonzero(bad)
        rejected += idx.size
        flat = vals.reshape(-1)
        w = gen.standard_normal(idx.size)
        flat[idx] = _target(centre.reshape(-1)[idx] + scale * w, *args)
        bad = ~np.isfinite(vals)
    return rejected


def posterior_sums(gen, theta, s, sigma, L, fam, p0, p1, tgt, z, alpha, hz, eps):
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    K = theta.size
    draws = gen.standard_normal((L, K + 1))
    centre = theta + s * draws[:, :1]
    args = (fam, p0, p1, eps, tgt, z, alpha, hz)
    vals = _target(centre + sigma * draws[:, 1:], *args)
    rejected = _redraw(gen, vals, centre, sigma, args)
    return vals.sum(axis=1), rejected


def unit_means(gen, theta, sd, L, fam, p0, p1, tgt, z, alpha, hz, eps):
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    K = theta.size
    draws = gen.standard_normal((K, L))
    centre = np.repeat(theta[:, None], L, axis=1)
    args = (fam, p0, p1, eps, tgt, z, alpha, hz)
    vals = _target(theta[:, None] + sd * draws, *args)
    rejected = _redraw(gen, vals, centre, sd, args)
    means = vals.mean(axis=1)
    variances = vals.var(axis=1, ddof=1) if L > 1 else np.zeros(K)
    return means, variances, rejected
