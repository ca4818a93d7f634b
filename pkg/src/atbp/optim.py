"""Derivative-free maximizers used for the transformation parameters."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConvergenceError

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
BOX_MARGIN = 1e-8


@dataclass
class Maximum:
    x: float | np.ndarray
    value: float
    iterations: int
    converged: bool
    width: float


def _checked(f, x):
    v = f(x)
    if not np.isfinite(v):
        raise ConvergenceError(f"objective is not finite ({v}) at {x!r}")
    return float(v)


def golden_section_max(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-4,
                       max_iter: int = 200) -> Maximum:
    """Maximize a unimodal ``f`` on ``[lo, hi]`` to within ``tol`` of the maximizer.

    The end points are compared with the final interior estimate, so a
    maximizer on the boundary is returned exactly.
    """
    if not lo < hi:
        raise ValueError(f"empty interval [{lo}, {hi}]")
    if tol <= 0:
        raise ValueError("tol must be positive")
    a, b = float(lo), float(hi)
    x1 = b - INV_PHI * (b - a)
    x2 = a + INV_PHI * (b - a)
    f1, f2 = _checked(f, x1), _checked(f, x2)
    it = 0
    while b - a > tol and it < max_iter:
        if f1 >= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - INV_PHI * (b - a)
            f1 = _checked(f, x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + INV_PHI * (b - a)
            f2 = _checked(f, x2)
        it += 1
    best_x, best_f = (x1, f1) if f1 >= f2 else (x2, f2)
    for edge in (lo, hi):
        fe = _checked(f, edge)
        if fe > best_f:
            best_x, best_f = float(edge), fe
    return Maximum(best_x, best_f, it, b - a <= tol, b - a)


def nelder_mead_max(f: Callable[[np.ndarray], float], init, tol: float = 1e-8, bounds=None,
                    max_iter: int = 500, step=None) -> Maximum:
    """Maximize ``f`` with the Nelder-Mead simplex.

    Coefficients: reflection 1, expansion 2, contraction 0.5, shrink 0.5.
    Stops once the spread of function values over the simplex is below
    ``tol``.  With ``bounds`` every proposal is clamped into the open box
    shrunk by ``BOX_MARGIN``.  Exhausting ``max_iter`` returns the best
    vertex with ``converged=False``.
    """
    x0 = np.asarray(init, dtype=float).ravel()
    d = x0.size
    if bounds is not None:
        lo = np.array([b[0] for b in bounds], dtype=float) + BOX_MARGIN
        hi = np.array([b[1] for b in bounds], dtype=float) - BOX_MARGIN
        if np.any(x0 < lo) or np.any(x0 > hi):
            raise ValueError(f"initial point {x0} is not inside the box {bounds}")

        def clamp(x):
            return np.clip(x, lo, hi)
    else:
        def clamp(x):
            return x

    if step is None:
        if bounds is not None:
            step = 0.1 * (hi - lo)
        else:
            step = np.where(x0 != 0, 0.05 * np.abs(x0), 0.05)
    step = np.broadcast_to(np.asarray(step, dtype=float), (d,))

    def neg(x):
        return -_checked(f, x)

    simplex = [x0.copy()]
    for k in range(d):
        v = x0.copy()
        v[k] += step[k]
        if bounds is not None and v[k] > hi[k]:
            v[k] = x0[k] - step[k]
        simplex.append(clamp(v))
    simplex = np.array(simplex)
    fs = np.array([neg(v) for v in simplex])

    it = 0
    converged = False
    while True:
        order = np.argsort(fs, kind="stable")
        simplex, fs = simplex[order], fs[order]
        if fs[-1] - fs[0] < tol:
            converged = True
            break
        if it >= max_iter:
            break
        it += 1
        centroid = simplex[:-1].mean(axis=0)
        xr = clamp(centroid + (centroid - simplex[-1]))
        fr = neg(xr)
        if fr < fs[0]:
            xe = clamp(centroid + 2.0 * (centroid - simplex[-1]))
            fe = neg(xe)
            if fe < fr:
                simplex[-1], fs[-1] = xe, fe
            else:
                simplex[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-2]:
            simplex[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-1]:
            xc = clamp(centroid + 0.5 * (xr - centroid))
            fc = neg(xc)
            if fc <= fr:
                simplex[-1], fs[-1] = xc, fc
                continue
        else:
            xc = clamp(centroid + 0.5 * (simplex[-1] - centroid))
            fc = neg(xc)
            if fc < fs[-1]:
                simplex[-1], fs[-1] = xc, fc
                continue
        for k in range(1, d + 1):
            simplex[k] = clamp(simplex[0] + 0.5 * (simplex[k] - simplex[0]))
            fs[k] = neg(simplex[k])

    width = float(np.max(np.abs(simplex - simplex[0])))
    return Maximum(simplex[0].copy(), float(-fs[0]), it, converged, width)
