"""Maximum likelihood fitting of the transformed nested error regression model.

The transformation parameters are estimated by maximizing the profile
likelihood; for fixed transformation parameters the Gaussian part is
maximized with ``beta`` and ``sigma2`` concentrated out, leaving a
one-dimensional search over ``log(tau2 / sigma2)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import ConvergenceError, DomainError, ParameterError
from .ner import (
    ConcentratedLikelihood,
    ModelParams,
    SampleData,
    inv_bilinear,
    marginal_loglik,
)
from .optim import golden_section_max, nelder_mead_max
from .transforms import TransformFamily, get_family


@dataclass
class FitConfig:
    outer_tol: float = 1e-4        # golden-section bracket width on the transformation parameter
    nm_tol: float = 1e-8           # simplex spread of profile log-likelihood values
    inner_tol: float = 1e-8        # target accuracy of the inner log-likelihood maximum
    outer_max_iter: int = 200
    inner_max_iter: int = 500
    grid_points: int = 11
    log_gamma_range: tuple[float, float] = (-23.0, 14.0)
    inner_grid_points: int = 9
    bounds: tuple | None = None    # overrides the family's search box

    def __post_init__(self):
        if min(self.outer_tol, self.nm_tol, self.inner_tol) <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class InnerFit:
    beta: np.ndarray
    tau2: float
    sigma2: float
    loglik: float          # Gaussian log-likelihood of the transformed responses
    converged: bool
    iterations: int


@dataclass
class FittedModel:
    params: ModelParams
    family: TransformFamily
    loglik: float
    fisher: np.ndarray | None
    se: np.ndarray | None
    aic: float
    bic: float
    n_units: int
    convergence: dict = field(default_factory=dict)
    se_note: str = ""

    @property
    def dim(self) -> int:
        return self.params.beta.size + 2 + self.family.n_params

    def param_names(self) -> list[str]:
        return [f"beta_{k}" for k in range(self.params.beta.size)] + ["tau2", "sigma2", *self.family.param_names]

    def estimates(self) -> dict[str, tuple[float, float | None]]:
        values = self.params.vector()
        se = self.se if self.se is not None else [None] * values.size
        return {name: (float(v), None if s is None else float(s))
                for name, v, s in zip(self.param_names(), values, se)}


# -- inner stage -----------------------------------------------------------


def inner_ml(data: SampleData, family: TransformFamily, tp, cfg: FitConfig | None = None) -> InnerFit:
    """Maximize the Gaussian likelihood of ``H_tp(y)`` over (beta, tau2, sigma2)."""
    cfg = cfg or FitConfig()
    h = family.forward(data.y, tp)
    cl = ConcentratedLikelihood(data, h)
    lo, hi = cfg.log_gamma_range
    grid = np.linspace(lo, hi, cfg.inner_grid_points)
    values = cl.loglik_many(np.exp(grid))
    k = int(np.argmax(values))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    res = minimize_scalar(lambda t: -cl.at(math.exp(t)).loglik, bounds=(a, b), method="bounded",
                          options={"xatol": 0.1 * math.sqrt(cfg.inner_tol), "maxiter": cfg.inner_max_iter})
    t_best = float(res.x) if -res.fun >= values[k] else float(grid[k])
    state = cl.at(math.exp(t_best))
    if not np.isfinite(state.loglik):
        raise ConvergenceError("inner maximization produced a degenerate fit (zero residual variance)")
    return InnerFit(state.beta, state.tau2, state.sigma2, state.loglik, bool(res.success),
                    cfg.inner_grid_points + int(res.nfev))


def profile_loglik(data: SampleData, family: TransformFamily, tp, cfg: FitConfig | None = None) -> float:
    inner = inner_ml(data, family, tp, cfg)
    return inner.loglik + float(np.sum(family.log_jacobian(data.y, tp)))


# -- outer stage -----------------------------------------------------------


def _maximize_one(pl, lo, hi, cfg):
    res = golden_section_max(pl, lo, hi, tol=cfg.outer_tol, max_iter=cfg.outer_max_iter)
    grid = np.linspace(lo, hi, cfg.grid_points)
    grid_vals = np.array([pl(g) for g in grid])
    k = int(np.argmax(grid_vals))
    restarted = False
    # disagreement beyond the grid resolution: the search missed the grid's best cell
    spacing = grid[1] - grid[0]
    if abs(grid[k] - res.x) > spacing + 10 * cfg.outer_tol and grid_vals[k] > res.value:
        restarted = True
        again = golden_section_max(pl, grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)],
                                   tol=cfg.outer_tol, max_iter=cfg.outer_max_iter)
        if again.value > res.value:
            res = again
    meta = {"outer_iterations": res.iterations, "bracket_width": res.width, "grid_restart": restarted}
    return (res.x,), res.value, res.converged, meta


def fit_model(data: SampleData, family: TransformFamily | str, cfg: FitConfig | None = None,
              with_fisher: bool = True) -> FittedModel:
    """Fit all parameters: profile search over the transformation, then the inner ML."""
    cfg = cfg or FitConfig()
    if isinstance(family, str):
        family = get_family(family)
    if cfg.bounds is not None:
        family = type(family)(bounds=cfg.bounds, log_eps=family.log_eps)
    elif family.bounds == type(family).default_bounds:
        family = family.for_data(data.y)
    if data.m < 2:
        raise DomainError(f"need at least 2 areas, got {data.m}")
    data.check_rank()

    def pl(tp):
        tp = tuple(np.atleast_1d(tp))
        try:
            return profile_loglik(data, family, tp, cfg)
        except DomainError:
            return -np.inf

    q = family.n_params
    meta: dict = {"stage": "outer"}
    if q == 0:
        tp, converged = (), True
        meta.update(outer_iterations=0, bracket_width=0.0, grid_restart=False)
    elif q == 1:
        (lo, hi), = family.bounds
        tp, _, converged, extra = _maximize_one(pl, lo, hi, cfg)
        meta.update(extra)
    else:
        res = nelder_mead_max(pl, family.initial_params(), tol=cfg.nm_tol, bounds=family.bounds,
                              max_iter=cfg.outer_max_iter)
        tp, converged = tuple(res.x), res.converged
        meta.update(outer_iterations=res.iterations, bracket_width=res.width, grid_restart=False)

    meta["stage"] = "inner"
    inner = inner_ml(data, family, tp, cfg)
    jac = float(np.sum(family.log_jacobian(data.y, tp)))
    params = ModelParams(inner.beta, inner.tau2, inner.sigma2, tp)
    loglik = inner.loglik + jac
    k = params.vector().size
    meta.update(inner_iterations=inner.iterations, converged=bool(converged and inner.converged))
    model = FittedModel(
        params=params, family=family, loglik=loglik, fisher=None, se=None,
        aic=-2 * loglik + 2 * k, bic=-2 * loglik + math.log(data.n_total) * k,
        n_units=data.n_total, convergence=meta,
    )
    if with_fisher:
        attach_standard_errors(data, model)
    if not converged:
        raise ConvergenceError(f"outer search for {family.name} parameters did not converge", partial=model)
    return model


# -- information and diagnostics -------------------------------------------


def fisher_information(data: SampleData, fitted: FittedModel) -> np.ndarray:
    """Fisher information at the estimate, expectations replaced by sample values.

    Ordered as (beta, tau2, sigma2, transformation parameters).
    """
    pr, fam = fitted.params, fitted.family
    tau2, sigma2, tp = pr.tau2, pr.sigma2, pr.transform
    p, q = pr.beta.size, fam.n_params
    n = data.n
    a = 1.0 / (sigma2 + n * tau2)
    k = p + 2 + q
    info = np.zeros((k, k))
    if p:
        for j in range(p):
            info[j, :p] = inv_bilinear(data, tau2, sigma2, data.X[:, j], data.X).sum(axis=0)
    t, s = p, p + 1
    info[t, t] = 0.5 * np.sum((n * a) ** 2)
    info[t, s] = info[s, t] = 0.5 * np.sum(n * a * a)
    info[s, s] = 0.5 * np.sum(a * a + (n - 1) / sigma2**2)
    if q:
        h = fam.forward(data.y, tp)
        z = h - data.X @ pr.beta
        h1 = fam.param_derivatives(data.y, tp, order=1)
        h2 = fam.param_derivatives(data.y, tp, order=2)
        d2lj = fam.param_derivatives(data.y, tp, order=2, of="log_jacobian")
        sz = data.segsum(z)
        sh1 = data.segsum(h1)
        lam = slice(p + 2, k)
        for r in range(q):
            row = p + 2 + r
            if p:
                info[row, :p] = -inv_bilinear(data, tau2, sigma2, h1[:, r], data.X).sum(axis=0)
            info[row, t] = -np.sum(a * a * sz * sh1[:, r])
            info[row, s] = -np.sum(inv_bilinear(data, tau2, sigma2, z, h1[:, r], power=2))
            for c in range(q):
                info[row, p + 2 + c] = (
                    np.sum(inv_bilinear(data, tau2, sigma2, h1[:, r], h1[:, c]))
                    + np.sum(inv_bilinear(data, tau2, sigma2, z, h2[:, r, c]))
                    - np.sum(d2lj[:, r, c])
                )
        info[:, lam] = info[lam, :].T
    return 0.5 * (info + info.T)


def attach_standard_errors(data: SampleData, model: FittedModel) -> None:
    try:
        info = fisher_information(data, model)
    except (ParameterError, DomainError) as exc:
        model.se_note = f"information not available: {exc}"
        return
    model.fisher = info
    cond = np.linalg.cond(info)
    if not np.isfinite(cond) or cond > 1e15:
        model.se_note = f"information matrix is singular (condition number {cond:.3g})"
        return
    diag = np.diag(np.linalg.inv(info))
    if np.any(diag <= 0):
        model.se_note = f"information matrix is not positive definite (condition number {cond:.3g})"
        return
    model.se = np.sqrt(diag)


def standardized_residuals(data: SampleData, fitted: FittedModel) -> list[tuple]:
    """``(area id, unit id, r)`` with ``r = (H(y) - x'beta) / sqrt(tau2 + sigma2)``."""
    pr = fitted.params
    h = fitted.family.forward(data.y, pr.transform)
    r = (h - data.X @ pr.beta) / math.sqrt(pr.tau2 + pr.sigma2)
    units = data.unit_ids
    out = []
    for i, area in enumerate(data.areas):
        sl = data.area_slice(i)
        for j, idx in enumerate(range(sl.start, sl.stop)):
            uid = units[idx] if units is not None else j
            out.append((area, uid, float(r[idx])))
    return out


def check_loglik(data: SampleData, fitted: FittedModel) -> float:
    """Re-evaluate the log-likelihood at the fitted parameters."""
    return marginal_loglik(data, fitted.params, fitted.family)
