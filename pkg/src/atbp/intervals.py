"""Naive and bootstrap-calibrated empirical Bayes intervals for ``mu_i``.

The naive interval takes posterior quantiles at the plug-in estimate.  The
calibrated interval replaces the nominal level by ``a*`` solving
``CP(a*) = 1 - alpha``, where ``CP`` is the coverage of the naive recipe
measured over parametric bootstrap worlds drawn from the fitted model.
All bootstrap worlds are generated once and reused for every ``a``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConvergenceError, DomainError, InverseOverflowError, ParameterError
from .fit import FitConfig, FittedModel, fit_model
from .predict import MAX_REJECT_FRACTION, FinitePopulation, PosteriorSampler, TargetFunction, posterior_draws
from .streams import Streams, as_streams

log = logging.getLogger(__name__)

MAX_DROP_FRACTION = 0.10
WIDTH_TOL = 1e-4


@dataclass
class IntervalResult:
    """Open interval ``(lower, upper)`` for one area's ``mu_i``."""

    area: object
    lower: float
    upper: float
    alpha: float
    method: str = "naive"
    a_star: float | None = None
    L_post: int = 1000
    B: int | None = None
    flagged: bool = False
    note: str = ""

    def __post_init__(self):
        if self.lower > self.upper:
            raise ValueError(f"interval for {self.area!r} has lower > upper")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def covers(self, value: float) -> bool:
        return bool(covers(self.lower, self.upper, value))


def _check_level(name, value):
    if not 0 < value < 1:
        raise ValueError(f"{name} must lie in (0, 1), got {value}")


def sorted_quantiles(sorted_draws: np.ndarray, q: float) -> np.ndarray:
    """Type-7 quantile along the last axis of already sorted draws."""
    L = sorted_draws.shape[-1]
    h = (L - 1) * q
    lo = int(math.floor(h))
    hi = min(lo + 1, L - 1)
    frac = h - lo
    a = sorted_draws[..., lo]
    return a + frac * (sorted_draws[..., hi] - a)


def naive_interval(fitted: FittedModel, population: FinitePopulation, area, T: TargetFunction,
                   alpha: float = 0.05, L_post: int = 1000, seed: int | Streams = 0) -> IntervalResult:
    """Plug-in posterior interval ``(Q_{alpha/2}, Q_{1-alpha/2})``."""
    _check_level("alpha", alpha)
    draws = np.sort(posterior_draws(fitted, population, area, T, L_post, seed))
    lo, hi = sorted_quantiles(draws, alpha / 2), sorted_quantiles(draws, 1 - alpha / 2)
    return IntervalResult(area, float(lo), float(hi), alpha, "naive", None, L_post)


# -- bootstrap worlds --------------------------------------------------------


@dataclass
class BootstrapWorld:
    y: np.ndarray                 # every unit of the world, population order
    population: FinitePopulation  # same design, sampled responses from ``y``
    mu: np.ndarray | None         # per-area truth of the world (None without a target)
    rejected: int = 0


def bootstrap_world(fitted: FittedModel, population: FinitePopulation, rng: np.random.Generator,
                    T: TargetFunction | None = None) -> BootstrapWorld:
    """Draw all units from the fitted model and compute the world's ``mu_i``."""
    pr, fam = fitted.params, fitted.family
    tp = fam.check_params(pr.transform)
    N = population.X.shape[0]
    v = math.sqrt(pr.tau2) * rng.standard_normal(population.m)
    centre = population.X @ pr.beta + v[population.codes]
    sd = math.sqrt(pr.sigma2)
    with np.errstate(over="ignore", invalid="ignore"):
        y = fam._inverse(centre + sd * rng.standard_normal(N), tp)
        rejected = 0
        bad = np.flatnonzero(~np.isfinite(y))
        while bad.size:
            rejected += bad.size
            if rejected > MAX_REJECT_FRACTION * N:
                raise InverseOverflowError(f"{rejected} of {N} bootstrap units overflowed the inverse transform")
            y[bad] = fam._inverse(centre[bad] + sd * rng.standard_normal(bad.size), tp)
            bad = bad[~np.isfinite(y[bad])]
    if rejected:
        log.info("bootstrap world: %d unit(s) redrawn after inverse overflow", rejected)
    world = population.with_sampled_y(y[population.sampled])
    mu = None
    if T is not None:
        mu = np.add.reduceat(T(y), population.starts) / population.N
    return BootstrapWorld(y, world, mu, rejected)


class BootstrapEnsemble:
    """A fixed set of ``B`` bootstrap worlds with sorted posterior draws per area.

    With ``refit=True`` each world's interval uses parameters re-estimated from
    the world's sample; with ``refit=False`` it uses the fitted parameters,
    which are that world's true parameters.
    """

    def __init__(self, fitted: FittedModel, population: FinitePopulation, T: TargetFunction, B: int = 500,
                 L_post: int | None = None, refit: bool = True, seed: int | Streams = 0, areas=None,
                 cfg: FitConfig | None = None):
        if B < 1:
            raise ValueError("B must be at least 1")
        self.B_requested = int(B)
        self.refit = refit
        self.L_post = int(L_post if L_post is not None else (500 if refit else 1000))
        if self.L_post < 2:
            raise ValueError("L_post must be at least 2")
        self.T = T
        streams = as_streams(seed)
        idx = list(range(population.m)) if areas is None else [population.area_index(a) for a in areas]
        self.area_index = {i: k for k, i in enumerate(idx)}
        family = fitted.family
        if family.name == "sdp":
            # the shift box depends on the data; let each world set its own
            family = type(family)(log_eps=family.log_eps)
        mu_rows, draw_rows = [], []
        dropped = 0
        for b in range(self.B_requested):
            world = bootstrap_world(fitted, population, streams.rng("bootstrap", b), T)
            model = fitted
            if refit:
                try:
                    model = fit_model(world.population.sample(), family, cfg, with_fisher=False)
                except (ConvergenceError, DomainError, ParameterError, InverseOverflowError) as exc:
                    dropped += 1
                    log.warning("bootstrap world %d dropped: %s", b, exc)
                    continue
            sampler = PosteriorSampler(model, world.population, T)
            rows = np.empty((len(idx), self.L_post))
            for k, i in enumerate(idx):
                rows[k] = sampler.draws(i, self.L_post, streams.rng("world-posterior", b, i))
            rows.sort(axis=1)
            mu_rows.append(world.mu[idx])
            draw_rows.append(rows)
        if dropped > MAX_DROP_FRACTION * self.B_requested:
            raise ConvergenceError(f"{dropped} of {self.B_requested} bootstrap refits failed")
        self.dropped = dropped
        self.mu = np.array(mu_rows)                 # (B, areas)
        self.draws = np.array(draw_rows)            # (B, areas, L_post), sorted
        self.B = self.mu.shape[0]

    def _k(self, i: int) -> int:
        try:
            return self.area_index[i]
        except KeyError:
            raise KeyError(f"area index {i} not in this ensemble") from None

    def coverage(self, i: int, a: float) -> float:
        _check_level("a", a)
        d = self.draws[:, self._k(i), :]
        lo, hi = sorted_quantiles(d, a / 2), sorted_quantiles(d, 1 - a / 2)
        mu = self.mu[:, self._k(i)]
        return float(np.mean(covers(lo, hi, mu)))

    def calibrate(self, i: int, alpha: float) -> "Calibration":
        return bisect_level(lambda a: self.coverage(i, a), alpha, self.B)


def coverage_estimate(fitted: FittedModel, population: FinitePopulation, area, T: TargetFunction, a: float,
                      B: int = 500, L_post: int | None = None, refit: bool = True,
                      seed: int | Streams = 0, cfg: FitConfig | None = None) -> float:
    """Bootstrap estimate of the coverage of the level-``a`` naive interval for one area."""
    _check_level("a", a)
    i = population.area_index(area)
    ens = BootstrapEnsemble(fitted, population, T, B, L_post, refit, seed, areas=[i], cfg=cfg)
    return ens.coverage(i, a)


def covers(lower, upper, value):
    """Open-interval membership ``lower < value < upper``.

    Intervals are open at both ends.  For a discrete target such as a
    headcount ratio the quantiles usually sit on atoms, so the convention
    matters; the same rule is used for coverage estimation and evaluation.
    """
    return (np.asarray(lower) < value) & (np.asarray(value) < upper)


# -- calibration -------------------------------------------------------------


@dataclass
class Calibration:
    a_star: float
    cp: float
    flagged: bool = False
    iterations: int = 0
    history: list = field(default_factory=list)


def bisect_level(cp: Callable[[float], float], alpha: float, B: int, lo: float | None = None,
                 hi: float | None = None, width_tol: float = WIDTH_TOL, max_iter: int = 100) -> Calibration:
    """Solve ``cp(a) = 1 - alpha`` for non-increasing ``cp`` by bisection.

    Stops once ``|cp - (1 - alpha)| <= 1/B`` or the bracket is narrower than
    ``width_tol``.  If even the bracket ends miss the target, the nearer end
    is returned with ``flagged=True``.
    """
    _check_level("alpha", alpha)
    lo = alpha / 10 if lo is None else lo
    hi = min(10 * alpha, 0.5) if hi is None else hi
    target, tol = 1 - alpha, 1.0 / B
    history = []

    def ev(a):
        c = cp(a)
        history.append((a, c))
        return c

    c_lo = ev(lo)
    if abs(c_lo - target) <= tol:
        return Calibration(lo, c_lo, False, 1, history)
    if c_lo < target:
        log.warning("coverage %.4f at the widest level %.4g stays below %.4f", c_lo, lo, target)
        return Calibration(lo, c_lo, True, 1, history)
    c_hi = ev(hi)
    if abs(c_hi - target) <= tol:
        return Calibration(hi, c_hi, False, 2, history)
    if c_hi > target:
        log.warning("coverage %.4f at the narrowest level %.4g stays above %.4f", c_hi, hi, target)
        return Calibration(hi, c_hi, True, 2, history)
    it = 2
    while hi - lo > width_tol and it < max_iter:
        mid = 0.5 * (lo + hi)
        c = ev(mid)
        it += 1
        if abs(c - target) <= tol:
            return Calibration(mid, c, False, it, history)
        if c > target:
            lo = mid
        else:
            hi = mid
    mid = 0.5 * (lo + hi)
    return Calibration(mid, ev(mid), False, it + 1, history)


def calibrate_level(fitted: FittedModel, population: FinitePopulation, area, T: TargetFunction,
                    alpha: float = 0.05, B: int = 500, L_post: int | None = None, refit: bool = True,
                    seed: int | Streams = 0, cfg: FitConfig | None = None,
                    ensemble: BootstrapEnsemble | None = None) -> Calibration:
    i = population.area_index(area)
    if ensemble is None:
        ensemble = BootstrapEnsemble(fitted, population, T, B, L_post, refit, seed, areas=[i], cfg=cfg)
    return ensemble.calibrate(i, alpha)


def calibrated_interval(fitted: FittedModel, population: FinitePopulation, area, T: TargetFunction,
                        alpha: float = 0.05, B: int = 500, L_post: int = 1000, seed: int | Streams = 0,
                        refit: bool = True, L_post_boot: int | None = None, cfg: FitConfig | None = None,
                        ensemble: BootstrapEnsemble | None = None,
                        calibration: Calibration | None = None) -> IntervalResult:
    """Naive recipe at the calibrated level; posterior draws are the naive interval's."""
    _check_level("alpha", alpha)
    if calibration is None:
        calibration = calibrate_level(fitted, population, area, T, alpha, B, L_post_boot, refit, seed, cfg, ensemble)
    a = calibration.a_star
    draws = np.sort(posterior_draws(fitted, population, area, T, L_post, seed))
    lo, hi = sorted_quantiles(draws, a / 2), sorted_quantiles(draws, 1 - a / 2)
    n_worlds = ensemble.B if ensemble is not None else B
    note = "calibration hit the search bound" if calibration.flagged else ""
    return IntervalResult(area, float(lo), float(hi), alpha, "calibrated", a, L_post, n_worlds,
                          calibration.flagged, note)
