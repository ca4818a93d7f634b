"""Best prediction of area parameters ``mu_i = mean_j T(Y_ij)``.

Given the fitted model, the transformed value of a non-sampled unit is
conditionally ``theta_ij + s_i z_i + sigma w_ij`` with one ``z_i`` shared by
the whole area.  Point predictions average ``T(H^-1(u))`` over Monte Carlo
draws of its marginal; posterior replicates keep the shared ``z_i``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

from . import kernels
from .errors import DomainError, InverseOverflowError
from .fit import FittedModel
from .ner import SampleData
from .streams import Streams, as_streams
from .transforms import TransformFamily

MAX_REJECT_FRACTION = 0.01
TARGET_CODES = {"identity": 0, "indicator": 1, "fgt": 2}


@dataclass(frozen=True)
class TargetFunction:
    """``identity``: x; ``indicator``: I(x < z); ``fgt``: ((z - x)/z)^alpha I(x < z)."""

    kind: str = "identity"
    z: float | None = None
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in TARGET_CODES:
            raise ValueError(f"unknown target kind {self.kind!r}")
        if self.kind != "identity":
            if self.z is None or not math.isfinite(self.z):
                raise ValueError(f"{self.kind} target needs a finite poverty line z")
            if self.kind == "fgt" and self.z <= 0:
                raise ValueError("fgt target needs z > 0")
            if self.alpha < 0:
                raise ValueError("alpha must be non-negative")

    @property
    def bounded(self) -> bool:
        return self.kind == "indicator" or (self.kind == "fgt" and self.alpha == 0)

    def __call__(self, x):
        scalar = np.ndim(x) == 0
        x = np.asarray(x, dtype=float)
        if self.kind == "identity":
            out = x.copy()
        elif self.kind == "indicator":
            out = (x < self.z).astype(float)
        else:
            below = x < self.z
            out = np.zeros_like(x)
            out[below] = 1.0 if self.alpha == 0 else ((self.z - x[below]) / self.z) ** self.alpha
        return float(out) if scalar else out

    def kernel_args(self, family: TransformFamily, tp) -> tuple[int, float, float, float]:
        """``(code, z, alpha, H(z))``; ``H(z) = -inf`` when z is below the family's domain."""
        code = TARGET_CODES[self.kind]
        if self.kind == "identity":
            return code, 0.0, 0.0, 0.0
        z = float(self.z)
        hz = float(family.forward(z, tp)) if family.in_domain(z, tp) else -math.inf
        return code, z, float(self.alpha), hz


def eval_target(T: TargetFunction, x):
    return T(x)


class FinitePopulation:
    """Every unit of every area: covariates, sampling flag, and the sampled responses."""

    def __init__(self, area_ids: Sequence[Hashable], X, sampled, y, unit_ids=None):
        area_ids = list(area_ids)
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        sampled = np.asarray(sampled, dtype=bool).ravel()
        y = np.asarray(y, dtype=float).ravel()
        if not (len(area_ids) == X.shape[0] == sampled.size == y.size):
            raise DomainError("population columns differ in length")
        order: dict[Hashable, int] = {}
        codes = np.fromiter((order.setdefault(a, len(order)) for a in area_ids), dtype=np.int64, count=len(area_ids))
        perm = np.argsort(codes, kind="stable")
        self.areas = list(order)
        self.codes = codes[perm]
        self.X = X[perm]
        self.sampled = sampled[perm]
        self.y = np.where(self.sampled, y[perm], np.nan)
        if unit_ids is not None:
            unit_ids = list(unit_ids)
            if len(unit_ids) != perm.size:
                raise DomainError("unit ids differ in length from the population")
            unit_ids = [unit_ids[k] for k in perm]
        self.unit_ids = unit_ids
        self.N = np.bincount(self.codes, minlength=len(self.areas))
        self.n = np.bincount(self.codes, weights=self.sampled, minlength=len(self.areas)).astype(np.int64)
        self.starts = np.concatenate([[0], np.cumsum(self.N[:-1])]).astype(np.int64)
        if np.any(self.n < 1):
            raise DomainError(f"area {self.areas[int(np.argmin(self.n))]!r} has no sampled units")
        if not np.all(np.isfinite(self.y[self.sampled])):
            raise DomainError("sampled units need finite responses")
        if not np.all(np.isfinite(self.X)):
            raise DomainError("non-finite covariates")
        self._sample = None

    @property
    def m(self) -> int:
        return len(self.areas)

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def area_index(self, area) -> int:
        if isinstance(area, (int, np.integer)) and area not in self.areas:
            return int(area)
        return self.areas.index(area)

    def units(self, i: int) -> slice:
        return slice(int(self.starts[i]), int(self.starts[i] + self.N[i]))

    def sample(self) -> SampleData:
        if self._sample is None:
            idx = np.flatnonzero(self.sampled)
            units = None if self.unit_ids is None else [self.unit_ids[k] for k in idx]
            self._sample = SampleData([self.areas[c] for c in self.codes[idx]], self.y[idx], self.X[idx], units)
        return self._sample

    def with_sampled_y(self, y_sampled) -> "FinitePopulation":
        """Copy with new responses for the sampled units (stacked order)."""
        new = object.__new__(FinitePopulation)
        new.__dict__.update(self.__dict__)
        y = np.full(self.y.size, np.nan)
        y[self.sampled] = y_sampled
        new.y = y
        new._sample = self.sample().with_y(np.asarray(y_sampled, dtype=float)) if self._sample is not None else None
        return new


@dataclass
class ConditionalLaw:
    theta: np.ndarray  # transformed-scale means of the non-sampled units
    s: float           # sd of the shared area effect given the sample
    sigma: float       # unit-level sd


def _all_laws(fitted: FittedModel, pop: FinitePopulation) -> tuple[np.ndarray, np.ndarray]:
    pr = fitted.params
    xb = pop.X @ pr.beta
    h = np.zeros_like(xb)
    h[pop.sampled] = fitted.family.forward(pop.y[pop.sampled], pr.transform)
    resid = np.where(pop.sampled, h - xb, 0.0)
    rsum = np.add.reduceat(resid, pop.starts)
    denom = pr.sigma2 + pop.n * pr.tau2
    shift = pr.tau2 / denom * rsum
    theta = xb + shift[pop.codes]
    s = np.sqrt(pr.sigma2 * pr.tau2 / denom)
    return theta, s


def conditional_law(fitted: FittedModel, population: FinitePopulation, area) -> ConditionalLaw:
    i = population.area_index(area)
    theta, s = _all_laws(fitted, population)
    sl = population.units(i)
    mask = ~population.sampled[sl]
    return ConditionalLaw(theta[sl][mask], float(s[i]), math.sqrt(fitted.params.sigma2))


def _check_rejections(rejected, total):
    if total and rejected > MAX_REJECT_FRACTION * total:
        raise InverseOverflowError(f"{rejected} of {total} Monte Carlo draws overflowed the inverse transform")


def mc_expectation(T: TargetFunction, family: TransformFamily, tp, theta: float, var: float, L: int,
                   rng: np.random.Generator) -> float:
    """``E[T(H^-1(u))]`` for ``u ~ N(theta, var)`` by ``L`` Monte Carlo draws."""
    if L < 1 or var < 0:
        raise ValueError("need L >= 1 and var >= 0")
    if var == 0:
        return float(T(family.inverse(theta, tp)))
    tgt, z, alpha, hz = T.kernel_args(family, tp)
    fam, p0, p1 = family.kernel_params(tp)
    means, _, rejected = kernels.unit_means(rng, np.array([theta], dtype=float), math.sqrt(var), int(L),
                                            fam, p0, p1, tgt, z, alpha, hz, family.log_eps)
    _check_rejections(rejected, L)
    return float(means[0])


@dataclass
class Prediction:
    areas: list
    mu: np.ndarray
    mc_se: np.ndarray
    n: np.ndarray
    N: np.ndarray


def _analytic_mean(T, family):
    return T.kind == "identity" and family.name == "identity"


def atbp_predict(fitted: FittedModel, population: FinitePopulation, T: TargetFunction, L: int = 100,
                 seed: int | Streams = 0) -> Prediction:
    """Empirical best predictor of every area's ``mu_i`` with plug-in parameters."""
    streams = as_streams(seed)
    fam, tp = fitted.family, fitted.params.transform
    theta, s = _all_laws(fitted, population)
    sigma2 = fitted.params.sigma2
    tgt, z, alpha, hz = T.kernel_args(fam, tp)
    code, p0, p1 = fam.kernel_params(tp)
    mu = np.zeros(population.m)
    se = np.zeros(population.m)
    for i in range(population.m):
        sl = population.units(i)
        smp = population.sampled[sl]
        total = float(np.sum(T(population.y[sl][smp])))
        th = theta[sl][~smp]
        if th.size and _analytic_mean(T, fam):
            total += float(np.sum(th))
        elif th.size:
            sd = math.sqrt(s[i] ** 2 + sigma2)
            means, variances, rejected = kernels.unit_means(streams.rng("predict", i), th, sd, int(L), code, p0, p1,
                                                            tgt, z, alpha, hz, fam.log_eps)
            _check_rejections(rejected, th.size * L)
            total += float(np.sum(means))
            se[i] = math.sqrt(float(np.sum(variances)) / L) / population.N[i]
        mu[i] = total / population.N[i]
    return Prediction(list(population.areas), mu, se, population.n.copy(), population.N.copy())


class PosteriorSampler:
    """Draws posterior replicates of ``mu_i`` for any area of one population."""

    def __init__(self, fitted: FittedModel, population: FinitePopulation, T: TargetFunction):
        self.fitted = fitted
        self.pop = population
        self.T = T
        fam, tp = fitted.family, fitted.params.transform
        self.theta, self.s = _all_laws(fitted, population)
        self.sigma = math.sqrt(fitted.params.sigma2)
        self.targs = T.kernel_args(fam, tp)
        self.fargs = fam.kernel_params(tp)
        self.eps = fam.log_eps

    def sampled_total(self, i: int) -> float:
        sl = self.pop.units(i)
        return float(np.sum(self.T(self.pop.y[sl][self.pop.sampled[sl]])))

    def draws(self, i: int, L_post: int, rng: np.random.Generator) -> np.ndarray:
        sl = self.pop.units(i)
        th = self.theta[sl][~self.pop.sampled[sl]]
        base = self.sampled_total(i)
        if th.size == 0:
            return np.full(L_post, base / self.pop.N[i])
        code, p0, p1 = self.fargs
        tgt, z, alpha, hz = self.targs
        sums, rejected = kernels.posterior_sums(rng, th, float(self.s[i]), self.sigma, int(L_post), code, p0, p1,
                                                tgt, z, alpha, hz, self.eps)
        _check_rejections(rejected, th.size * L_post)
        return (base + sums) / self.pop.N[i]


def posterior_draws(fitted: FittedModel, population: FinitePopulation, area, T: TargetFunction,
                    L_post: int = 1000, seed: int | Streams = 0) -> np.ndarray:
    """``L_post`` replicates of ``mu_i`` from its posterior with plug-in parameters."""
    if L_post < 2:
        raise ValueError("L_post must be at least 2")
    i = population.area_index(area)
    return PosteriorSampler(fitted, population, T).draws(i, L_post, as_streams(seed).rng("posterior", i))


def quantile(draws, a: float) -> float:
    """Empirical quantile with linear interpolation between order statistics."""
    if not 0 <= a <= 1:
        raise ValueError("a must lie in [0, 1]")
    return float(np.quantile(np.asarray(draws, dtype=float), a))
