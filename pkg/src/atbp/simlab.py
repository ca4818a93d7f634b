"""Simulation harness: scenario generators, competing predictors and metrics.

Scenarios share the linear predictor ``b0 + b1 x`` with ``x ~ U(1, 2)`` drawn
once per master seed:

* ``A``: dual-power transformed nested error regression, Gaussian errors;
* ``B``: as ``A`` with scaled t(5) errors (``tau * t5``, ``sigma * t5``);
* ``C``: multiplicative gamma model ``exp(b0 + b1 x) * v * e`` with unit-mean
  gamma factors of shape ``1/tau^2`` and ``1/sigma^2``;
* ``D``: ``0.2 exp(U) + 0.8 U^2`` with ``U`` from the Gaussian model.

The first ``n_i`` units of each area form the sample.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConvergenceError
from .fit import FitConfig, fit_model
from .intervals import BootstrapEnsemble, covers, sorted_quantiles
from .predict import FinitePopulation, PosteriorSampler, TargetFunction, atbp_predict
from .streams import Streams
from .transforms import DualPower

log = logging.getLogger(__name__)

SCENARIOS = ("A", "B", "C", "D")
METHOD_FAMILIES = {"ATP": "dp", "TP": "log", "EBP": "identity"}
ALL_METHODS = ("ATP", "TP", "EBP", "DE")


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: str = "A"
    lam: float = 0.0
    m: int = 25
    N: int = 200
    groups: tuple[int, ...] = (20, 40, 60, 80, 100)
    beta: tuple[float, float] = (-1.0, 3.0)
    tau: float = 0.3
    sigma: float = 0.7
    z_factor: float = 0.6
    z_rule: str = "population"   # or "sample": median of the sampled units only
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}")
        if self.m < 1 or self.m % len(self.groups):
            raise ValueError(f"m={self.m} is not divisible by the {len(self.groups)} sample-size groups")
        if min(self.groups) < 1 or max(self.groups) > self.N:
            raise ValueError("group sample sizes must lie in [1, N]")
        if self.lam < 0 or self.tau < 0 or self.sigma <= 0:
            raise ValueError("need lam >= 0, tau >= 0, sigma > 0")
        if self.z_rule not in ("population", "sample"):
            raise ValueError("z_rule must be 'population' or 'sample'")

    @property
    def n_per_area(self) -> np.ndarray:
        per = self.m // len(self.groups)
        return np.repeat(np.asarray(self.groups, dtype=np.int64), per)

    @property
    def group_of_area(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.groups)), self.m // len(self.groups))

    def covariates(self) -> np.ndarray:
        """``(m, N)`` covariate values; identical for every replicate of one seed."""
        return Streams(self.seed).rng("covariates").uniform(1.0, 2.0, size=(self.m, self.N))


@dataclass
class SimPopulation:
    population: FinitePopulation
    Y: np.ndarray     # (m, N) full responses
    x: np.ndarray     # (m, N) covariate
    z: float          # poverty line of this replicate
    rep: int


def _errors(spec: ScenarioSpec, rng) -> tuple[np.ndarray, np.ndarray]:
    if spec.scenario == "B":
        return spec.tau * rng.standard_t(5, size=(spec.m, 1)), spec.sigma * rng.standard_t(5, size=(spec.m, spec.N))
    return spec.tau * rng.standard_normal((spec.m, 1)), spec.sigma * rng.standard_normal((spec.m, spec.N))


def generate_population(spec: ScenarioSpec, rep: int) -> SimPopulation:
    rng = Streams(spec.seed).child("replicate", rep).rng("population")
    x = spec.covariates()
    lin = spec.beta[0] + spec.beta[1] * x
    if spec.scenario == "C":
        kv, ke = 1.0 / spec.tau**2, 1.0 / spec.sigma**2
        v = rng.gamma(kv, 1.0 / kv, size=(spec.m, 1))
        e = rng.gamma(ke, 1.0 / ke, size=(spec.m, spec.N))
        Y = np.exp(lin) * v * e
    else:
        v, e = _errors(spec, rng)
        U = lin + v + e
        if spec.scenario == "D":
            Y = 0.2 * np.exp(U) + 0.8 * U**2
        else:
            fam = DualPower()
            with np.errstate(over="ignore"):
                Y = fam._inverse(U, (spec.lam,))
            bad = ~np.isfinite(Y)
            while bad.any():
                log.info("scenario %s: redrawing %d unit(s) after inverse overflow", spec.scenario, int(bad.sum()))
                _, e_new = _errors(spec, rng)
                U = np.where(bad, lin + v + e_new, U)
                with np.errstate(over="ignore"):
                    Y = np.where(bad, fam._inverse(U, (spec.lam,)), Y)
                bad = ~np.isfinite(Y)
    n = spec.n_per_area
    sampled = np.arange(spec.N)[None, :] < n[:, None]
    if spec.z_rule == "population":
        z = spec.z_factor * float(np.median(Y))
    else:
        z = spec.z_factor * float(np.median(Y[sampled]))
    area_ids = np.repeat(np.arange(spec.m), spec.N)
    X = np.column_stack([np.ones(spec.m * spec.N), x.ravel()])
    unit_ids = np.tile(np.arange(spec.N), spec.m)
    pop = FinitePopulation(area_ids, X, sampled.ravel(), np.where(sampled, Y, np.nan).ravel(), unit_ids)
    return SimPopulation(pop, Y, x, z, rep)


def true_mu(Y, T: TargetFunction) -> np.ndarray:
    """Per-area mean of ``T`` over every unit; ``Y`` is ``(m, N)`` or a list of arrays."""
    if isinstance(Y, np.ndarray) and Y.ndim == 2:
        return T(Y).mean(axis=1)
    return np.array([float(np.mean(T(np.asarray(y, dtype=float)))) for y in Y])


def direct_estimator(population: FinitePopulation, T: TargetFunction) -> np.ndarray:
    out = np.empty(population.m)
    for i in range(population.m):
        sl = population.units(i)
        out[i] = np.mean(T(population.y[sl][population.sampled[sl]]))
    return out


# -- reports -----------------------------------------------------------------


@dataclass
class StudyReport:
    kind: str                        # "prediction" or "interval"
    spec: dict
    R: int
    groups: list
    group_of_area: list
    rmse: dict = field(default_factory=dict)        # method -> per-group
    area_rmse: dict = field(default_factory=dict)   # method -> per-area
    cp: dict = field(default_factory=dict)          # method -> per-area
    al: dict = field(default_factory=dict)          # method -> per-area
    failures: dict = field(default_factory=dict)    # method -> count of non-converged fits
    extra: dict = field(default_factory=dict)
    runtime: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("runtime")
        return d

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def csv_rows(self) -> tuple[list[str], list[list]]:
        if self.kind == "prediction":
            methods = list(self.rmse)
            header = ["group", "n_i", *methods]
            rows = [[g + 1, n, *(repr(float(self.rmse[k][g])) for k in methods)] for g, n in enumerate(self.groups)]
        else:
            methods = list(self.cp)
            header = ["area", *(f"cp_{k}" for k in methods), *(f"al_{k}" for k in methods)]
            rows = [[i + 1, *(repr(float(self.cp[k][i])) for k in methods), *(repr(float(self.al[k][i])) for k in methods)]
                    for i in range(len(self.group_of_area))]
        return header, rows

    def to_csv(self, path, comment: str | None = None) -> None:
        header, rows = self.csv_rows()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if comment:
                fh.write(comment)
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)


@dataclass
class StudyConfig:
    L: int = 100
    L_post: int = 1000
    L_post_boot: int = 500
    B: int = 300
    alpha: float = 0.05
    refit: bool = True
    fit: FitConfig = field(default_factory=FitConfig)
    workers: int = 1


def _fit(sample, family, cfg):
    try:
        return fit_model(sample, family, cfg, with_fisher=False), False
    except ConvergenceError as exc:
        if exc.partial is None:
            raise
        return exc.partial, True


def _prediction_replicate(args):
    spec, r, methods, cfg = args
    sim = generate_population(spec, r)
    pop = sim.population
    T = TargetFunction("indicator", sim.z)
    truth = true_mu(sim.Y, T)
    streams = Streams(spec.seed).child("replicate", r)
    sample = pop.sample()
    err, failed = {}, {}
    for k in methods:
        if k == "DE":
            est, bad = direct_estimator(pop, T), False
        else:
            fitted, bad = _fit(sample, METHOD_FAMILIES[k], cfg.fit)
            est = atbp_predict(fitted, pop, T, cfg.L, streams).mu
        err[k] = est - truth
        failed[k] = bad
    return err, failed


def _interval_replicate(args):
    spec, r, cfg = args
    sim = generate_population(spec, r)
    pop = sim.population
    T = TargetFunction("indicator", sim.z)
    truth = true_mu(sim.Y, T)
    streams = Streams(spec.seed).child("replicate", r)
    fitted, bad = _fit(pop.sample(), "dp", cfg.fit)
    sampler = PosteriorSampler(fitted, pop, T)
    ens = BootstrapEnsemble(fitted, pop, T, cfg.B, cfg.L_post_boot, cfg.refit, streams, cfg=cfg.fit)
    out = {"NCI": np.zeros((2, pop.m)), "BCI": np.zeros((2, pop.m))}
    a_star = np.empty(pop.m)
    for i in range(pop.m):
        draws = np.sort(sampler.draws(i, cfg.L_post, streams.rng("posterior", i)))
        a_star[i] = ens.calibrate(i, cfg.alpha).a_star
        for name, a in (("NCI", cfg.alpha), ("BCI", a_star[i])):
            lo, hi = sorted_quantiles(draws, a / 2), sorted_quantiles(draws, 1 - a / 2)
            out[name][0, i] = float(covers(lo, hi, truth[i]))
            out[name][1, i] = hi - lo
    return out, a_star, bad, ens.dropped


def _run(fn, jobs, workers):
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def _spec_dict(spec):
    d = asdict(spec)
    d["groups"] = list(spec.groups)
    d["beta"] = list(spec.beta)
    return d


def run_prediction_study(spec: ScenarioSpec, R: int = 200, methods=ALL_METHODS,
                         cfg: StudyConfig | None = None) -> StudyReport:
    """RMSE of each method per area, averaged within sample-size groups."""
    if R < 1:
        raise ValueError("R must be at least 1")
    unknown = set(methods) - set(ALL_METHODS)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}")
    cfg = cfg or StudyConfig()
    t0 = time.perf_counter()
    results = _run(_prediction_replicate, [(spec, r, tuple(methods), cfg) for r in range(R)], cfg.workers)
    report = StudyReport("prediction", _spec_dict(spec), R, list(spec.groups), spec.group_of_area.tolist())
    g = spec.group_of_area
    for k in methods:
        sq = np.array([res[0][k] for res in results]) ** 2
        area = np.sqrt(sq.mean(axis=0))
        report.area_rmse[k] = area.tolist()
        report.rmse[k] = [float(area[g == j].mean()) for j in range(len(spec.groups))]
        report.failures[k] = int(sum(res[1][k] for res in results))
    report.runtime = time.perf_counter() - t0
    return report


def interval_spec(m: int = 20, lam: float = 0.3, N: int = 200, n: int = 50, seed: int = 0) -> ScenarioSpec:
    """The coverage experiment's design: every area samples ``n`` of ``N`` units."""
    return ScenarioSpec("A", lam=lam, m=m, N=N, groups=(n,), seed=seed)


def run_interval_study(spec: ScenarioSpec, R: int = 200, cfg: StudyConfig | None = None) -> StudyReport:
    """Per-area coverage and average length of the naive and calibrated intervals."""
    if R < 1:
        raise ValueError("R must be at least 1")
    cfg = cfg or StudyConfig()
    t0 = time.perf_counter()
    results = _run(_interval_replicate, [(spec, r, cfg) for r in range(R)], cfg.workers)
    report = StudyReport("interval", _spec_dict(spec), R, list(spec.groups), spec.group_of_area.tolist())
    for k in ("NCI", "BCI"):
        stack = np.array([res[0][k] for res in results])
        report.cp[k] = stack[:, 0, :].mean(axis=0).tolist()
        report.al[k] = stack[:, 1, :].mean(axis=0).tolist()
    a_star = np.array([res[1] for res in results])
    report.failures["ATP"] = int(sum(res[2] for res in results))
    report.extra = {
        "alpha": cfg.alpha, "B": cfg.B, "L_post": cfg.L_post, "L_post_boot": cfg.L_post_boot, "refit": cfg.refit,
        "mean_a_star": float(a_star.mean()), "dropped_worlds": int(sum(res[3] for res in results)),
        "mean_cp": {k: float(np.mean(report.cp[k])) for k in report.cp},
        "mean_al": {k: float(np.mean(report.al[k])) for k in report.al},
    }
    report.runtime = time.perf_counter() - t0
    return report
