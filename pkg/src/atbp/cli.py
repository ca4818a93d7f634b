"""Command line interface: ``atbp fit|predict|interval|simulate``.

Population files are CSV with columns ``area_id, unit_id, sampled, y,
x_1 ... x_p``; ``y`` is left empty for non-sampled units and no intercept
column is added.  ``fit`` writes ``fit.json``, which ``predict`` and
``interval`` read back.

Exit codes: 0 ok, 2 input error, 3 numerical non-convergence, 4 internal error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConvergenceError, DomainError, InputError, InverseOverflowError, ParameterError
from .fit import FitConfig, FittedModel, attach_standard_errors, fit_model, standardized_residuals
from .intervals import BootstrapEnsemble, sorted_quantiles
from .ner import ModelParams
from .predict import FinitePopulation, PosteriorSampler, TargetFunction, atbp_predict
from .simlab import ScenarioSpec, StudyConfig, interval_spec, run_interval_study, run_prediction_study
from .streams import Streams
from .transforms import get_family

log = logging.getLogger("atbp")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_INTERNAL = 0, 2, 3, 4
LOW_B = 100


# -- configuration -----------------------------------------------------------


@dataclass
class TargetConfig:
    kind: str = "identity"
    z: float | None = None
    z_factor: float = 0.6     # z = z_factor * median of the sampled y when z is unset
    alpha: float = 0.0


@dataclass
class RunConfig:
    family: str = "dp"
    bounds: list | None = None
    log_eps: float = 1e-5
    L: int = 100
    L_post: int = 1000
    L_post_boot: int | None = None
    B: int = 500
    alpha: float = 0.05
    calibrate: bool = False
    refit: bool = True
    seed: int = 0
    outer_tol: float = 1e-4
    nm_tol: float = 1e-8
    inner_tol: float = 1e-8
    target: TargetConfig = field(default_factory=TargetConfig)
    scenario: dict = field(default_factory=dict)

    def validate(self):
        for name in ("L", "L_post", "B"):
            if getattr(self, name) < 1:
                raise InputError(f"config: {name} must be at least 1")
        if self.L_post < 2:
            raise InputError("config: L_post must be at least 2")
        if not 0 < self.alpha < 1:
            raise InputError("config: alpha must lie in (0, 1)")
        if not 0 <= int(self.seed) < 2**64:
            raise InputError("config: seed must be an unsigned 64-bit integer")
        if self.target.kind not in ("identity", "indicator", "fgt"):
            raise InputError(f"config: unknown target kind {self.target.kind!r}")

    def fit_config(self) -> FitConfig:
        bounds = None if self.bounds is None else tuple(tuple(b) for b in self.bounds)
        return FitConfig(outer_tol=self.outer_tol, nm_tol=self.nm_tol, inner_tol=self.inner_tol, bounds=bounds)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def sha256(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def load_config(path: str | None) -> RunConfig:
    raw = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise InputError(f"config {path} must hold a JSON object")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(raw) - known
    if unknown:
        raise InputError(f"config: unknown key(s) {sorted(unknown)}")
    target = raw.pop("target", {}) or {}
    tknown = {f.name for f in dataclasses.fields(TargetConfig)}
    if not isinstance(target, dict) or set(target) - tknown:
        raise InputError(f"config: target accepts only {sorted(tknown)}")
    try:
        cfg = RunConfig(**raw, target=TargetConfig(**target))
    except TypeError as exc:
        raise InputError(f"config: {exc}") from None
    return cfg


def resolve_config(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    env_seed = os.environ.get("ATBP_SEED")
    if env_seed:
        try:
            cfg.seed = int(env_seed)
        except ValueError:
            raise InputError(f"ATBP_SEED must be an integer, got {env_seed!r}") from None
    for name in ("family", "L", "L_post", "B", "alpha", "seed"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    if getattr(args, "calibrate", False):
        cfg.calibrate = True
    if getattr(args, "no_refit", False):
        cfg.refit = False
    if getattr(args, "target", None):
        cfg.target.kind = args.target
    if getattr(args, "z", None) is not None:
        cfg.target.z = args.z
    if getattr(args, "fgt_alpha", None) is not None:
        cfg.target.alpha = args.fgt_alpha
    cfg.validate()
    return cfg


def header_comment(cfg: RunConfig) -> str:
    return f"# atbp {__version__} config_sha256={cfg.sha256()} seed={cfg.seed}\n"


# -- population CSV -------------------------------------------------------------


def _data_lines(fh):
    for line in fh:
        if not line.startswith("#"):
            yield line


def read_population(path, p: int | None = None) -> FinitePopulation:
    """Parse and validate a population CSV; ``p`` fixes the number of covariates."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc}") from None
    with fh:
        reader = csv.reader(_data_lines(fh))
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        for col in ("area_id", "unit_id", "sampled", "y"):
            if col not in header:
                raise InputError(f"{path}: missing column {col!r}")
        xcols = sorted((h for h in header if h.startswith("x_")), key=lambda h: int(h[2:]) if h[2:].isdigit() else -1)
        bad = [h for h in xcols if not h[2:].isdigit() or int(h[2:]) < 1]
        if bad:
            raise InputError(f"{path}: covariate columns must be named x_1 ... x_p, got {bad[0]!r}")
        want = p if p is not None else (int(xcols[-1][2:]) if xcols else 0)
        if want < 1:
            raise InputError(f"{path}: need at least one covariate column x_1")
        for k in range(1, want + 1):
            if f"x_{k}" not in header:
                raise InputError(f"{path}: missing covariate column 'x_{k}'")
        idx = {h: header.index(h) for h in header}
        xidx = [idx[f"x_{k}"] for k in range(1, want + 1)]
        areas, units, sampled, ys, X = [], [], [], [], []
        for rowno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InputError(f"{path}: row {rowno} has {len(row)} fields, expected {len(header)}")
            flag = row[idx["sampled"]].strip()
            if flag not in ("0", "1"):
                raise InputError(f"{path}: row {rowno}, column 'sampled': expected 0 or 1, got {flag!r}")
            yv = row[idx["y"]].strip()
            if flag == "1":
                try:
                    y = float(yv)
                except ValueError:
                    raise InputError(f"{path}: row {rowno}, column 'y': not a number: {yv!r}") from None
                if not np.isfinite(y):
                    raise InputError(f"{path}: row {rowno}, column 'y': not finite")
            else:
                if yv:
                    raise InputError(f"{path}: row {rowno}, column 'y': must be empty for a non-sampled unit")
                y = np.nan
            xs = []
            for k, j in enumerate(xidx, start=1):
                try:
                    xs.append(float(row[j]))
                except ValueError:
                    raise InputError(f"{path}: row {rowno}, column 'x_{k}': not a number: {row[j]!r}") from None
            areas.append(row[idx["area_id"]])
            units.append(row[idx["unit_id"]])
            sampled.append(flag == "1")
            ys.append(y)
            X.append(xs)
    if not areas:
        raise InputError(f"{path}: no data rows")
    try:
        return FinitePopulation(areas, np.array(X), sampled, ys, units)
    except DomainError as exc:
        raise InputError(f"{path}: {exc}") from None


# -- fit.json ----------------------------------------------------------------------


def fit_to_json(model: FittedModel, cfg: RunConfig, p: int, residuals_path: str | None) -> dict:
    pr = model.params
    est = {k: {"estimate": v, "se": s} for k, (v, s) in model.estimates().items()}
    return {
        "schema_version": SCHEMA_VERSION,
        "tool": f"atbp {__version__}",
        "config_sha256": cfg.sha256(),
        "seed": cfg.seed,
        "converged": bool(model.convergence.get("converged", False)),
        "family": {"name": model.family.name, "bounds": [list(b) for b in model.family.bounds],
                   "log_eps": model.family.log_eps},
        "covariates": [f"x_{k}" for k in range(1, p + 1)],
        "params": {"beta": pr.beta.tolist(), "tau2": pr.tau2, "sigma2": pr.sigma2,
                   "transform": list(pr.transform)},
        "estimates": est,
        "fisher": None if model.fisher is None else model.fisher.tolist(),
        "se_note": model.se_note,
        "loglik": model.loglik,
        "aic": model.aic,
        "bic": model.bic,
        "aic_per_unit": model.aic / model.n_units,
        "bic_per_unit": model.bic / model.n_units,
        "n_units": model.n_units,
        "convergence": {k: (bool(v) if isinstance(v, (bool, np.bool_)) else v) for k, v in model.convergence.items()},
        "residuals_file": residuals_path,
    }


def fit_from_json(path) -> tuple[FittedModel, int]:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read fit file {path}: {exc}") from None
    if d.get("schema_version") != SCHEMA_VERSION:
        raise InputError(f"{path}: unsupported schema version {d.get('schema_version')!r}")
    try:
        fam = get_family(d["family"]["name"], bounds=d["family"]["bounds"], log_eps=d["family"]["log_eps"])
        pr = d["params"]
        params = ModelParams(np.array(pr["beta"], dtype=float), pr["tau2"], pr["sigma2"], tuple(pr["transform"]))
        fisher = None if d.get("fisher") is None else np.array(d["fisher"])
        se = [v["se"] for v in d["estimates"].values()]
        model = FittedModel(params, fam, d["loglik"], fisher, None if None in se else np.array(se),
                            d["aic"], d["bic"], d["n_units"], d.get("convergence", {}), d.get("se_note", ""))
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: malformed fit file ({exc})") from None
    return model, len(d["covariates"])


def _fmt(v: float) -> str:
    return repr(float(v))


def summary_lines(model: FittedModel) -> list[str]:
    out = [f"family: {model.family.name}"]
    for name, (v, s) in model.estimates().items():
        out.append(f"  {name} = {v:.4g}" + ("" if s is None else f" ({s:.3g})"))
    out.append(f"  loglik = {model.loglik:.6g}  AIC = {model.aic:.6g}  BIC = {model.bic:.6g}"
               f"  (per unit: {model.aic / model.n_units:.4g}, {model.bic / model.n_units:.4g})")
    if model.se_note:
        out.append(f"  note: {model.se_note}")
    return out


def _target(cfg: RunConfig, pop: FinitePopulation) -> TargetFunction:
    t = cfg.target
    z = t.z
    if t.kind != "identity" and z is None:
        z = t.z_factor * float(np.median(pop.y[pop.sampled]))
        log.info("poverty line z = %.6g (%.3g x sample median)", z, t.z_factor)
    try:
        return TargetFunction(t.kind, z, t.alpha)
    except ValueError as exc:
        raise InputError(f"config: {exc}") from None


def _write_csv(path, cfg, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(header_comment(cfg))
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# -- commands ------------------------------------------------------------------


def cmd_fit(args) -> int:
    cfg = resolve_config(args)
    pop = read_population(args.population)
    sample = pop.sample()
    try:
        family = get_family(cfg.family, log_eps=cfg.log_eps)
    except ParameterError as exc:
        raise InputError(f"config: {exc}") from None
    out = Path(args.out)
    res_path = str(args.residuals) if args.residuals else str(out.with_name(out.stem + "_residuals.csv"))
    code = EXIT_OK
    try:
        model = fit_model(sample, family, cfg.fit_config())
    except ConvergenceError as exc:
        if exc.partial is None:
            raise
        log.error("%s; writing partial results", exc)
        model = exc.partial
        if model.fisher is None and not model.se_note:
            attach_standard_errors(sample, model)
        code = EXIT_NUMERIC
    rows = [[a, u, _fmt(r)] for a, u, r in standardized_residuals(sample, model)]
    _write_csv(res_path, cfg, ["area_id", "unit_id", "residual"], rows)
    out.write_text(json.dumps(fit_to_json(model, cfg, pop.p, res_path), indent=2) + "\n", encoding="utf-8")
    for line in summary_lines(model):
        print(line)
    return code


def cmd_predict(args) -> int:
    cfg = resolve_config(args)
    model, p = fit_from_json(args.fit)
    pop = read_population(args.population, p)
    T = _target(cfg, pop)
    pred = atbp_predict(model, pop, T, cfg.L, cfg.seed)
    rows = [[a, int(n), int(N), _fmt(mu), _fmt(se)]
            for a, n, N, mu, se in zip(pred.areas, pred.n, pred.N, pred.mu, pred.mc_se)]
    _write_csv(args.out, cfg, ["area_id", "n_i", "N_i", "mu_hat", "mc_se"], rows)
    return EXIT_OK


def cmd_interval(args) -> int:
    cfg = resolve_config(args)
    model, p = fit_from_json(args.fit)
    pop = read_population(args.population, p)
    T = _target(cfg, pop)
    streams = Streams(cfg.seed)
    sampler = PosteriorSampler(model, pop, T)
    mu_hat = atbp_predict(model, pop, T, cfg.L, cfg.seed).mu
    ens = None
    if cfg.calibrate:
        if cfg.B < LOW_B:
            log.warning("B=%d bootstrap worlds is too few for a stable calibration (use at least %d)", cfg.B, LOW_B)
        ens = BootstrapEnsemble(model, pop, T, cfg.B, cfg.L_post_boot, cfg.refit, streams, cfg=cfg.fit_config())
    rows = []
    for i, area in enumerate(pop.areas):
        draws = np.sort(sampler.draws(i, cfg.L_post, streams.rng("posterior", i)))
        levels = [("naive", cfg.alpha, "")]
        if ens is not None:
            cal = ens.calibrate(i, cfg.alpha)
            if cal.flagged:
                log.warning("area %s: calibrated level %.4g sits on the search bound", area, cal.a_star)
            levels.append(("calibrated", cal.a_star, _fmt(cal.a_star)))
        for method, a, a_txt in levels:
            lo, hi = sorted_quantiles(draws, a / 2), sorted_quantiles(draws, 1 - a / 2)
            if method == "naive" and not lo <= mu_hat[i] <= hi:
                log.warning("area %s: point prediction %.6g outside the naive interval (Monte Carlo tail)",
                            area, mu_hat[i])
            rows.append([area, method, _fmt(lo), _fmt(hi), a_txt])
    _write_csv(args.out, cfg, ["area_id", "method", "lower", "upper", "a_star"], rows)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = resolve_config(args)
    sc = dict(cfg.scenario)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    workers = args.threads if args.threads else (os.cpu_count() or 1)
    study_cfg = StudyConfig(L=cfg.L, L_post=cfg.L_post, L_post_boot=cfg.L_post_boot or 500, B=cfg.B,
                            alpha=cfg.alpha, refit=cfg.refit, fit=cfg.fit_config(), workers=workers)
    try:
        if args.study == "prediction":
            spec = ScenarioSpec(
                scenario=args.scenario or sc.get("scenario", "A"),
                lam=args.lam if args.lam is not None else sc.get("lam", 0.0),
                m=args.m or sc.get("m", 25), N=sc.get("N", 200),
                groups=tuple(sc.get("groups", (20, 40, 60, 80, 100))),
                z_rule=sc.get("z_rule", "population"), seed=cfg.seed,
            )
        else:
            spec = interval_spec(m=args.m or sc.get("m", 20),
                                 lam=args.lam if args.lam is not None else sc.get("lam", 0.3),
                                 N=sc.get("N", 200), n=sc.get("n", 50), seed=cfg.seed)
    except (ValueError, TypeError) as exc:
        raise InputError(f"scenario: {exc}") from None
    if args.study == "prediction":
        report = run_prediction_study(spec, args.reps, cfg=study_cfg)
        stem = "prediction_rmse"
    else:
        report = run_interval_study(spec, args.reps, cfg=study_cfg)
        stem = "interval_coverage"
    report.to_csv(out_dir / f"{stem}.csv", comment=header_comment(cfg))
    payload = {"tool": f"atbp {__version__}", "config_sha256": cfg.sha256(), "seed": cfg.seed, **report.to_dict()}
    (out_dir / f"{stem}.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"{args.study} study: R={report.R}, {report.runtime:.1f} s -> {out_dir / stem}.csv")
    return EXIT_OK


# -- entry point ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="atbp", description="Adaptively transformed empirical best prediction.")
    ap.add_argument("--version", action="version", version=f"atbp {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="master seed (overrides config and ATBP_SEED)")
        p.add_argument("--threads", type=int, help="worker processes (default: available cores)")

    p = sub.add_parser("fit", help="fit the transformed model to the sampled units")
    p.add_argument("population", help="population CSV")
    p.add_argument("--out", default="fit.json")
    p.add_argument("--family", choices=["dp", "sdp", "ss", "log", "identity"])
    p.add_argument("--residuals", help="standardized residuals CSV (default: next to --out)")
    common(p)
    p.set_defaults(func=cmd_fit)

    for name, func, help_ in (("predict", cmd_predict, "predict area parameters"),
                              ("interval", cmd_interval, "naive and calibrated intervals")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("population", help="population CSV")
        p.add_argument("--fit", required=True, help="fit.json from `atbp fit`")
        p.add_argument("--out", default=f"{'predictions' if name == 'predict' else 'intervals'}.csv")
        p.add_argument("--target", choices=["identity", "indicator", "fgt"])
        p.add_argument("--z", type=float, help="poverty line (default: 0.6 x sample median)")
        p.add_argument("--fgt-alpha", dest="fgt_alpha", type=float, help="FGT exponent")
        p.add_argument("--L", type=int, help="Monte Carlo draws per unit for point prediction")
        if name == "interval":
            p.add_argument("--alpha", type=float, help="1 - confidence level")
            p.add_argument("--L-post", dest="L_post", type=int, help="posterior draws per area")
            p.add_argument("--calibrate", action="store_true", help="bootstrap-calibrate the level")
            p.add_argument("--bootstrap", dest="B", type=int, help="bootstrap worlds")
            p.add_argument("--no-refit", action="store_true", help="keep the fitted parameters in bootstrap worlds")
        common(p)
        p.set_defaults(func=func)

    p = sub.add_parser("simulate", help="run a simulation study")
    p.add_argument("--study", choices=["prediction", "interval"], default="prediction")
    p.add_argument("--scenario", choices=["A", "B", "C", "D"])
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--m", type=int, help="number of areas")
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--bootstrap", dest="B", type=int)
    p.add_argument("--out-dir", default="simulation")
    common(p)
    p.set_defaults(func=cmd_simulate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConvergenceError, InverseOverflowError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DomainError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 -- any other failure is a bug
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
