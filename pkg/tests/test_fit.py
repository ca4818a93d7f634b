import math

import numpy as np
import pytest

from atbp.errors import DomainError
from atbp.fit import (FitConfig, FittedModel, fisher_information, fit_model, inner_ml, profile_loglik,
                      standardized_residuals)
from atbp.ner import ModelParams, SampleData, marginal_loglik, sigma_solve
from atbp.simlab import ScenarioSpec, generate_population
from atbp.transforms import get_family


def ner_sample(seed, m=100, n=50, tau=0.3, sigma=0.7, beta=(-1.0, 3.0)):
    rng = np.random.default_rng(seed)
    ids = np.repeat(np.arange(m), n)
    x = rng.uniform(1, 2, ids.size)
    X = np.column_stack([np.ones(ids.size), x])
    y = X @ np.array(beta) + rng.normal(0, tau, m)[ids] + rng.normal(0, sigma, ids.size)
    return SampleData(ids, y, X)


@pytest.fixture(scope="module")
def scenario_a():
    spec = ScenarioSpec("A", lam=0.3, m=50, groups=(20, 40), seed=11)
    return generate_population(spec, 0).population.sample()


@pytest.fixture(scope="module")
def fitted_a(scenario_a):
    return fit_model(scenario_a, "dp")


def test_inner_ml_consistency():
    ident = get_family("identity")
    est = np.array([[math.sqrt(f.tau2), math.sqrt(f.sigma2)] for f in
                    (inner_ml(ner_sample(s), ident, ()) for s in range(20))])
    mean = est.mean(axis=0)
    assert abs(mean[0] - 0.3) < 0.05
    assert abs(mean[1] - 0.7) < 0.05


def test_inner_ml_single_area_no_signal():
    rng = np.random.default_rng(3)
    y = rng.normal(size=40)
    d = SampleData([0] * 40, y, np.ones((40, 1)))
    assert inner_ml(d, get_family("identity"), ()).tau2 <= 1e-4


def test_identity_profile_equals_ml():
    d = ner_sample(1, m=10, n=5)
    ident = get_family("identity")
    assert profile_loglik(d, ident, ()) == inner_ml(d, ident, ()).loglik


def test_profile_is_deterministic(scenario_a):
    fam = get_family("dp")
    assert profile_loglik(scenario_a, fam, (0.4,)) == profile_loglik(scenario_a, fam, (0.4,))


def test_profile_is_maximal_over_variances(scenario_a):
    fam = get_family("dp")
    inner = inner_ml(scenario_a, fam, (0.4,))
    best = marginal_loglik(scenario_a, ModelParams(inner.beta, inner.tau2, inner.sigma2, (0.4,)), fam)
    assert profile_loglik(scenario_a, fam, (0.4,)) == pytest.approx(best, rel=1e-12)
    for t2, s2 in ((inner.tau2 * 1.1, inner.sigma2), (inner.tau2, inner.sigma2 * 0.95)):
        assert marginal_loglik(scenario_a, ModelParams(inner.beta, t2, s2, (0.4,)), fam) < best


def test_fit_beats_profile_grid(scenario_a, fitted_a):
    fam = fitted_a.family
    (lo, hi), = fam.bounds
    grid = np.linspace(lo, hi, 21)[1:-1]
    values = [profile_loglik(scenario_a, fam, (g,)) for g in grid]
    assert fitted_a.loglik >= max(values) - 1e-6


def test_aic_bic_identities(fitted_a):
    k = fitted_a.dim
    assert k == 5
    assert fitted_a.aic == -2 * fitted_a.loglik + 2 * k
    assert fitted_a.bic == -2 * fitted_a.loglik + math.log(fitted_a.n_units) * k


def test_fit_deterministic(scenario_a, fitted_a):
    again = fit_model(scenario_a, "dp")
    np.testing.assert_array_equal(again.params.vector(), fitted_a.params.vector())
    np.testing.assert_array_equal(again.fisher, fitted_a.fisher)
    assert again.loglik == fitted_a.loglik


def test_log_family_skips_outer(scenario_a):
    f = fit_model(scenario_a, "log")
    inner = inner_ml(scenario_a, get_family("log"), ())
    assert f.params.transform == ()
    assert f.convergence["outer_iterations"] == 0
    np.testing.assert_array_equal(f.params.beta, inner.beta)


def test_fit_needs_two_areas():
    d = SampleData([0] * 5, np.arange(1.0, 6.0), np.ones((5, 1)))
    with pytest.raises(DomainError):
        fit_model(d, "identity")


def test_fisher_blocks(scenario_a, fitted_a):
    info = fitted_a.fisher
    p = fitted_a.params.beta.size
    assert np.all(info[:p, p:p + 2] == 0)
    np.testing.assert_array_equal(info, info.T)
    assert np.linalg.eigvalsh(info).min() > -1e-8
    pr = fitted_a.params
    h = fitted_a.family.forward(scenario_a.y, pr.transform)
    ibb = np.zeros((p, p))
    for i in range(scenario_a.m):
        sl = scenario_a.area_slice(i)
        Xi = scenario_a.X[sl]
        ibb += Xi.T @ sigma_solve(Xi.shape[0], pr.tau2, pr.sigma2, Xi)
    np.testing.assert_allclose(info[:p, :p], ibb, rtol=1e-10)
    assert fitted_a.se is not None and np.all(fitted_a.se > 0)
    np.testing.assert_allclose(fitted_a.se, np.sqrt(np.diag(np.linalg.inv(info))))


def test_fisher_two_parameter_family_psd():
    spec = ScenarioSpec("A", lam=0.3, m=50, groups=(30,), seed=5)
    d = generate_population(spec, 0).population.sample()
    f = fit_model(d, "ss")
    info = fisher_information(d, f)
    assert info.shape == (6, 6)
    np.testing.assert_array_equal(info, info.T)


def test_standardized_residual_unit_scaling():
    d = SampleData([0, 0, 1, 1], [0.5, -1.0, 2.0, 0.1], np.ones((4, 1)), unit_ids=["a", "b", "c", "d"])
    params = ModelParams([0.0], 0.25, 0.75)
    fitted = FittedModel(params, get_family("identity"), 0.0, None, None, 0.0, 0.0, 4)
    res = standardized_residuals(d, fitted)
    assert res == [(0, "a", 0.5), (0, "b", -1.0), (1, "c", 2.0), (1, "d", 0.1)]


def test_standardized_residual_moments():
    d = ner_sample(2, m=200, n=50)
    f = fit_model(d, "identity")
    r = np.array([t[2] for t in standardized_residuals(d, f)])
    assert abs(r.mean()) < 0.02
    assert abs(r.var() - 1) < 0.05


def test_fit_config_validation():
    with pytest.raises(ValueError):
        FitConfig(outer_tol=0)
