import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from atbp.fit import FittedModel, fit_model
from atbp.intervals import (BootstrapEnsemble, Calibration, IntervalResult, bisect_level, bootstrap_world,
                            calibrated_interval, covers, naive_interval, sorted_quantiles)
from atbp.ner import ModelParams
from atbp.predict import FinitePopulation, TargetFunction, atbp_predict
from atbp.simlab import generate_population, interval_spec
from atbp.transforms import get_family


def model(beta, tau2, sigma2, family="identity", tp=()):
    return FittedModel(ModelParams(beta, tau2, sigma2, tp), get_family(family), 0.0, None, None, 0.0, 0.0, 0)


@pytest.fixture(scope="module")
def study_case():
    sim = generate_population(interval_spec(m=10, N=60, n=15, seed=3), 0)
    pop = sim.population
    fitted = fit_model(pop.sample(), "dp")
    T = TargetFunction("indicator", sim.z)
    ens = BootstrapEnsemble(fitted, pop, T, B=40, refit=True, seed=4, areas=[0, 1])
    return pop, fitted, T, ens


def test_stub_already_calibrated():
    c = bisect_level(lambda a: 1 - a, 0.05, B=10**9)
    assert abs(c.a_star - 0.05) <= 1e-4
    assert not c.flagged


def test_stub_linear():
    c = bisect_level(lambda a: 1 - 2 * a, 0.05, B=10**9)
    assert abs(c.a_star - 0.025) <= 1e-4


def test_bisection_flags_unreachable_target():
    c = bisect_level(lambda a: 0.5, 0.05, B=100)
    assert c.flagged and c.a_star == pytest.approx(0.005)
    c = bisect_level(lambda a: 1.0, 0.05, B=100)
    assert c.flagged and c.a_star == pytest.approx(0.5)


def test_bisection_stops_within_mc_tolerance():
    c = bisect_level(lambda a: 1 - a, 0.05, B=20)
    assert abs(c.cp - 0.95) <= 1 / 20


def test_interval_result_invariants():
    with pytest.raises(ValueError):
        IntervalResult("a", 1.0, 0.0, 0.05)
    r = IntervalResult("a", 0.1, 0.3, 0.05)
    assert r.width == pytest.approx(0.2)
    assert r.covers(0.2) and not r.covers(0.1) and not r.covers(0.3)


def test_covers_is_open():
    np.testing.assert_array_equal(covers(np.array([0, 0, 0]), np.array([1, 1, 1]), np.array([0, 0.5, 1])),
                                  [False, True, False])
    assert covers(-np.inf, np.inf, 3.0)


def test_gaussian_interval_oracle():
    pop = FinitePopulation([0, 0], np.zeros((2, 0)), [True, False], [0.0, np.nan])
    r = naive_interval(model([], 1.0, 1.0), pop, 0, TargetFunction(), 0.05, L_post=100_000, seed=1)
    assert r.lower == pytest.approx(-1.2002, abs=0.03)
    assert r.upper == pytest.approx(1.2002, abs=0.03)


def test_interval_pinches_as_alpha_grows():
    pop = FinitePopulation([0, 0], np.zeros((2, 0)), [True, False], [0.0, np.nan])
    fm = model([], 1.0, 1.0)
    w = [naive_interval(fm, pop, 0, TargetFunction(), a, L_post=4000, seed=2).width for a in (0.05, 0.5, 0.99)]
    assert w[0] > w[1] > w[2]
    assert w[2] < 0.05


def test_deterministic_posterior_zero_width():
    pop = FinitePopulation([0, 0], np.ones((2, 1)), [True, False], [1.0, np.nan])
    fm = model([0.5], 0.0, 1e-300)
    r = naive_interval(fm, pop, 0, TargetFunction(), 0.05, L_post=50)
    mu = atbp_predict(fm, pop, TargetFunction(), L=1).mu[0]
    assert r.lower == r.upper == pytest.approx(mu)


def test_noiseless_world():
    pop = FinitePopulation([0, 0, 1, 1], np.ones((4, 1)), [1, 0, 1, 0], [1.0, np.nan, 2.0, np.nan])
    fm = model([0.3], 0.0, 1e-300, "dp", (0.5,))
    w = bootstrap_world(fm, pop, np.random.default_rng(0), TargetFunction())
    want = get_family("dp").inverse(0.3, (0.5,))
    np.testing.assert_allclose(w.y, want)
    np.testing.assert_allclose(w.mu, want)


def test_world_clt_and_structure():
    rng = np.random.default_rng(1)
    pop = FinitePopulation(np.repeat(np.arange(50), 4), np.ones((200, 1)), np.tile([1, 1, 0, 0], 50),
                           np.where(np.tile([1, 1, 0, 0], 50), 1.0, np.nan))
    fm = model([0.2], 0.09, 0.49, "dp", (0.3,))
    fam = fm.family
    hs = np.array([fam.forward(bootstrap_world(fm, pop, rng).y, (0.3,)) for _ in range(200)])
    assert abs(hs.mean() - 0.2) <= 3 * math.sqrt(0.58 / hs.size)
    w = bootstrap_world(fm, pop, rng)
    np.testing.assert_array_equal(w.population.n, pop.n)
    np.testing.assert_array_equal(w.population.y[pop.sampled], w.y[pop.sampled])


def test_coverage_monotone_and_reproducible(study_case):
    pop, fitted, T, ens = study_case
    cps = [ens.coverage(0, a) for a in (0.02, 0.05, 0.1, 0.2)]
    assert all(x >= y for x, y in zip(cps, cps[1:]))
    assert ens.coverage(0, 0.99) <= 0.1
    again = BootstrapEnsemble(fitted, pop, T, B=40, refit=True, seed=4, areas=[0, 1])
    assert again.coverage(1, 0.05) == ens.coverage(1, 0.05)
    np.testing.assert_array_equal(again.draws, ens.draws)


def test_width_non_increasing_under_common_draws(study_case):
    _, _, _, ens = study_case
    d = ens.draws[:, 0, :]
    widths = [np.mean(sorted_quantiles(d, 1 - a / 2) - sorted_quantiles(d, a / 2)) for a in (0.01, 0.05, 0.1, 0.3)]
    assert all(x >= y for x, y in zip(widths, widths[1:]))


def test_calibrated_relation_to_naive(study_case):
    pop, fitted, T, ens = study_case
    naive = naive_interval(fitted, pop, 0, T, 0.05, L_post=1000, seed=6)
    same = calibrated_interval(fitted, pop, 0, T, 0.05, L_post=1000, seed=6, calibration=Calibration(0.05, 0.95))
    assert (same.lower, same.upper) == (naive.lower, naive.upper)
    wide = calibrated_interval(fitted, pop, 0, T, 0.05, L_post=1000, seed=6, calibration=Calibration(0.01, 0.99))
    assert wide.lower <= naive.lower and wide.upper >= naive.upper
    narrow = calibrated_interval(fitted, pop, 0, T, 0.05, L_post=1000, seed=6, calibration=Calibration(0.2, 0.8))
    assert narrow.lower >= naive.lower and narrow.upper <= naive.upper
    cal = calibrated_interval(fitted, pop, 0, T, 0.05, L_post=1000, seed=6, ensemble=ens)
    assert cal.method == "calibrated" and cal.B == 40 and 0 < cal.a_star < 1


def test_ensemble_rejects_unknown_area(study_case):
    _, _, _, ens = study_case
    with pytest.raises(KeyError):
        ens.coverage(5, 0.05)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=30), st.floats(0, 1))
def test_sorted_quantiles_match_numpy(xs, q):
    d = np.sort(np.array(xs))
    assert sorted_quantiles(d, q) == pytest.approx(np.quantile(d, q), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.001, 0.3), st.floats(0.5, 3.0))
def test_bisection_recovers_power_stub(alpha, k):
    c = bisect_level(lambda a: 1 - a**k if a < 1 else 0.0, alpha, B=10**9, lo=1e-6, hi=0.999)
    assert abs(c.a_star - alpha ** (1 / k)) <= 1e-4 or abs(c.cp - (1 - alpha)) <= 1e-9
