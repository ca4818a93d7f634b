import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from atbp.errors import ConvergenceError
from atbp.optim import golden_section_max, nelder_mead_max


def test_golden_quadratic():
    r = golden_section_max(lambda x: -(x - 0.3) ** 2, 0.0, 1.0, tol=1e-6)
    assert abs(r.x - 0.3) <= 1e-6
    assert r.converged


def test_golden_kinked():
    r = golden_section_max(lambda x: -abs(x - 0.77), 0.0, 2.0, tol=1e-5)
    assert abs(r.x - 0.77) <= 1e-5


def test_golden_boundary():
    r = golden_section_max(lambda x: x, 0.0, 1.0, tol=1e-6)
    assert r.x == 1.0


def test_golden_rejects_nonfinite():
    with pytest.raises(ConvergenceError, match=r"nan\) at 0\.618"):
        golden_section_max(lambda x: np.nan if x > 0.4 else 0.0, 0.0, 1.0)


def test_nm_bowl():
    r = nelder_mead_max(lambda v: -(v[0] - 1) ** 2 - (v[1] - 2) ** 2, [0.0, 1.0], tol=1e-14)
    np.testing.assert_allclose(r.x, [1, 2], atol=1e-4)


def test_nm_constant():
    r = nelder_mead_max(lambda v: 3.0, [0.2, 0.4])
    np.testing.assert_array_equal(r.x, [0.2, 0.4])
    assert r.converged and r.iterations == 0


def test_nm_rosenbrock():
    def f(v):
        return -((1 - v[0]) ** 2 + 100 * (v[1] - v[0] ** 2) ** 2)

    r = nelder_mead_max(f, [-1.2, 1.0], tol=1e-16, max_iter=5000)
    np.testing.assert_allclose(r.x, [1, 1], atol=1e-3)


def test_nm_budget_exhausted_flags():
    def f(v):
        return -((1 - v[0]) ** 2 + 100 * (v[1] - v[0] ** 2) ** 2)

    r = nelder_mead_max(f, [-1.2, 1.0], tol=1e-16, max_iter=5)
    assert not r.converged
    assert r.iterations == 5


def test_nm_respects_box():
    r = nelder_mead_max(lambda v: v[0] + v[1], [0.5, 0.5], bounds=((0, 1), (0, 1)), tol=1e-12)
    assert np.all(r.x < 1) and np.all(r.x > 0.999)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(0.5, 20))
def test_golden_finds_peak(c, k):
    r = golden_section_max(lambda x: -k * (x - c) ** 2, 0.0, 1.0, tol=1e-6)
    assert abs(r.x - c) <= 1e-6
