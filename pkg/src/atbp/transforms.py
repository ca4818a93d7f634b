"""Parametric transformation families.

Each family is a strictly increasing map ``H_p`` from the data scale onto the
whole real line, with a closed-form inverse and Jacobian.  Families are
selected by string id: ``"dp"`` (dual power), ``"sdp"`` (shifted dual
power), ``"ss"`` (sinh-arcsinh), ``"log"`` and ``"identity"``.

Two notions of parameter range are kept apart:

* the *natural domain* where the formulas are defined (``lambda >= 0`` for
  DP, ``b > 0`` for SS); evaluation rejects anything outside it;
* the *search bounds*, an open finite box used by the optimizers.

Parameters are plain tuples of floats, ordered as in ``param_names``.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import DomainError, InverseOverflowError, ParameterError

LOG_EPS = 1e-5
# largest argument for which exp() stays finite
_EXP_MAX = math.log(np.finfo(float).max)
_FD_STEP = np.finfo(float).eps ** (1.0 / 3.0)

FAMILY_CODES = {"identity": 0, "log": 1, "dp": 2, "sdp": 3, "ss": 4}


def _out(arr, scalar):
    return float(arr) if scalar else arr


def _first_bad(x, ok):
    return x[~ok].ravel()[0]


class TransformFamily:
    """Base class; subclasses implement the ``_forward``/``_inverse``/``_jacobian`` triple."""

    name = ""
    param_names: tuple[str, ...] = ()
    default_bounds: tuple[tuple[float, float], ...] = ()

    def __init__(self, bounds=None, log_eps: float = LOG_EPS):
        bounds = self.default_bounds if bounds is None else bounds
        self.bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)
        if len(self.bounds) != self.n_params:
            raise ParameterError(f"{self.name}: expected {self.n_params} bound pairs, got {len(self.bounds)}")
        for (lo, hi), pname in zip(self.bounds, self.param_names):
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ParameterError(f"{self.name}: bounds for {pname} must be a finite open interval, got ({lo}, {hi})")
        self.log_eps = float(log_eps)

    def __repr__(self):
        return f"{type(self).__name__}(bounds={self.bounds})"

    def __eq__(self, other):
        return type(self) is type(other) and self.bounds == other.bounds and self.log_eps == other.log_eps

    def __hash__(self):
        return hash((self.name, self.bounds, self.log_eps))

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    @property
    def code(self) -> int:
        return FAMILY_CODES[self.name]

    # -- parameters -------------------------------------------------------

    def check_params(self, params) -> tuple[float, ...]:
        params = tuple(float(v) for v in np.atleast_1d(np.asarray(params, dtype=float))) if np.size(params) else ()
        if len(params) != self.n_params:
            raise ParameterError(f"{self.name} takes {self.n_params} parameter(s), got {len(params)}")
        if not all(np.isfinite(params)):
            raise ParameterError(f"{self.name}: non-finite parameter {params}")
        if not self._natural_ok(params):
            raise ParameterError(f"{self.name}: parameters {params} outside the natural domain")
        return params

    def within_bounds(self, params) -> bool:
        return all(lo < v < hi for v, (lo, hi) in zip(params, self.bounds))

    def initial_params(self) -> tuple[float, ...]:
        return tuple(0.5 * (lo + hi) for lo, hi in self.bounds)

    def for_data(self, y) -> "TransformFamily":
        """Return the family with any data-dependent bounds set for ``y``."""
        return self

    def _natural_ok(self, params) -> bool:
        return True

    # -- maps -------------------------------------------------------------

    def in_domain(self, x, params):
        return np.isfinite(np.asarray(x, dtype=float))

    def forward(self, x, params):
        params = self.check_params(params)
        scalar = np.ndim(x) == 0
        x = np.asarray(x, dtype=float)
        self._require_domain(x, params)
        with np.errstate(over="ignore", invalid="ignore"):
            out = self._forward(x, params)
        if not np.all(np.isfinite(out)):
            raise DomainError(f"{self.name}: forward map overflows at x={_first_bad(x, np.isfinite(out))}")
        return _out(out, scalar)

    def inverse(self, u, params):
        params = self.check_params(params)
        scalar = np.ndim(u) == 0
        u = np.asarray(u, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            out = self._inverse(u, params)
        ok = np.isfinite(out)
        if not np.all(ok):
            raise InverseOverflowError(
                f"{self.name}: inverse saturates at u={_first_bad(u, ok)} with params {params}"
            )
        return _out(out, scalar)

    def jacobian(self, x, params):
        params = self.check_params(params)
        scalar = np.ndim(x) == 0
        x = np.asarray(x, dtype=float)
        self._require_domain(x, params)
        with np.errstate(over="ignore"):
            out = self._jacobian(x, params)
        return _out(out, scalar)

    def log_jacobian(self, x, params):
        params = self.check_params(params)
        scalar = np.ndim(x) == 0
        x = np.asarray(x, dtype=float)
        self._require_domain(x, params)
        return _out(self._log_jacobian(x, params), scalar)

    def _log_jacobian(self, x, params):
        return np.log(self._jacobian(x, params))

    def _require_domain(self, x, params):
        ok = self.in_domain(x, params)
        if not np.all(ok):
            raise DomainError(f"{self.name}: x={_first_bad(x, ok)} outside the domain for params {params}")

    # -- parameter derivatives -------------------------------------------

    def param_derivatives(self, x, params, order: int = 1, of: str = "forward"):
        """Central finite-difference derivatives with respect to the parameters.

        ``of`` selects the differentiated quantity: ``"forward"`` for H itself
        or ``"log_jacobian"`` for log H'.  Order 1 returns shape ``x.shape + (q,)``;
        order 2 returns ``x.shape + (q, q)``.
        """
        params = self.check_params(params)
        if order not in (1, 2):
            raise ValueError("order must be 1 or 2")
        fn = {"forward": self._forward, "log_jacobian": self._log_jacobian}[of]
        x = np.asarray(x, dtype=float)
        q = self.n_params
        shape = x.shape + ((q,) if order == 1 else (q, q))
        if q == 0:
            return np.zeros(shape)
        self._require_domain(x, params)
        p0 = np.array(params)
        h = _FD_STEP * (1.0 + np.abs(p0))
        for k in range(q):
            for sign in (-1.0, 1.0):
                trial = p0.copy()
                trial[k] += sign * h[k]
                if not self._natural_ok(tuple(trial)):
                    raise ParameterError(
                        f"{self.name}: {self.param_names[k]}={p0[k]} is too close to its bound for a step of {h[k]:.3g}"
                    )

        def f(p):
            self._require_domain(x, tuple(p))
            return fn(x, tuple(p))

        if order == 1:
            out = np.empty(shape)
            for k in range(q):
                e = np.zeros(q)
                e[k] = h[k]
                out[..., k] = (f(p0 + e) - f(p0 - e)) / (2 * h[k])
            return out
        out = np.empty(shape)
        f0 = f(p0)
        for k in range(q):
            ek = np.zeros(q)
            ek[k] = h[k]
            out[..., k, k] = (f(p0 + ek) - 2 * f0 + f(p0 - ek)) / h[k] ** 2
            for l in range(k + 1, q):
                el = np.zeros(q)
                el[l] = h[l]
                v = (f(p0 + ek + el) - f(p0 + ek - el) - f(p0 - ek + el) + f(p0 - ek - el)) / (4 * h[k] * h[l])
                out[..., k, l] = v
                out[..., l, k] = v
        return out

    # -- kernel hand-off --------------------------------------------------

    def kernel_params(self, params) -> tuple[int, float, float]:
        """``(family code, p0, p1)`` as consumed by ``atbp.kernels``."""
        params = self.check_params(params)
        padded = tuple(params) + (0.0,) * (2 - len(params))
        return self.code, padded[0], padded[1]


class Identity(TransformFamily):
    name = "identity"

    def _forward(self, x, params):
        return x.copy()

    def _inverse(self, u, params):
        return u.copy()

    def _jacobian(self, x, params):
        return np.ones_like(x)

    def _log_jacobian(self, x, params):
        return np.zeros_like(x)


class Log(TransformFamily):
    name = "log"

    def in_domain(self, x, params):
        x = np.asarray(x, dtype=float)
        return np.isfinite(x) & (x > 0)

    def _forward(self, x, params):
        return np.log(x)

    def _inverse(self, u, params):
        return np.where(u > _EXP_MAX, np.inf, np.exp(np.minimum(u, _EXP_MAX)))

    def _jacobian(self, x, params):
        return 1.0 / x

    def _log_jacobian(self, x, params):
        return -np.log(x)


def _dp_forward(t, lam, eps):
    # t = log(x); sinh form avoids the cancellation in x^lam - x^-lam
    if lam <= eps:
        return t.copy()
    return np.sinh(lam * t) / lam


def _dp_inverse_log(u, lam, eps):
    """log of the DP inverse."""
    if lam <= eps:
        return u.copy()
    return np.arcsinh(lam * u) / lam


def _dp_log_jacobian(t, lam, eps):
    # log(cosh(lam t)) - t, written to stay finite for large |lam t|
    if lam <= eps:
        return -t
    a = np.abs(lam * t)
    return a + np.log1p(np.exp(-2 * a)) - math.log(2.0) - t


class DualPower(TransformFamily):
    """``(x^lam - x^-lam) / (2 lam)`` for ``x > 0``; the log map as ``lam -> 0``."""

    name = "dp"
    param_names = ("lambda",)
    default_bounds = ((1e-5, 3.0),)

    def initial_params(self):
        return (0.5,)

    def _natural_ok(self, params):
        return params[0] >= 0

    def in_domain(self, x, params):
        x = np.asarray(x, dtype=float)
        return np.isfinite(x) & (x > 0)

    def _forward(self, x, params):
        return _dp_forward(np.log(x), params[0], self.log_eps)

    def _inverse(self, u, params):
        e = _dp_inverse_log(u, params[0], self.log_eps)
        return np.where(e > _EXP_MAX, np.inf, np.exp(np.minimum(e, _EXP_MAX)))

    def _jacobian(self, x, params):
        lam = params[0]
        if lam <= self.log_eps:
            return 1.0 / x
        return np.cosh(lam * np.log(x)) / x

    def _log_jacobian(self, x, params):
        return _dp_log_jacobian(np.log(x), params[0], self.log_eps)


class ShiftedDualPower(TransformFamily):
    """Dual power applied to ``x + c``; parameters ``(lambda, c)``.

    The shift must keep every observation positive, so the lower bound for
    ``c`` is data dependent; build usable bounds with :meth:`for_data`.
    """

    name = "sdp"
    param_names = ("lambda", "c")
    default_bounds = ((1e-5, 3.0), (-1e6, 1e6))

    def for_data(self, y):
        y = np.asarray(y, dtype=float)
        lo, hi = float(np.min(y)), float(np.max(y))
        spread = max(hi - lo, 1.0)
        c_lo = -lo + 1e-6 * spread
        c_hi = -lo + 10.0 * spread
        return type(self)(bounds=(self.bounds[0], (c_lo, c_hi)), log_eps=self.log_eps)

    def initial_params(self):
        (l_lo, l_hi), (c_lo, c_hi) = self.bounds
        # shift of one unit above the smallest observation, when the box allows it
        c0 = c_lo + 1.0 if c_lo + 1.0 < c_hi else 0.5 * (c_lo + c_hi)
        return (min(0.5, 0.5 * (l_lo + l_hi)), c0)

    def _natural_ok(self, params):
        return params[0] >= 0

    def in_domain(self, x, params):
        x = np.asarray(x, dtype=float)
        return np.isfinite(x) & (x + params[1] > 0)

    def _forward(self, x, params):
        return _dp_forward(np.log(x + params[1]), params[0], self.log_eps)

    def _inverse(self, u, params):
        e = _dp_inverse_log(u, params[0], self.log_eps)
        return np.where(e > _EXP_MAX, np.inf, np.exp(np.minimum(e, _EXP_MAX))) - params[1]

    def _jacobian(self, x, params):
        lam, c = params
        xc = x + c
        if lam <= self.log_eps:
            return 1.0 / xc
        return np.cosh(lam * np.log(xc)) / xc

    def _log_jacobian(self, x, params):
        return _dp_log_jacobian(np.log(x + params[1]), params[0], self.log_eps)


class SinhArcsinh(TransformFamily):
    """``sinh(b * asinh(x) - a)`` on the whole real line; ``a`` skew, ``b > 0`` tails."""

    name = "ss"
    param_names = ("a", "b")
    default_bounds = ((-5.0, 5.0), (0.05, 5.0))

    def initial_params(self):
        return (0.0, 1.0)

    def _natural_ok(self, params):
        return params[1] > 0

    def _forward(self, x, params):
        a, b = params
        return np.sinh(b * np.arcsinh(x) - a)

    def _inverse(self, u, params):
        a, b = params
        return np.sinh((np.arcsinh(u) + a) / b)

    def _jacobian(self, x, params):
        a, b = params
        return b * np.cosh(b * np.arcsinh(x) - a) / np.sqrt(1.0 + x * x)

    def _log_jacobian(self, x, params):
        a, b = params
        w = np.abs(b * np.arcsinh(x) - a)
        return math.log(b) + w + np.log1p(np.exp(-2 * w)) - math.log(2.0) - 0.5 * np.log1p(x * x)


FAMILIES = {cls.name: cls for cls in (Identity, Log, DualPower, ShiftedDualPower, SinhArcsinh)}


def get_family(name: str, bounds=None, log_eps: float = LOG_EPS) -> TransformFamily:
    try:
        cls = FAMILIES[name]
    except KeyError:
        raise ParameterError(f"unknown transformation family {name!r}; choose from {sorted(FAMILIES)}") from None
    return cls(bounds=bounds, log_eps=log_eps)
