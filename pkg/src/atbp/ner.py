"""Nested error regression algebra on the transformed scale.

The within-area covariance is ``Sigma_i = tau2 * 11' + sigma2 * I``.  Its
inverse and determinant have closed forms, so everything here works with
per-area sums instead of dense ``n_i x n_i`` matrices:

    Sigma_i^{-1} = (I - c_i 11') / sigma2,   c_i = tau2 / (sigma2 + n_i tau2)

with eigenvalue ``1 / (sigma2 + n_i tau2)`` along ``1`` and ``1 / sigma2`` on
its orthogonal complement.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .errors import DomainError, ParameterError
from .transforms import TransformFamily

LOG_2PI = math.log(2.0 * math.pi)
_COND_LIMIT = 1e12


class RankDeficientError(DomainError):
    """Stacked design matrix does not have full column rank."""


@dataclass
class AreaData:
    """Sampled responses and covariates of one area."""

    area_id: Hashable
    y: np.ndarray
    X: np.ndarray | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.X is None:
            self.X = np.zeros((self.y.size, 0))
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X.reshape(-1, 1)
        if self.y.size < 1:
            raise DomainError(f"area {self.area_id!r} has no sampled units")
        if self.X.shape[0] != self.y.size:
            raise DomainError(f"area {self.area_id!r}: {self.X.shape[0]} covariate rows for {self.y.size} responses")
        if not np.all(np.isfinite(self.X)):
            raise DomainError(f"area {self.area_id!r}: non-finite covariates")


@dataclass
class ModelParams:
    beta: np.ndarray
    tau2: float
    sigma2: float
    transform: tuple[float, ...] = ()

    def __post_init__(self):
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        self.tau2 = float(self.tau2)
        self.sigma2 = float(self.sigma2)
        self.transform = tuple(float(v) for v in self.transform)
        _check_variances(self.tau2, self.sigma2)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.beta, [self.tau2, self.sigma2], self.transform])


def _check_variances(tau2, sigma2):
    if not sigma2 > 0:
        raise ParameterError(f"sigma2 must be positive, got {sigma2}")
    if not tau2 >= 0:
        raise ParameterError(f"tau2 must be non-negative, got {tau2}")


class SampleData:
    """Sampled units of all areas, stacked area by area.

    Areas keep their order of first appearance; units keep their order
    within an area.  Covariate cross-products are cached because they do
    not change with the transformation parameters.
    """

    def __init__(self, area_ids: Sequence[Hashable], y, X, unit_ids=None):
        area_ids = list(area_ids)
        y = np.asarray(y, dtype=float).ravel()
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if not (len(area_ids) == y.size == X.shape[0]):
            raise DomainError("area ids, responses and covariate rows differ in length")
        if not np.all(np.isfinite(X)):
            raise DomainError("non-finite covariates")
        order: dict[Hashable, int] = {}
        codes = np.fromiter((order.setdefault(a, len(order)) for a in area_ids), dtype=np.int64, count=len(area_ids))
        perm = np.argsort(codes, kind="stable")
        self.areas = list(order)
        self.codes = codes[perm]
        self.y = y[perm]
        self.X = X[perm]
        self.perm = perm
        if unit_ids is None:
            self.unit_ids = None
        else:
            unit_ids = list(unit_ids)
            self.unit_ids = [unit_ids[k] for k in perm]
        self.n = np.bincount(self.codes, minlength=len(self.areas)).astype(float)
        self.starts = np.concatenate([[0], np.cumsum(self.n[:-1])]).astype(np.int64)
        self.sx = self.segsum(self.X)
        self.Sxx = np.einsum("ij,ik->ijk", self.X, self.X)
        self.Sxx = np.add.reduceat(self.Sxx, self.starts, axis=0) if self.p else np.zeros((self.m, 0, 0))
        self.XtX = self.Sxx.sum(axis=0)

    @classmethod
    def from_areas(cls, areas: Sequence[AreaData]) -> "SampleData":
        ids = [a.area_id for a in areas for _ in range(a.y.size)]
        return cls(ids, np.concatenate([a.y for a in areas]), np.vstack([a.X for a in areas]))

    @property
    def m(self) -> int:
        return len(self.areas)

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def n_total(self) -> int:
        return self.y.size

    def segsum(self, v) -> np.ndarray:
        """Per-area sums of ``v`` (first axis runs over stacked units)."""
        v = np.asarray(v, dtype=float)
        if v.ndim > 1 and v.shape[1] == 0:
            return np.zeros((self.m,) + v.shape[1:])
        return np.add.reduceat(v, self.starts, axis=0)

    def area_slice(self, i: int) -> slice:
        return slice(int(self.starts[i]), int(self.starts[i] + self.n[i]))

    def with_y(self, y) -> "SampleData":
        """Same design, new responses (already in stacked order)."""
        new = object.__new__(SampleData)
        new.__dict__.update(self.__dict__)
        new.y = np.asarray(y, dtype=float)
        return new

    def check_rank(self):
        if self.p == 0:
            return
        cond = np.linalg.cond(self.XtX)
        if not np.isfinite(cond) or cond > _COND_LIMIT:
            raise RankDeficientError(f"design matrix is rank deficient (condition number {cond:.3g})")


# -- covariance primitives ------------------------------------------------


def sigma_solve(n: int, tau2: float, sigma2: float, v) -> np.ndarray:
    """``Sigma^{-1} v`` for one area via the rank-one identity."""
    _check_variances(tau2, sigma2)
    v = np.asarray(v, dtype=float)
    c = tau2 / (sigma2 + n * tau2)
    return (v - c * v.sum(axis=0)) / sigma2


def log_det_sigma(n: int, tau2: float, sigma2: float) -> float:
    _check_variances(tau2, sigma2)
    return (n - 1) * math.log(sigma2) + math.log(sigma2 + n * tau2)


def _shrink(data: SampleData, tau2, sigma2):
    return tau2 / (sigma2 + data.n * tau2)


def inv_bilinear(data: SampleData, tau2, sigma2, u, v, power: int = 1):
    """Per-area ``u_i' Sigma_i^{-power} v_i`` for ``power`` in {1, 2}.

    ``u`` is a stacked vector; ``v`` a stacked vector or matrix of columns.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    uv = data.segsum(u[:, None] * v if v.ndim > 1 else u * v)
    su = data.segsum(u)
    sv = data.segsum(v)
    outer = su[:, None] * sv if v.ndim > 1 else su * sv
    n = data.n if v.ndim == 1 else data.n[:, None]
    if power == 1:
        c = _shrink(data, tau2, sigma2)
        c = c if v.ndim == 1 else c[:, None]
        return (uv - c * outer) / sigma2
    a = 1.0 / (sigma2 + n * tau2)
    b = 1.0 / sigma2
    return a * a * outer / n + b * b * (uv - outer / n)


def gls_beta(data: SampleData, tau2: float, sigma2: float) -> np.ndarray:
    """Generalized least squares coefficients for the responses stored in ``data``."""
    _check_variances(tau2, sigma2)
    if data.p == 0:
        return np.zeros(0)
    c = _shrink(data, tau2, sigma2)
    A = data.XtX - np.einsum("i,ij,ik->jk", c, data.sx, data.sx)
    sh = data.segsum(data.y)
    b = data.X.T @ data.y - data.sx.T @ (c * sh)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise RankDeficientError(f"GLS normal equations are singular (condition number {cond:.3g})")
    return np.linalg.solve(A, b)


# -- likelihood ------------------------------------------------------------


def _gaussian_part(data: SampleData, h, beta, tau2, sigma2) -> float:
    z = h - data.X @ beta
    sz = data.segsum(z)
    szz = data.segsum(z * z)
    c = _shrink(data, tau2, sigma2)
    quad = (szz - c * sz * sz) / sigma2
    logdet = (data.n - 1) * math.log(sigma2) + np.log(sigma2 + data.n * tau2)
    return float(-0.5 * np.sum(logdet) - 0.5 * np.sum(quad) - 0.5 * data.n_total * LOG_2PI)


def marginal_loglik(data: SampleData, params: ModelParams, family: TransformFamily) -> float:
    """Log marginal likelihood on the data scale, Jacobian term included."""
    h = family.forward(data.y, params.transform)
    jac = float(np.sum(family.log_jacobian(data.y, params.transform)))
    return _gaussian_part(data, h, params.beta, params.tau2, params.sigma2) + jac


def score(data: SampleData, params: ModelParams, family: TransformFamily) -> np.ndarray:
    """Gradient of :func:`marginal_loglik` ordered as (beta, tau2, sigma2, transform)."""
    tp = params.transform
    tau2, sigma2 = params.tau2, params.sigma2
    h = family.forward(data.y, tp)
    z = h - data.X @ params.beta
    n = data.n
    a = 1.0 / (sigma2 + n * tau2)
    sz = data.segsum(z)
    szz = data.segsum(z * z)

    d_beta = inv_bilinear(data, tau2, sigma2, z, data.X).sum(axis=0) if data.p else np.zeros(0)
    d_tau2 = -0.5 * np.sum(n * a) + 0.5 * np.sum(a * a * sz * sz)
    along = sz * sz / n
    quad2 = a * a * along + (szz - along) / sigma2**2
    trace = (n - 1) / sigma2 + a
    d_sigma2 = -0.5 * np.sum(trace) + 0.5 * np.sum(quad2)

    d_tp = np.zeros(family.n_params)
    if family.n_params:
        h1 = family.param_derivatives(data.y, tp, order=1)
        dlj = family.param_derivatives(data.y, tp, order=1, of="log_jacobian")
        d_tp = -inv_bilinear(data, tau2, sigma2, z, h1).sum(axis=0) + dlj.sum(axis=0)
    return np.concatenate([d_beta, [d_tau2, d_sigma2], d_tp])


# -- concentrated likelihood for fixed transformation -----------------------


@dataclass
class ProfileState:
    """Maximizers of the Gaussian likelihood for a fixed variance ratio."""

    loglik: float
    beta: np.ndarray
    sigma2: float
    tau2: float
    gamma: float = field(default=0.0)


class ConcentratedLikelihood:
    """Gaussian NER likelihood of fixed responses ``h`` as a function of ``gamma = tau2 / sigma2``.

    ``beta`` and ``sigma2`` are profiled out in closed form, so the
    maximization over (beta, tau2, sigma2) reduces to one dimension.
    """

    def __init__(self, data: SampleData, h):
        self.data = data
        self.h = np.asarray(h, dtype=float)
        self.sh = data.segsum(self.h)
        self.Xth = data.X.T @ self.h
        self.hh = float(self.h @ self.h)

    def at(self, gamma: float) -> ProfileState:
        d = self.data
        c = gamma / (1.0 + d.n * gamma)
        if d.p:
            A = d.XtX - (d.sx * c[:, None]).T @ d.sx
            b = self.Xth - d.sx.T @ (c * self.sh)
            beta = np.linalg.solve(A, b)
            sz = self.sh - d.sx @ beta
            # z'z from sufficient statistics; z = h - X beta
            zz = self.hh - 2.0 * float(beta @ self.Xth) + float(beta @ d.XtX @ beta)
        else:
            beta = np.zeros(0)
            sz = self.sh
            zz = self.hh
        quad = zz - float(np.dot(c, sz * sz))
        N = d.n_total
        sigma2 = quad / N
        if not sigma2 > 0:
            return ProfileState(-np.inf, beta, 0.0, 0.0, gamma)
        loglik = -0.5 * (float(np.log1p(d.n * gamma).sum()) + N * math.log(sigma2) + N * (1.0 + LOG_2PI))
        return ProfileState(loglik, beta, sigma2, gamma * sigma2, gamma)

    def loglik_many(self, gammas) -> np.ndarray:
        """Profile log-likelihood at several ``gamma`` values in one batched pass."""
        d = self.data
        g = np.asarray(gammas, dtype=float)
        c = g[:, None] / (1.0 + d.n[None, :] * g[:, None])              # (k, m)
        if d.p:
            A = d.XtX[None] - np.einsum("km,mj,ml->kjl", c, d.sx, d.sx)
            b = self.Xth[None] - (c * self.sh[None]) @ d.sx
            beta = np.linalg.solve(A, b[..., None])[..., 0]              # (k, p)
            sz = self.sh[None] - beta @ d.sx.T
            zz = self.hh - 2.0 * beta @ self.Xth + np.einsum("kj,jl,kl->k", beta, d.XtX, beta)
        else:
            sz = np.broadcast_to(self.sh, c.shape)
            zz = np.full(g.size, self.hh)
        N = d.n_total
        sigma2 = (zz - np.sum(c * sz * sz, axis=1)) / N
        out = np.full(g.size, -np.inf)
        ok = sigma2 > 0
        out[ok] = -0.5 * (np.log1p(d.n[None] * g[ok, None]).sum(axis=1) + N * np.log(sigma2[ok]) + N * (1.0 + LOG_2PI))
        return out

