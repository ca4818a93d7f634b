# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled Monte Carlo kernels.

Normal variates come from numpy's ziggurat sampler on the generator's own
bit generator, in the same order as ``atbp._pykernels``; the two backends
therefore agree draw for draw unless a draw has to be rejected.
"""
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport asinh, exp, isfinite, pow, sinh
from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport random_standard_normal

import numpy as np


cdef inline double _hinv(double u, int fam, double p0, double p1, double eps) noexcept nogil:
    cdef double e
    if fam == 0:
        return u
    if fam == 1:
        return exp(u)
    if fam == 2 or fam == 3:
        if p0 <= eps:
            e = u
        else:
            e = asinh(p0 * u) / p0
        if fam == 3:
            return exp(e) - p1
        return exp(e)
    return sinh((asinh(u) + p0) / p1)


cdef inline double _target(double u, int fam, double p0, double p1, double eps,
                           int tgt, double z, double alpha, double hz) noexcept nogil:
    cdef double x
    if tgt == 1:
        return 1.0 if u < hz else 0.0
    if tgt == 2:
        if u < hz:
            if alpha == 0.0:
                return 1.0
            x = _hinv(u, fam, p0, p1, eps)
            return pow((z - x) / z, alpha)
        return 0.0
    return _hinv(u, fam, p0, p1, eps)


cdef bitgen_t* _bitgen(gen) except NULL:
    return <bitgen_t *> PyCapsule_GetPointer(gen.bit_generator.capsule, "BitGenerator")


def posterior_sums(gen, theta, double s, double sigma, Py_ssize_t L, int fam, double p0, double p1,
                   int tgt, double z, double alpha, double hz, double eps):
    """Per replicate: draw one shared ``z_l`` then one ``w_lj`` per unit, sum ``T(H^-1(u))``."""
    cdef double[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef Py_ssize_t K = th.shape[0]
    out = np.zeros(L, dtype=np.float64)
    cdef double[::1] o = out
    cdef bitgen_t *rng = _bitgen(gen)
    cdef Py_ssize_t l, j
    cdef double zl, base, v, acc
    cdef long rejected = 0
    with gen.bit_generator.lock, nogil:
        for l in range(L):
            zl = random_standard_normal(rng)
            base = s * zl
            acc = 0.0
            for j in range(K):
                v = _target(th[j] + base + sigma * random_standard_normal(rng), fam, p0, p1, eps, tgt, z, alpha, hz)
                while not isfinite(v):
                    rejected += 1
                    if rejected > 1000000:
                        break
                    v = _target(th[j] + base + sigma * random_standard_normal(rng), fam, p0, p1, eps, tgt, z, alpha, hz)
                acc += v
            o[l] = acc
    return out, rejected


def unit_means(gen, theta, double sd, Py_ssize_t L, int fam, double p0, double p1,
               int tgt, double z, double alpha, double hz, double eps):
    """Per unit: mean and sample variance of ``T(H^-1(u))`` over ``L`` draws of ``N(theta_j, sd^2)``."""
    cdef double[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef Py_ssize_t K = th.shape[0]
    means = np.zeros(K, dtype=np.float64)
    variances = np.zeros(K, dtype=np.float64)
    buf = np.empty(L, dtype=np.float64)
    cdef double[::1] mu = means
    cdef double[::1] va = variances
    cdef double[::1] b = buf
    cdef bitgen_t *rng = _bitgen(gen)
    cdef Py_ssize_t l, j
    cdef double v, acc, dev
    cdef long rejected = 0
    with gen.bit_generator.lock, nogil:
        for j in range(K):
            acc = 0.0
            for l in range(L):
                v = _target(th[j] + sd * random_standard_normal(rng), fam, p0, p1, eps, tgt, z, alpha, hz)
                while not isfinite(v):
                    rejected += 1
                    if rejected > 1000000:
                        break
                    v = _target(th[j] + sd * random_standard_normal(rng), fam, p0, p1, eps, tgt, z, alpha, hz)
                b[l] = v
                acc += v
            mu[j] = acc / L
            if L > 1:
                acc = 0.0
                for l in range(L):
                    dev = b[l] - mu[j]
                    acc += dev * dev
                va[j] = acc / (L - 1)
    return means, variances, rejected
