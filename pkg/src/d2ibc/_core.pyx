# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. ``_core_py`` holds the reference implementation."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()

cdef double INVPHI = (sqrt(5.0) - 1.0) / 2.0
cdef int MAX_BASINS = 3


cdef inline double _horner(const double[:] alpha, double u) nogil:
    cdef Py_ssize_t k = alpha.shape[0] - 1
    cdef double acc = alpha[k]
    while k > 0:
        k -= 1
        acc = acc * u + alpha[k]
    return acc


cdef inline double _objective(const double[:] alpha, double r, double wy, double wu, double u) nogil:
    cdef double d = r - _horner(alpha, u)
    return wy * d * d + wu * u * u


cdef inline bint _better(double ja, double ua, double jb, double ub) nogil:
    # strict improvement, ties to smaller |u| then smaller u
    if ja < jb:
        return True
    if ja > jb:
        return False
    if fabs(ua) < fabs(ub):
        return True
    if fabs(ua) > fabs(ub):
        return False
    return ua < ub


cdef inline bint _in(Py_ssize_t* arr, int n, Py_ssize_t v) nogil:
    cdef int k
    for k in range(n):
        if arr[k] == v:
            return True
    return False


cdef double _golden(const double[:] alpha, double r, double wy, double wu,
                    double a, double b, double tol) nogil:
    cdef double c = b - INVPHI * (b - a)
    cdef double d = a + INVPHI * (b - a)
    cdef double fc = _objective(alpha, r, wy, wu, c)
    cdef double fd = _objective(alpha, r, wy, wu, d)
    cdef int it = 0
    while b - a > tol and it < 200:
        if fc <= fd:
            b = d
            d = c
            fd = fc
            c = b - INVPHI * (b - a)
            fc = _objective(alpha, r, wy, wu, c)
        else:
            a = c
            c = d
            fc = fd
            d = a + INVPHI * (b - a)
            fd = _objective(alpha, r, wy, wu, d)
        it += 1
    if _better(fc, c, fd, d):
        return c
    return d


def poly_objective(const double[:] alpha, double r, double wy, double wu, double u):
    return _objective(alpha, r, wy, wu, u)


def minimize_poly_objective(const double[:] alpha, double r, double wy, double wu,
                            double umin, double umax, int grid_points, double tol):
    """Minimise ``wy*(r - p(u))**2 + wu*u**2`` over ``[umin, umax]``.

    ``p(u) = sum(alpha[k] * u**k)``. Coarse grid, then golden-section
    refinement inside the cells around the best few local grid minima.
    """
    cdef Py_ssize_t g = grid_points, i, j, m
    cdef double h = (umax - umin) / (g - 1)
    cdef double[:] us = np.empty(g)
    cdef double[:] js = np.empty(g)
    cdef double best_u, best_j, cand_u, cand_j, lo, hi
    cdef Py_ssize_t basins[3]
    cdef int nb = 0
    with nogil:
        for i in range(g):
            us[i] = umin + i * h
        us[g - 1] = umax
        for i in range(g):
            js[i] = _objective(alpha, r, wy, wu, us[i])
        best_u = us[0]
        best_j = js[0]
        for i in range(1, g):
            if _better(js[i], us[i], best_j, best_u):
                best_j = js[i]
                best_u = us[i]
        # pick up to MAX_BASINS local grid minima, best first
        for m in range(MAX_BASINS):
            j = -1
            for i in range(g):
                if i > 0 and js[i - 1] < js[i]:
                    continue
                if i < g - 1 and js[i + 1] < js[i]:
                    continue
                if _in(basins, nb, i):
                    continue
                if j < 0 or _better(js[i], us[i], js[j], us[j]):
                    j = i
            if j < 0:
                break
            basins[nb] = j
            nb += 1
        for m in range(nb):
            i = basins[m]
            lo = us[i - 1] if i > 0 else us[0]
            hi = us[i + 1] if i < g - 1 else us[g - 1]
            cand_u = _golden(alpha, r, wy, wu, lo, hi, tol)
            cand_j = _objective(alpha, r, wy, wu, cand_u)
            if _better(cand_j, cand_u, best_j, best_u):
                best_j = cand_j
                best_u = cand_u
    return best_u


def pid_filter(const double[:] theta, const double[:] e, double u_prev=0.0, e_hist=None):
    """Run ``u_t = u_{t-1} + sum_i theta[i] * e[t-i]`` over ``e``.

    ``e_hist`` holds ``e_{-1}, e_{-2}, ...`` (zeros when omitted).
    """
    cdef Py_ssize_t n = e.shape[0], nt = theta.shape[0], t, i, k
    out = np.empty(n)
    hist = np.zeros(max(nt - 1, 0))
    if e_hist is not None and hist.shape[0] > 0:
        src = np.asarray(e_hist, dtype=float)[: hist.shape[0]]
        hist[: src.shape[0]] = src
    cdef double[:] hv = hist
    cdef double[:] ov = out
    cdef double acc = u_prev, ev
    with nogil:
        for t in range(n):
            acc = acc + theta[0] * e[t]
            for i in range(1, nt):
                k = t - i
                if k >= 0:
                    ev = e[k]
                else:
                    ev = hv[-k - 1]
                acc = acc + theta[i] * ev
            ov[t] = acc
    return out


def integrated_lags(const double[:] e, int n_theta):
    """Matrix ``C[t, i] = sum_{s <= t} e[s - i]`` with zero pre-history."""
    cdef Py_ssize_t n = e.shape[0], t, i
    c = np.zeros((n, n_theta + 1))
    cdef double[:, :] cv = c
    cdef double ev
    with nogil:
        for i in range(n_theta + 1):
            for t in range(n):
                ev = e[t - i] if t - i >= 0 else 0.0
                cv[t, i] = (cv[t - 1, i] if t > 0 else 0.0) + ev
    return c
