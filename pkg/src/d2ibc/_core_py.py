"""Pure-Python kernels. Same results as the compiled ``_core`` module."""

import math

import numpy as np

INVPHI = (math.sqrt(5.0) - 1.0) / 2.0
MAX_BASINS = 3


def _horner(alpha, u):
    acc = alpha[-1]
    for a in alpha[-2::-1]:
        acc = acc * u + a
    return acc


def poly_objective(alpha, r, wy, wu, u):
    d = r - _horner(alpha, u)
    return wy * d * d + wu * u * u


def _better(ja, ua, jb, ub):
    if ja != jb:
        return ja < jb
    if abs(ua) != abs(ub):
        return abs(ua) < abs(ub)
    return ua < ub


def _golden(alpha, r, wy, wu, a, b, tol):
    c = b - INVPHI * (b - a)
    d = a + INVPHI * (b - a)
    fc = poly_objective(alpha, r, wy, wu, c)
    fd = poly_objective(alpha, r, wy, wu, d)
    it = 0
    while b - a > tol and it < 200:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INVPHI * (b - a)
            fc = poly_objective(alpha, r, wy, wu, c)
        else:
            a, c, fc = c, d, fd
            d = a + INVPHI * (b - a)
            fd = poly_objective(alpha, r, wy, wu, d)
        it += 1
    return c if _better(fc, c, fd, d) else d


def minimize_poly_objective(alpha, r, wy, wu, umin, umax, grid_points, tol):
    alpha = [float(a) for a in alpha]
    g = int(grid_points)
    h = (umax - umin) / (g - 1)
    us = umin + np.arange(g) * h
    us[-1] = umax
    # vectorised Horner, same operation order as the scalar path
    p = np.full(g, alpha[-1])
    for a in alpha[-2::-1]:
        p = p * us + a
    d = r - p
    js = wy * d * d + wu * us * us

    order = np.lexsort((us, np.abs(us), js))
    best = int(order[0])
    best_u, best_j = float(us[best]), float(js[best])

    left = np.r_[False, js[:-1] < js[1:]]
    right = np.r_[js[1:] < js[:-1], False]
    local = ~(left | right)
    basins = [int(i) for i in order if local[i]][:MAX_BASINS]
    for i in basins:
        lo = us[i - 1] if i > 0 else us[0]
        hi = us[i + 1] if i < g - 1 else us[g - 1]
        cand_u = _golden(alpha, r, wy, wu, float(lo), float(hi), tol)
        cand_j = poly_objective(alpha, r, wy, wu, cand_u)
        if _better(cand_j, cand_u, best_j, best_u):
            best_u, best_j = cand_u, cand_j
    return best_u


def pid_filter(theta, e, u_prev=0.0, e_hist=None):
    theta = [float(x) for x in theta]
    e = np.asarray(e, dtype=float)
    hist = np.zeros(max(len(theta) - 1, 0))
    if e_hist is not None and hist.size:
        src = np.asarray(e_hist, dtype=float)[: hist.size]
        hist[: src.size] = src
    out = np.empty(e.size)
    acc = float(u_prev)
    for t in range(e.size):
        acc = acc + theta[0] * e[t]
        for i in range(1, len(theta)):
            k = t - i
            acc = acc + theta[i] * (e[k] if k >= 0 else hist[-k - 1])
        out[t] = acc
    return out


def integrated_lags(e, n_theta):
    e = np.asarray(e, dtype=float)
    c = np.zeros((e.size, n_theta + 1))
    for i in range(n_theta + 1):
        shifted = np.zeros(e.size)
        if i < e.size:
            shifted[i:] = e[: e.size - i]
        acc = 0.0
        for t in range(e.size):
            acc = acc + shifted[t]
            c[t, i] = acc
    return c
