"""Compiled value/gradient and projected-gradient loop for the local sub-problem.

The sub-problem has only ``P*K + K`` variables but is evaluated thousands of
times per optimization run, so the arithmetic lives in scalar numba loops.

Array layout (all float64):

``data[j, p, k]`` for ``j`` in ``A0, A1, A2, B1, B2, C1, C2, QPI, FREF`` (see the
index constants). ``par`` holds the scalar parameters indexed by the ``P_*``
constants.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

A0, A1, A2, B1, B2, C1, C2, QPI, FREF = range(9)
N_DATA = 9

(P_A, P_B, P_YLO, P_YHI, P_T, P_REG, P_OCC, P_WMIN, P_CUT_LO, P_CUT_HI,
 P_SLOPE_LO, P_SLOPE_HI, P_WMAX, P_BUDGET, P_FMIN, P_CLAMP_T, P_RHO_T, P_CAP_T) = range(18)
N_PAR = 18

_jit = njit(cache=True, error_model="numpy")


@_jit
def softplus(x, t):
    z = x / t
    if z > 0.0:
        return t * (z + math.log1p(math.exp(-z)))
    return t * math.log1p(math.exp(z))


@_jit
def sigmoid(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@_jit
def smooth_max(a, b, t):
    m = max(a, b)
    return m + t * math.log1p(math.exp(-abs(a - b) / t))


@_jit
def smooth_clamp(y, lo, hi, t):
    val = y - softplus(y - hi, t)
    der = 1.0 - sigmoid((y - hi) / t)
    if lo > 0.0:
        val += softplus(lo - y, t)
        der -= sigmoid((lo - y) / t)
    return val, der


@_jit
def transit_factor(f, f_ref, par):
    fmin = par[P_FMIN]
    fe = max(f, fmin)
    e = math.exp(par[P_A] * (60.0 / fe - 60.0 / f_ref))
    y, dy = smooth_clamp(e, par[P_YLO], par[P_YHI], par[P_CLAMP_T])
    if f > fmin:
        dy = dy * e * par[P_A] * (-60.0 / (fe * fe))
    else:
        dy = 0.0
    return y, dy


@_jit
def feeder_factor(u, u_ref, i, par):
    c = i * par[P_B]
    e = math.exp(c * (u - u_ref))
    z, dz = smooth_clamp(e, par[P_YLO], par[P_YHI], par[P_CLAMP_T])
    return z, dz * e * c


@_jit
def wait_curve(rho, par):
    """Smoothed piecewise-linear wait capped at the maximum wait, and its slope."""
    wmax = par[P_WMAX]
    if math.isinf(rho):
        return wmax, 0.0
    tr = par[P_RHO_T]
    s1 = par[P_SLOPE_LO]
    s2 = par[P_SLOPE_HI] - par[P_SLOPE_LO]
    ws = par[P_WMIN] + s1 * softplus(rho - par[P_CUT_LO], tr) + s2 * softplus(rho - par[P_CUT_HI], tr)
    dws = s1 * sigmoid((rho - par[P_CUT_LO]) / tr) + s2 * sigmoid((rho - par[P_CUT_HI]) / tr)
    gap = wmax - ws
    tc = par[P_CAP_T]
    return wmax - softplus(gap, tc), sigmoid(gap / tc) * dws


@_jit
def value_grad(f, s, u, data, cap, dur, u_ref, par, gf, gs, gu, T, dTdf, dTdu):
    """Smoothed sub-objective; fills the partial gradients and feeder-time terms."""
    n_p, n_k = f.shape
    reg = par[P_REG]
    t = par[P_T]
    occ = par[P_OCC]
    y = np.empty(n_p)
    dy = np.empty(n_p)
    value = 0.0
    for k in range(n_k):
        z1, dz1 = feeder_factor(u[k], u_ref[k], 1, par)
        z2, dz2 = feeder_factor(u[k], u_ref[k], 2, par)
        tk = 0.0
        dtu = 0.0
        for p in range(n_p):
            y[p], dy[p] = transit_factor(f[p, k], data[FREF, p, k], par)
            st = z1 * data[B1, p, k] + z2 * data[B2, p, k]
            dst = dz1 * data[B1, p, k] + dz2 * data[B2, p, k]
            tk += y[p] * st
            dtu += y[p] * dst
            dTdf[p, k] = dy[p] * st
        T[k] = tk
        dTdu[k] = dtu
        rs = occ * s[k]
        pos = tk > 0.0
        inv_rho = rs / tk if pos else 0.0
        acc_gx_fd = 0.0
        acc_gu = 0.0
        val_k = 0.0
        for p in range(n_p):
            sq = data[A0, p, k] + z1 * data[A1, p, k] + z2 * data[A2, p, k]
            dsq = dz1 * data[A1, p, k] + dz2 * data[A2, p, k]
            sf = z1 * data[C1, p, k] + z2 * data[C2, p, k]
            dsf = dz1 * data[C1, p, k] + dz2 * data[C2, p, k]
            q = y[p] * sq
            fd = y[p] * sf
            phi = fd * (1.0 - inv_rho)
            xt = y[p] * data[QPI, p, k] - cap[p] * f[p, k]
            rt = softplus(xt, t)
            rx = softplus(phi, t)
            m = smooth_max(rt, rx, t)
            wt = sigmoid((rt - rx) / t)
            g_t = wt * sigmoid(xt / t)
            g_x = (1.0 - wt) * sigmoid(phi / t)
            dev = f[p, k] - data[FREF, p, k]
            val_k += q - m - reg * dev * dev
            gf[p, k] = dur[k] * (dy[p] * sq - g_t * (dy[p] * data[QPI, p, k] - cap[p])
                                 - g_x * dy[p] * sf * (1.0 - inv_rho) - 2.0 * reg * dev)
            acc_gx_fd += g_x * fd
            acc_gu += y[p] * dsq - g_x * y[p] * dsf * (1.0 - inv_rho)
        cross = acc_gx_fd * rs / (tk * tk) if pos else 0.0
        for p in range(n_p):
            gf[p, k] -= dur[k] * cross * dTdf[p, k]
        gs[k] = dur[k] * occ * acc_gx_fd / tk if pos else 0.0
        du = u[k] - u_ref[k]
        gu[k] = dur[k] * (acc_gu - cross * dtu - 2.0 * reg * du)
        value += dur[k] * (val_k - reg * du * du)
    return value


@_jit
def consistent_wait(f, s, data, u_ref, par, u_out):
    """Per period, the wait ``u`` with ``u = wait_curve(rho(u))``; ``rho`` depends on
    ``u`` through the feeder elasticities."""
    n_p, n_k = f.shape
    occ = par[P_OCC]
    for k in range(n_k):
        y1 = 0.0
        y2 = 0.0
        for p in range(n_p):
            yt, _ = transit_factor(f[p, k], data[FREF, p, k], par)
            y1 += yt * data[B1, p, k]
            y2 += yt * data[B2, p, k]
        if y1 + y2 <= 0.0:
            u_out[k] = wait_curve(0.0, par)[0]
            continue
        if s[k] <= 0.0:
            u_out[k] = par[P_WMAX]
            continue
        lo = par[P_WMIN] - 1.0
        hi = par[P_WMAX] + 1.0
        u = min(max(u_ref[k], lo), hi)
        for _ in range(60):
            z1, dz1 = feeder_factor(u, u_ref[k], 1, par)
            z2, dz2 = feeder_factor(u, u_ref[k], 2, par)
            rho = (z1 * y1 + z2 * y2) / (occ * s[k])
            wc, dwc = wait_curve(rho, par)
            h = u - wc
            if abs(h) < 1e-12:
                break
            if h < 0.0:
                lo = u
            else:
                hi = u
            nxt = u - h / (1.0 - dwc * (dz1 * y1 + dz2 * y2) / (occ * s[k]))
            if not (lo < nxt < hi):
                nxt = 0.5 * (lo + hi)
            if nxt == u:
                break
            u = nxt
        u_out[k] = u


@_jit
def reduced(f, s, data, cap, dur, u_ref, u_lo, par, gf, gs, u):
    """Objective with the wait eliminated through the wait curve (floored at the
    local lower bound); ``gf``/``gs`` receive the total derivatives."""
    n_p, n_k = f.shape
    u_star = np.empty(n_k)
    consistent_wait(f, s, data, u_ref, par, u_star)
    for k in range(n_k):
        u[k] = max(u_star[k], u_lo[k])
    gu = np.empty(n_k)
    T = np.empty(n_k)
    dTdf = np.empty((n_p, n_k))
    dTdu = np.empty(n_k)
    value = value_grad(f, s, u, data, cap, dur, u_ref, par, gf, gs, gu, T, dTdf, dTdu)
    occ = par[P_OCC]
    for k in range(n_k):
        if not (u_star[k] > u_lo[k] and s[k] > 0.0 and T[k] > 0.0):
            continue
        rs = occ * s[k]
        rho = T[k] / rs
        _, dwc = wait_curve(rho, par)
        denom = 1.0 - dwc * dTdu[k] / rs
        for p in range(n_p):
            gf[p, k] += gu[k] * dwc * dTdf[p, k] / rs / denom
        gs[k] += gu[k] * dwc * (-rho / s[k]) / denom
    return value


@_jit
def _penalized(xi, lo, width, n_p, n_k, mu, data, cap, dur, u_ref, u_lo, cost_f, cost_s, par, g):
    n_f = n_p * n_k
    f = np.empty((n_p, n_k))
    s = np.empty(n_k)
    for j in range(n_f):
        f[j // n_k, j % n_k] = lo[j] + width[j] * xi[j]
    for k in range(n_k):
        s[k] = lo[n_f + k] + width[n_f + k] * xi[n_f + k]
    gf = np.empty((n_p, n_k))
    gs = np.empty(n_k)
    u = np.empty(n_k)
    val = reduced(f, s, data, cap, dur, u_ref, u_lo, par, gf, gs, u)
    cost = 0.0
    for p in range(n_p):
        for k in range(n_k):
            cost += cost_f[p, k] * f[p, k]
    for k in range(n_k):
        cost += cost_s[k] * s[k]
    budget = par[P_BUDGET]
    viol = cost / budget - 1.0
    over = max(viol, 0.0)
    gpen = 2.0 * mu * over / budget
    for j in range(n_f):
        g[j] = (gf[j // n_k, j % n_k] - gpen * cost_f[j // n_k, j % n_k]) * width[j]
    for k in range(n_k):
        g[n_f + k] = (gs[k] - gpen * cost_s[k]) * width[n_f + k]
    return val - mu * over * over, viol


@_jit
def spg(xi0, lo, width, n_p, n_k, mu, max_iter, data, cap, dur, u_ref, u_lo, cost_f, cost_s, par,
        trace_val, trace_step, trace_viol):
    """Spectral projected gradient ascent on the unit box with a nonmonotone
    Armijo search over the last 5 values. Returns (xi, iterations)."""
    n = xi0.size
    mem = 5
    xi = xi0.copy()
    g = np.empty(n)
    g_new = np.empty(n)
    val, viol = _penalized(xi, lo, width, n_p, n_k, mu, data, cap, dur, u_ref, u_lo, cost_f, cost_s, par, g)
    hist = np.full(mem, val)
    gmax = 0.0
    for j in range(n):
        gmax = max(gmax, abs(g[j]))
    alpha = 0.1 / gmax if gmax > 0.0 else 1.0
    d = np.empty(n)
    xn = np.empty(n)
    it = 0
    while it < max_iter:
        dmax = 0.0
        slope = 0.0
        for j in range(n):
            d[j] = min(max(xi[j] + alpha * g[j], 0.0), 1.0) - xi[j]
            dmax = max(dmax, abs(d[j]))
            slope += g[j] * d[j]
        if dmax < 1e-10:
            break
        ref = hist.min()
        lam = 1.0
        ok = False
        for _ in range(40):
            for j in range(n):
                xn[j] = xi[j] + lam * d[j]
            val_n, viol_n = _penalized(xn, lo, width, n_p, n_k, mu, data, cap, dur, u_ref, u_lo,
                                       cost_f, cost_s, par, g_new)
            if val_n >= ref + 1e-4 * lam * slope:
                ok = True
                break
            lam *= 0.5
        if not ok:
            break
        ss = 0.0
        sy = 0.0
        for j in range(n):
            sj = xn[j] - xi[j]
            ss += sj * sj
            sy += sj * (g[j] - g_new[j])
        alpha = min(max(ss / sy, 1e-10), 1e10) if sy > 0.0 else min(alpha * 10.0, 1e10)
        trace_val[it] = val_n
        trace_step[it] = lam * dmax
        trace_viol[it] = viol_n
        it += 1
        gain = val_n - val
        xi[:] = xn
        g[:] = g_new
        val = val_n
        hist[it % mem] = val
        if abs(gain) <= 1e-11 * max(1.0, abs(val)):
            break
    return xi, it
