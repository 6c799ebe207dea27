"""Compiled scalar functions and path integrators.

Drift corrections are evaluated in closed form.  With tau = tanh(y/2) and
C = gamma/(8 beta), the second correction and its antiderivative reduce to

    h2(y)       = C (1 - tau^2) ((2 - beta/2) + (gamma - 1) tau)
    int_0^y h2  = C (2 (2 - beta/2) tau + (gamma - 1) tau^2)

which removes the removable singularity of the defining quotient at y = 0.

Parameter vectors ``par`` use the slots below.
"""
import math

import numpy as np
from numba import njit

BETA, A, K, SQRT_LAM, T_HOR, H0, GAMMA, C2, A2, B2 = range(10)
N_PAR = 10

X, Q, Y, Y_TILDE, Y_HOMOGENEOUS, Z = range(6)

_LOG2 = math.log(2.0)


def pack(beta, a, lam=1.0, T=0.0, h0=0.0):
    gamma = 0.5 * beta * (a + 1.0) - 1.0
    par = np.zeros(N_PAR)
    par[BETA] = beta
    par[A] = a
    par[K] = 0.25 * beta * (a + 0.5)
    par[SQRT_LAM] = math.sqrt(lam)
    par[T_HOR] = T
    par[H0] = h0
    par[GAMMA] = gamma
    par[C2] = gamma / (8.0 * beta)
    par[A2] = 2.0 - 0.5 * beta
    par[B2] = gamma - 1.0
    return par


@njit(cache=True, nogil=True)
def logistic_neg(y):
    # 1 / (1 + e^y) without overflow
    if y > 0.0:
        e = math.exp(-y)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(y))


@njit(cache=True, nogil=True)
def h1(y, gamma):
    return -gamma * logistic_neg(y)


@njit(cache=True, nogil=True)
def h1p(y, gamma):
    s = logistic_neg(y)
    return gamma * s * (1.0 - s)


@njit(cache=True, nogil=True)
def softplus(x):
    if x > 0.0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


@njit(cache=True, nogil=True)
def H1int(y, gamma):
    """int_0^y h1 = gamma (log(1 + e^{-y}) - log 2)."""
    return gamma * (softplus(-y) - _LOG2)


@njit(cache=True, nogil=True)
def h2(y, c2, a2, b2):
    tau = math.tanh(0.5 * y)
    return c2 * (1.0 - tau * tau) * (a2 + b2 * tau)


@njit(cache=True, nogil=True)
def h2p(y, c2, a2, b2):
    tau = math.tanh(0.5 * y)
    return 0.5 * (1.0 - tau * tau) * c2 * (b2 - 2.0 * a2 * tau - 3.0 * b2 * tau * tau)


@njit(cache=True, nogil=True)
def H2int(y, c2, a2, b2):
    tau = math.tanh(0.5 * y)
    return c2 * (2.0 * a2 * tau + b2 * tau * tau)


@njit(cache=True, nogil=True)
def _sig_tau(y):
    # logistic 1/(1 + e^y) and tanh(y/2) = 1 - 2/(1 + e^y) from one exponential
    if y > 0.0:
        e = math.exp(-y)
        sig = e / (1.0 + e)
    else:
        sig = 1.0 / (1.0 + math.exp(y))
    return sig, 1.0 - 2.0 * sig


@njit(cache=True, nogil=True)
def phi(s, y, par):
    """Path integrand of the residual log-weight at time-to-go ``s``."""
    eps = math.exp(-0.125 * par[BETA] * s)
    sig, tau = _sig_tau(y)
    c2 = par[C2]
    a2 = par[A2]
    b2 = par[B2]
    om = 1.0 - tau * tau
    v2 = c2 * om * (a2 + b2 * tau)
    big_g = c2 * (2.0 * a2 * tau + b2 * tau * tau)
    v2p = 0.5 * om * c2 * (b2 - 2.0 * a2 * tau - 3.0 * b2 * tau * tau)
    inner = (par[K] - par[GAMMA] * sig) * v2 + 0.125 * par[BETA] * big_g + 0.5 * v2p
    return 0.5 * eps * eps * v2 * v2 + eps * inner


@njit(cache=True, nogil=True)
def h_total(t, y, par):
    eps = math.exp(-0.125 * par[BETA] * (par[T_HOR] - t))
    sig, tau = _sig_tau(y)
    return par[K] - par[GAMMA] * sig + eps * par[C2] * (1.0 - tau * tau) * (par[A2] + par[B2] * tau)


@njit(cache=True, nogil=True)
def _y_terms(t, v, par, eT, cm):
    """y-drift and the shared pieces phi needs; ``eT = e^{-beta T/8}``, ``cm = (beta/2) sqrt(lam)``."""
    g = math.exp(0.125 * par[BETA] * t)
    eps = eT * g
    m = cm / g
    vv = min(max(v, -700.0), 700.0)
    e = math.exp(vv)
    sig = 1.0 / (1.0 + e)
    tau = 1.0 - 2.0 * sig
    om = 1.0 - tau * tau
    v2 = par[C2] * om * (par[A2] + par[B2] * tau)
    mu = par[K] - par[GAMMA] * sig + eps * v2 - m * 0.5 * (e - 1.0 / e)
    return mu, eps, sig, tau, om, v2


@njit(cache=True, nogil=True)
def _phi_from(eps, sig, tau, om, v2, par):
    c2 = par[C2]
    a2 = par[A2]
    b2 = par[B2]
    big_g = c2 * (2.0 * a2 * tau + b2 * tau * tau)
    v2p = 0.5 * om * c2 * (b2 - 2.0 * a2 * tau - 3.0 * b2 * tau * tau)
    inner = (par[K] - par[GAMMA] * sig) * v2 + 0.125 * par[BETA] * big_g + 0.5 * v2p
    return 0.5 * eps * eps * v2 * v2 + eps * inner


@njit(cache=True, nogil=True)
def y_batch(par, starts, t0, dt, Z, cap, max_move, out_v, out_status, out_phi):
    """y-paths with the left-endpoint phi sum, sharing exponentials with the drift."""
    n_paths, n = Z.shape
    sq = math.sqrt(dt)
    eT = math.exp(-0.125 * par[BETA] * par[T_HOR])
    cm = 0.5 * par[BETA] * par[SQRT_LAM]
    for p in range(n_paths):
        v = starts[p]
        acc = 0.0
        st = 0
        for i in range(n):
            t = t0 + i * dt
            dw = Z[p, i] * sq
            rem = dt
            k = 0
            while rem > 0.0:
                mu, eps, sig, tau, om, v2 = _y_terms(t, v, par, eT, cm)
                if k == 0:
                    acc += _phi_from(eps, sig, tau, om, v2, par) * dt
                h = max_move / (1.0 + abs(mu))
                if h >= rem:
                    h = rem
                v += mu * h + dw * (h / dt)
                t += h
                rem -= h
                k += 1
                if k > cap:
                    st = 2
                    break
            if st != 0:
                break
        out_v[p] = v
        out_status[p] = st
        out_phi[p] = acc


@njit(cache=True, nogil=True)
def drift(kind, t, v, par):
    beta = par[BETA]
    if kind == X:
        m = 0.5 * beta * par[SQRT_LAM] * math.exp(-0.125 * beta * t)
        return par[K] - m * math.cosh(v)
    if kind == Y:
        eT = math.exp(-0.125 * beta * par[T_HOR])
        return _y_terms(t, v, par, eT, 0.5 * beta * par[SQRT_LAM])[0]
    if kind == Z:
        return par[H0] - 0.5 * beta * math.sinh(v)
    if kind == Y_TILDE:
        m = 0.25 * beta * par[SQRT_LAM] * math.exp(-0.125 * beta * t)
        return par[K] - m * math.exp(-v)
    if kind == Y_HOMOGENEOUS:
        return 0.25 * beta * (par[A] + 1.0 - math.exp(-v))
    return math.nan


@njit(cache=True, nogil=True)
def _is_explosive(kind):
    return kind == X or kind == Y_TILDE or kind == Y_HOMOGENEOUS


@njit(cache=True, nogil=True)
def _advance(kind, t, v, dt, dw, par, floor, cap, max_move):
    """One grid step with adaptive substeps; returns (v, status, tau).

    The Brownian increment ``dw`` is spread linearly over the substeps, which
    for additive noise converges to the Ito solution.
    """
    rem = dt
    n = 0
    explosive = _is_explosive(kind)
    while rem > 0.0:
        mu = drift(kind, t, v, par)
        h = max_move / (1.0 + abs(mu))
        if h >= rem:
            h = rem
        v += mu * h + dw * (h / dt)
        t += h
        rem -= h
        if kind == Z and v > 0.0:
            v = -v
        if explosive and v < floor:
            return v, 1, t
        n += 1
        if n > cap:
            return v, 2, t
    return v, 0, t


@njit(cache=True, nogil=True)
def integrate_path(kind, par, start, t0, dt, z, floor, cap, max_move):
    """Single path on a uniform grid; ``z`` holds standard normals per step."""
    n = z.shape[0]
    vals = np.empty(n + 1)
    vals[0] = start
    v = start
    sq = math.sqrt(dt)
    for i in range(n):
        t = t0 + i * dt
        v, st, tau = _advance(kind, t, v, dt, z[i] * sq, par, floor, cap, max_move)
        vals[i + 1] = v
        if st != 0:
            return vals[: i + 2], st, tau
    return vals, 0, math.nan


@njit(cache=True, nogil=True)
def integrate_batch(kind, par, starts, t0, dt, Z, floor, cap, max_move, with_phi,
                    out_v, out_status, out_tau, out_phi):
    """Many independent paths; keeps only terminal state and phi quadrature.

    Path ``p`` starts at ``starts[p]`` and uses the normals ``Z[p]``.

    ``out_phi`` accumulates the left-endpoint sum of phi(T - t_i, v_i) dt,
    used by the importance-sampling weight of the y-process.
    """
    n_paths, n = Z.shape
    sq = math.sqrt(dt)
    T = par[T_HOR]
    for p in range(n_paths):
        v = starts[p]
        st = 0
        tau = math.nan
        acc = 0.0
        for i in range(n):
            t = t0 + i * dt
            if with_phi:
                acc += phi(T - t, v, par) * dt
            v, st, tau = _advance(kind, t, v, dt, Z[p, i] * sq, par, floor, cap, max_move)
            if st != 0:
                break
        out_v[p] = v
        out_status[p] = st
        out_tau[p] = tau
        out_phi[p] = acc


@njit(cache=True, nogil=True)
def integrate_coupled(kinds, pars, starts, start_index, t0, dt, z, max_move, out):
    """Several processes on one noise sequence with a common substep grid.

    Member ``j`` is inactive (NaN) before grid index ``start_index[j]``,
    where it begins at ``starts[j]``.  Substeps are limited by the steepest
    active drift so that every member sees the same sub-grid, which keeps
    the Euler map order preserving.
    """
    m = kinds.shape[0]
    n = z.shape[0]
    sq = math.sqrt(dt)
    v = np.full(m, np.nan)
    for j in range(m):
        if start_index[j] == 0:
            v[j] = starts[j]
        out[j, 0] = v[j]
    mu = np.empty(m)
    for i in range(n):
        t = t0 + i * dt
        dw = z[i] * sq
        rem = dt
        while rem > 0.0:
            big = 0.0
            for j in range(m):
                if not math.isnan(v[j]):
                    mu[j] = drift(kinds[j], t, v[j], pars[j])
                    if abs(mu[j]) > big:
                        big = abs(mu[j])
            h = max_move / (1.0 + big)
            if h >= rem:
                h = rem
            for j in range(m):
                if not math.isnan(v[j]):
                    v[j] += mu[j] * h + dw * (h / dt)
                    if kinds[j] == Z and v[j] > 0.0:
                        v[j] = -v[j]
            t += h
            rem -= h
        for j in range(m):
            if start_index[j] == i + 1:
                v[j] = starts[j]
            out[j, i + 1] = v[j]


@njit(cache=True, nogil=True)
def _q_drift(phase, s, v, a, lam):
    # phase 0: v = log q (q > 0); phase 1: v = log(-q) after q crossed zero
    if phase == 0:
        return a - math.exp(v) - lam * math.exp(-s - v)
    return a + math.exp(v) + lam * math.exp(-s - v)


@njit(cache=True, nogil=True)
def q_batch(a, c, lam, start, ds, Z, hit_window, floor, ceiling, max_move, cap,
            out_hit, out_explode):
    """Riccati diffusion q in log coordinates, through its zero and beyond.

    Records the zero-passage time (or NaN) within ``hit_window`` and the
    subsequent explosion time to -infinity (or NaN) within the grid span.
    """
    n_paths, n = Z.shape
    sq = math.sqrt(ds)
    for p in range(n_paths):
        v = start
        phase = 0
        hit = math.nan
        boom = math.nan
        for i in range(n):
            s = i * ds
            if phase == 0 and s >= hit_window:
                break
            dw = c * Z[p, i] * sq
            rem = ds
            k = 0
            while rem > 0.0:
                mu = _q_drift(phase, s, v, a, lam)
                h = max_move / (1.0 + abs(mu))
                if h >= rem:
                    h = rem
                v += mu * h + dw * (h / ds)
                s += h
                rem -= h
                k += 1
                if phase == 0 and v < floor and lam > 0.0:
                    phase = 1
                    hit = s
                    v = floor
                elif phase == 1 and v > ceiling:
                    boom = s
                    break
                if k > cap:
                    break
            if not math.isnan(boom) or k > cap:
                break
        out_hit[p] = hit
        out_explode[p] = boom


@njit(cache=True, nogil=True)
def q_path(a, c, lam, start, ds, z, floor, ceiling, max_move, cap):
    """Single q path; returns (log|q| values, phase per point, status, tau)."""
    n = z.shape[0]
    vals = np.empty(n + 1)
    phases = np.zeros(n + 1, dtype=np.int8)
    vals[0] = start
    v = start
    phase = 0
    sq = math.sqrt(ds)
    for i in range(n):
        s = i * ds
        dw = c * z[i] * sq
        rem = ds
        k = 0
        while rem > 0.0:
            mu = _q_drift(phase, s, v, a, lam)
            h = max_move / (1.0 + abs(mu))
            if h >= rem:
                h = rem
            v += mu * h + dw * (h / ds)
            s += h
            rem -= h
            k += 1
            if phase == 0 and v < floor and lam > 0.0:
                phase = 1
                v = floor
            elif phase == 1 and v > ceiling:
                vals[i + 1] = v
                phases[i + 1] = phase
                return vals[: i + 2], phases[: i + 2], 1, s
            if k > cap:
                vals[i + 1] = v
                phases[i + 1] = phase
                return vals[: i + 2], phases[: i + 2], 2, s
        vals[i + 1] = v
        phases[i + 1] = phase
    return vals, phases, 0, math.nan
