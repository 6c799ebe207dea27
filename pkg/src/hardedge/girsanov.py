"""Drift corrections, the Girsanov log-weight and the importance-sampling estimators.

The y-process has drift h(t, y) - (beta/2) sqrt(lam) e^{-beta t/8} sinh(y) with

    h(t, y) = (beta/4)(a + 1/2) + h1(y) + eps(t) h2(y),  eps(t) = e^{-beta (T - t)/8},

so its law differs from that of the x-process by the density R_T.  After Ito's
formula is applied to the antiderivatives of h1 and h2, log R_T splits into a
deterministic leading part and a residual that depends on the path only
through y_0, y_T and a bounded time integral of phi:

    log R_T = -beta lam/2 + 2 gamma sqrt(lam) + (4 kappa/beta) log lam
              + nu(T, y_T) + (beta/2) e^{-y_T} + int_0^T phi(T - t, y_t) dt
              + B(y_0),

where kappa = -gamma (gamma + 1 - beta/2)/8 and

    nu(T, y) = 2 - beta (a + 1/2) - [F1(y) - F1(inf)] - [G(y) - e^{-beta T/8} G(inf)],
    B(y_0)   = -(beta/2) sqrt(lam) e^{-y_0} + [F1(y_0) - F1(inf)]
               + lam^{-1/2} [G(y_0) - G(inf)],

with F1 and G the antiderivatives of h1 and h2 from 0.  B vanishes as
y_0 -> +inf; the estimators use that entrance limit, ``from_start=True``
keeps B for comparison with the discretized stochastic integral.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (DomainError, EnsembleParams, MonteCarloEstimate, SimConfig, TimeGrid,
                   entrance_start, horizon_T)
from .diffusion import DriftSpec, simulate_batch

_LOG2 = math.log(2.0)


def _sigma_neg(y):
    # 1 / (1 + e^y), overflow free
    y = np.asarray(y, dtype=float)
    e = np.exp(-np.abs(y))
    return np.where(y > 0, e / (1.0 + e), 1.0 / (1.0 + e))


class HFamily:
    """Closed-form h1, h2, their derivatives and antiderivatives for one (beta, a).

    h2 is the bounded correction solving the drift-matching identity; with
    tau = tanh(y/2) it equals C (1 - tau^2) (A + B tau), C = gamma/(8 beta),
    A = 2 - beta/2, B = gamma - 1.  All methods accept scalars or arrays.
    """

    def __init__(self, params: EnsembleParams):
        self.params = params
        g = params.gamma
        self.C = g / (8.0 * params.beta)
        self.A = 2.0 - 0.5 * params.beta
        self.B = g - 1.0
        self.H1_inf = -g * _LOG2  # int_0^inf h1
        self.G_inf = self.C * (2.0 * self.A + self.B)  # int_0^inf h2
        self.G_neginf = self.C * (-2.0 * self.A + self.B)  # int_0^{-inf} h2
        self.h0 = self._h0()

    def h1(self, y):
        return -self.params.gamma * _sigma_neg(y)

    def h1p(self, y):
        s = _sigma_neg(y)
        return self.params.gamma * s * (1.0 - s)

    def H1(self, y):
        """int_0^y h1 = gamma (log(1 + e^{-y}) - log 2)."""
        return self.params.gamma * (np.logaddexp(0.0, -np.asarray(y, dtype=float)) - _LOG2)

    def h2(self, y):
        t = np.tanh(0.5 * np.asarray(y, dtype=float))
        return self.C * (1.0 - t * t) * (self.A + self.B * t)

    def h2p(self, y):
        t = np.tanh(0.5 * np.asarray(y, dtype=float))
        return 0.5 * self.C * (1.0 - t * t) * (self.B - 2.0 * self.A * t - 3.0 * self.B * t * t)

    def G(self, y):
        """int_0^y h2."""
        t = np.tanh(0.5 * np.asarray(y, dtype=float))
        return self.C * (2.0 * self.A * t + self.B * t * t)

    def h2_quotient(self, y):
        """h2 from its defining quotient; loses accuracy near y = 0."""
        p = self.params
        y = np.asarray(y, dtype=float)
        k2 = 0.5 * p.beta * (p.a + 0.5)
        num = ((self.h1(y) ** 2 - self.h1(0.0) ** 2) + k2 * (self.h1(y) - self.h1(0.0))
               + (self.h1p(y) - self.h1p(0.0)))
        return num / (p.beta * np.sinh(y))

    def h_total(self, T, t, y):
        return self.params.k + self.h1(y) + np.exp(-0.125 * self.params.beta * (T - t)) * self.h2(y)

    def _h0(self) -> float:
        # inf over y and eps in [0, 1] of h, less a unit margin of 1/2
        y = np.linspace(-40.0, 40.0, 160001)
        vals = self.params.k + self.h1(y) + np.minimum(0.0, self.h2(y))
        lims = [self.params.k, self.params.k - self.params.gamma]
        return float(min(vals.min(), *lims)) - 0.5


def kappa(params: EnsembleParams) -> float:
    return -params.gamma * (params.gamma + 1.0 - 0.5 * params.beta) / 8.0


def kappa_from_h(params: EnsembleParams) -> float:
    """kappa as (1/2) h1(0)^2 + (1/2) h1'(0) + (beta/4)(a + 1/2) h1(0)."""
    g = params.gamma
    h10 = -0.5 * g
    return 0.5 * h10 * h10 + 0.5 * (0.25 * g) + params.k * h10


def nu(params: EnsembleParams, T: float, y, hf: HFamily | None = None):
    """Terminal correction of the log-weight; ``T = inf`` drops the damped G(inf) term."""
    if T < 0:
        raise DomainError("T must be >= 0")
    hf = hf or HFamily(params)
    damp = 0.0 if math.isinf(T) else math.exp(-0.125 * params.beta * T)
    return (2.0 - params.beta * (params.a + 0.5) - (hf.H1(y) - hf.H1_inf)
            - (hf.G(y) - damp * hf.G_inf))


def phi(params: EnsembleParams, s, y, hf: HFamily | None = None):
    """Integrand of the residual time integral at time-to-go ``s``."""
    hf = hf or HFamily(params)
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise DomainError("s must be >= 0")
    eps = np.exp(-0.125 * params.beta * s)
    v2 = hf.h2(y)
    inner = hf.h1(y) * v2 + params.k * v2 + 0.125 * params.beta * hf.G(y) + 0.5 * hf.h2p(y)
    return 0.5 * eps * eps * v2 * v2 + eps * inner


def eta(params: EnsembleParams, s):
    return (2.0 / params.beta) * np.exp(-0.125 * params.beta * np.asarray(s, dtype=float))


def leading_log(params: EnsembleParams, lam: float) -> float:
    """-beta lam/2 + 2 gamma sqrt(lam) - gamma (gamma + 1 - beta/2) log(lam) / (2 beta)."""
    if not lam > 0:
        raise DomainError("lambda must be > 0")
    g = params.gamma
    return (-0.5 * params.beta * lam + 2.0 * g * math.sqrt(lam)
            - g * (g + 1.0 - 0.5 * params.beta) / (2.0 * params.beta) * math.log(lam))


@dataclass(frozen=True)
class GirsanovWeight:
    log_leading: float
    log_residual: float

    @property
    def total(self) -> float:
        return self.log_leading + self.log_residual


def residual_from_endpoints(params: EnsembleParams, lam: float, y_T, phi_integral,
                            hf: HFamily | None = None, y0=None):
    """Residual log-weight from y_T and the phi integral; adds B(y0) when ``y0`` is given."""
    hf = hf or HFamily(params)
    T = horizon_T(params, lam)
    y_T = np.asarray(y_T, dtype=float)
    res = 0.5 * params.beta * np.exp(-y_T) + nu(params, T, y_T, hf) + phi_integral
    if y0 is not None:
        sl = math.sqrt(lam)
        res = res + (-0.5 * params.beta * sl * np.exp(-y0) + (hf.H1(y0) - hf.H1_inf)
                     + (hf.G(y0) - hf.G_inf) / sl)
    return res


def log_R_closed(params: EnsembleParams, lam: float, y_path, from_start: bool = False,
                 hf: HFamily | None = None) -> GirsanovWeight:
    """Closed-form log-weight of a y-path on [0, T]; left-endpoint phi quadrature."""
    if lam < 1:
        raise DomainError("lambda must be >= 1")
    hf = hf or HFamily(params)
    T = horizon_T(params, lam)
    v = np.asarray(y_path.values, dtype=float)
    g = y_path.grid
    t = g.t0 + g.dt * np.arange(len(v) - 1)
    integral = float(np.sum(phi(params, np.maximum(T - t, 0.0), v[:-1], hf)) * g.dt)
    res = residual_from_endpoints(params, lam, v[-1], integral, hf,
                                  y0=v[0] if from_start else None)
    return GirsanovWeight(leading_log(params, lam), float(res))


def f_minus_g(params: EnsembleParams, lam: float, T: float, t, y, hf: HFamily | None = None):
    """Drift difference x minus y: -h1(y) - eps(t) h2(y) - (beta/2) sqrt(lam) e^{-beta t/8} e^{-y}."""
    hf = hf or HFamily(params)
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    m = 0.5 * params.beta * math.sqrt(lam) * np.exp(-0.125 * params.beta * t)
    return -hf.h1(y) - np.exp(-0.125 * params.beta * (T - t)) * hf.h2(y) - m * np.exp(-y)


def log_R_direct(params: EnsembleParams, lam: float, y_path, increments,
                 hf: HFamily | None = None) -> float:
    """Discretized Cameron-Martin-Girsanov exponent with Ito (left-endpoint) sums.

    Uses int (f - g) db - (1/2) int (f - g)^2 dt with ``increments`` the
    Brownian increments behind ``y_path``.  This equals
    int (f - g) dy - (1/2) int (f^2 - g^2) dt in the continuum, but keeps only
    bounded integrands, which matters while y descends from its entrance.
    """
    hf = hf or HFamily(params)
    T = horizon_T(params, lam)
    v = np.asarray(y_path.values, dtype=float)
    dW = np.asarray(increments, dtype=float)[: len(v) - 1]
    g = y_path.grid
    t = g.t0 + g.dt * np.arange(len(v) - 1)
    d = f_minus_g(params, lam, T, t, v[:-1], hf)
    return float(np.sum(d * dW) - 0.5 * np.sum(d * d) * g.dt)


def _importance_run(params, lam, p1, config):
    if lam < 1:
        raise DomainError("lambda must be >= 1")
    T = horizon_T(params, lam)
    start = config.start if config.start is not None else entrance_start(lam)
    grid = TimeGrid.spanning(0.0, T, config.dt)
    res = simulate_batch(DriftSpec("y", params, lam, T), start, grid, config, with_phi=True)
    resid = residual_from_endpoints(params, lam, res.terminal, res.phi_integral)
    return res, resid, p1.lookup(res.terminal), p1.error(res.terminal), T, start


def _importance_estimate(params, lam, p1, config) -> MonteCarloEstimate:
    res, resid, pv, perr, T, start = _importance_run(params, lam, p1, config)
    shift = float(np.max(resid))
    w = np.exp(resid - shift)
    samples = pv * w
    total = float(np.sum(samples))
    k = max(1, int(math.ceil(0.01 * samples.size)))
    top = float(np.sum(np.partition(samples, samples.size - k)[-k:])) if total > 0 else 0.0
    top_share = top / total if total > 0 else 1.0
    ess = total ** 2 / float(np.sum(samples ** 2)) if total > 0 else 0.0
    systematic = float(np.sum(perr * w) / samples.size)
    truncated = float(np.mean(res.status == 2))
    est = MonteCarloEstimate.from_samples(
        samples, config.seed, systematic, method="importance", lam=lam, T=T, start=start,
        top1_share=top_share, degenerate=top_share > 0.5, ess=ess,
        truncated_fraction=truncated, truncation_ok=truncated < 1e-3,
        log_leading=leading_log(params, lam))
    return est.scaled(math.exp(shift))


def estimate_e_lambda(params: EnsembleParams, lam: float, p1, config: SimConfig = SimConfig()
                      ) -> MonteCarloEstimate:
    """Average of p1(y_T) exp(residual log-weight) over y-paths."""
    return _importance_estimate(params, lam, p1, config)


def estimate_p_importance(params: EnsembleParams, lam: float, p1, config: SimConfig = SimConfig()
                          ) -> MonteCarloEstimate:
    """Importance-sampling estimate of P(Lambda > lam); y-paths never explode."""
    e = _importance_estimate(params, lam, p1, config)
    return e.scaled(math.exp(leading_log(params, lam)))


def fit_nu_bound(params: EnsembleParams, T_grid, y_grid, hf: HFamily | None = None
                 ) -> tuple[float, float]:
    """Constants kappa1, kappa2 with |nu(T, y)| <= kappa1 + kappa2 [y]^- on the grid.

    kappa2 is the asymptotic slope of |nu| as y -> -inf, kappa1 the smallest
    offset making the bound hold at every grid point.
    """
    hf = hf or HFamily(params)
    y = np.asarray(y_grid, dtype=float)
    k2 = abs(params.gamma)
    vals = np.array([np.abs(nu(params, T, y, hf)) for T in T_grid])
    k1 = float(np.max(vals - k2 * np.maximum(0.0, -y)))
    return max(k1, 0.0), k2


def phi_bound_constant(params: EnsembleParams, y_grid, hf: HFamily | None = None) -> float:
    """c with |phi(s, y)| <= c eta(s) for all s >= 0 and y on the grid."""
    hf = hf or HFamily(params)
    y = np.asarray(y_grid, dtype=float)
    v2 = hf.h2(y)
    inner = hf.h1(y) * v2 + params.k * v2 + 0.125 * params.beta * hf.G(y) + 0.5 * hf.h2p(y)
    # eps^2 <= eps for eps in (0, 1]
    return float(np.max(0.5 * v2 * v2 + np.abs(inner))) * 0.5 * params.beta
