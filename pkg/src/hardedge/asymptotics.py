"""Leading tail factors, the p1 table, the hitting bound and tail-constant diagnostics.

p1(x) is the probability that the lam = 1 x-process started at x never
explodes.  Two constructions are provided:

* ``solve_p1_table`` solves the backward Kolmogorov equation in the moving
  coordinate u = x + beta t/8, where the drift is
  (beta/4)(a + 1) - (beta/4)(e^{-u} + e^{u - beta t/4}).  At a late time
  t_end the second forcing term is negligible and the survival probability
  of the homogeneous process (``exit_probability``) is the exact terminal
  condition.  Space uses the exponentially fitted (Il'in / Scharfetter-
  Gummel) difference scheme, time BDF2.  The per-node error is bounded by
  the difference between two resolutions.
* ``build_p1_table`` is the Monte Carlo construction with shared noise
  across start points and the same exit-probability terminal weight.
"""
from __future__ import annotations

import functools
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.linalg import solve_banded
from scipy.ndimage import maximum_filter1d
from scipy.optimize import isotonic_regression
from scipy.special import gammaincc

from .core import (DomainError, EnsembleParams, MonteCarloEstimate, SimConfig, TimeGrid,
                   entrance_start, ordered_map)
from .diffusion import DriftSpec, simulate_batch
from .girsanov import _importance_run, estimate_e_lambda, leading_log

CSV_MAGIC = "# hardedge v1"


def leading_log_factor(params: EnsembleParams, lam: float) -> float:
    """-(beta/2) lam + 2 gamma sqrt(lam) - gamma (gamma + 1 - beta/2) log(lam) / (2 beta)."""
    return leading_log(params, lam)


def exit_probability(params: EnsembleParams, x):
    """Non-explosion probability of the homogeneous comparison process from ``x``.

    The ratio of scale-function integrals
    int_{-inf}^x exp{-(beta/2)[(a+1) xi + e^{-xi}]} dxi / (same over R)
    reduces, with w = (beta/2) e^{-xi}, to the regularized upper incomplete
    gamma function Q((beta/2)(a+1), (beta/2) e^{-x}).
    """
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore"):
        z = 0.5 * params.beta * np.exp(-x)
    out = gammaincc(params.rho, z)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class P1Table:
    """Tabulated p1 with PCHIP interpolation.

    ``stderr`` holds the per-node error: the sampling standard error for Monte
    Carlo tables, the resolution-difference bound for PDE tables.  Lookups
    below the grid return 0, above it the plateau.
    """

    xs: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    plateau: float
    beta: float
    a: float
    method: str = "pde"
    plateau_stderr: float = 0.0
    flagged: tuple = ()
    raw: np.ndarray | None = field(default=None, repr=False, compare=False)  # before projection
    _interp: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        if xs.ndim != 1 or xs.size < 2 or np.any(np.diff(xs) <= 0):
            raise DomainError("xs must be strictly increasing with at least two nodes")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        object.__setattr__(self, "stderr", np.asarray(self.stderr, dtype=float))
        object.__setattr__(self, "_interp", PchipInterpolator(xs, self.values, extrapolate=False))

    def lookup(self, x):
        x = np.asarray(x, dtype=float)
        inside = np.clip(x, self.xs[0], self.xs[-1])
        v = np.clip(self._interp(inside), 0.0, 1.0)
        v = np.where(x < self.xs[0], 0.0, np.where(x > self.xs[-1], self.plateau, v))
        return float(v) if v.ndim == 0 else v

    def error(self, x):
        x = np.asarray(x, dtype=float)
        e = np.interp(x, self.xs, self.stderr)
        top = self.plateau_stderr + abs(self.plateau - self.values[-1])
        e = np.where(x < self.xs[0], self.stderr[0], np.where(x > self.xs[-1], top, e))
        return float(e) if e.ndim == 0 else e

    def save(self, path) -> None:
        buf = io.StringIO()
        buf.write(CSV_MAGIC + "\n")
        buf.write(f"# beta={self.beta!r} a={self.a!r} method={self.method} "
                  f"plateau={self.plateau:.17g} plateau_stderr={self.plateau_stderr:.17g}\n")
        buf.write("x,value,stderr\n")
        for x, v, s in zip(self.xs, self.values, self.stderr):
            buf.write(f"{x:.17g},{v:.17g},{s:.17g}\n")
        Path(path).write_text(buf.getvalue())

    @classmethod
    def load(cls, path) -> "P1Table":
        lines = Path(path).read_text().splitlines()
        if not lines or lines[0] != CSV_MAGIC:
            raise DomainError(f"{path}: not a hardedge v1 table")
        meta = dict(kv.split("=", 1) for kv in lines[1].lstrip("# ").split())
        if lines[2] != "x,value,stderr":
            raise DomainError(f"{path}: unexpected column header")
        data = np.loadtxt(lines[3:], delimiter=",", ndmin=2)
        return cls(data[:, 0], data[:, 1], data[:, 2], float(meta["plateau"]),
                   float(meta["beta"]), float(meta["a"]), meta["method"],
                   float(meta["plateau_stderr"]))


def default_t_end(params: EnsembleParams) -> float:
    """Switch time to the homogeneous terminal condition for the PDE table."""
    return min(400.0, max(24.0, 30.0 / (params.beta * min(1.0, params.a + 1.0) ** 2)))


def _solve_backward(params: EnsembleParams, t_end: float, du: float, dtau: float,
                    u_lo: float = -10.0, margin: float = 14.0):
    beta = params.beta
    u_hi = margin + 0.25 * beta * t_end
    J = int(round((u_hi - u_lo) / du)) + 1
    u = u_lo + du * np.arange(J)
    v = np.asarray(exit_probability(params, u), dtype=float)
    prev = None
    n_steps = int(round(t_end / dtau))
    c1 = 0.25 * beta * (params.a + 1.0)
    ab = np.zeros((3, J))
    for n in range(n_steps):
        t = t_end - (n + 1) * dtau
        mu = c1 - 0.25 * beta * (np.exp(-u) + np.exp(np.minimum(u - 0.25 * beta * t, 700.0)))
        pe = mu * du
        small = np.abs(pe) < 1e-8
        sig = np.where(small, 1.0, pe / np.tanh(np.where(small, 1.0, pe)))
        lo = 0.5 * sig / du ** 2 - mu / (2 * du)
        di = -sig / du ** 2
        up = 0.5 * sig / du ** 2 + mu / (2 * du)
        if prev is None:
            c0, rhs = 1.0, v.copy()
        else:
            c0, rhs = 1.5, 2.0 * v - 0.5 * prev
        ab[:] = 0.0
        ab[1] = c0 - dtau * di
        ab[0, 1:] = -dtau * up[:-1]
        ab[2, :-1] = -dtau * lo[1:]
        # absorbing (exploded) bottom, reflecting top
        ab[1, 0], ab[0, 1], rhs[0] = 1.0, 0.0, 0.0
        ab[1, -1], ab[2, -2], rhs[-1] = 1.0, -1.0, 0.0
        prev, v = v, solve_banded((1, 1), ab, rhs)
    return u, v


@functools.lru_cache(maxsize=16)
def _cached_pde(beta, a, du, t_end):
    params = EnsembleParams(beta, a, 0.5 * beta * (a + 1.0) - 1.0)
    return solve_p1_table(params, du=du, t_end=t_end, cache=False)


def solve_p1_table(params: EnsembleParams, du: float = 0.01, t_end: float | None = None,
                   x_min: float = -8.0, x_max: float = 12.0, cache: bool = True) -> P1Table:
    """p1 from the backward equation.

    The per-node error bound is the largest fine-minus-coarse difference
    (coarse run at twice the step) within distance 1 of the node.
    """
    t_end = default_t_end(params) if t_end is None else float(t_end)
    if cache:
        return _cached_pde(params.beta, params.a, du, t_end)
    xs = np.round(np.arange(x_min, x_max + du / 2, du), 10)
    u, fine = _solve_backward(params, t_end, du, du / 2)
    uc, coarse = _solve_backward(params, t_end, 2 * du, du)
    vf = np.interp(xs, u, fine)
    vc = np.interp(xs, uc, coarse)
    # the two resolutions can cross, so take the largest difference within +-1 in x
    err = maximum_filter1d(np.abs(vf - vc), int(round(2.0 / du)) + 1, mode="nearest")
    vals = np.clip(isotonic_regression(vf).x, 0.0, 1.0)
    return P1Table(xs, vals, err, float(vals[-1]), params.beta, params.a, "pde",
                   float(err[-1]))


def _mc_node_values(params, xs, config, t_end):
    grid = TimeGrid.spanning(0.0, t_end, config.dt)
    spec = DriftSpec("x", params, 1.0)
    one = replace(config, threads=1)

    def node(x):
        res = simulate_batch(spec, x, grid, one)
        u_end = res.terminal + 0.125 * params.beta * grid.t1
        w = np.where(res.survived, exit_probability(params, u_end), 0.0)
        return MonteCarloEstimate.from_samples(w, config.seed)

    return ordered_map(node, list(xs), config.threads)


def build_p1_table(params: EnsembleParams, config: SimConfig, xs=None,
                   t_end: float | None = None) -> P1Table:
    """Monte Carlo p1 table with shared noise across start points.

    Every node reuses streams ``stream_base + k``, which couples the paths
    monotonically in the start point.  Survivors at ``t_end`` (default
    48/beta) are weighted by ``exit_probability`` of u = x + beta t_end/8.
    The node values are projected onto nondecreasing sequences; nodes with
    stderr above 0.02 are listed in ``flagged``.
    """
    xs = np.round(np.arange(-8.0, 12.0 + 0.05, 0.1), 10) if xs is None else np.asarray(xs, float)
    t_end = 48.0 / params.beta if t_end is None else float(t_end)
    start = entrance_start(1.0)
    ests = _mc_node_values(params, list(xs) + [start], config, t_end)
    raw = np.array([e.mean for e in ests[:-1]])
    se = np.array([e.stderr for e in ests[:-1]])
    w = 1.0 / np.maximum(se, 1e-6) ** 2
    vals = np.clip(isotonic_regression(raw, weights=w).x, 0.0, 1.0)
    flagged = tuple(float(x) for x, s in zip(xs, se) if s > 0.02)
    return P1Table(xs, vals, se, ests[-1].mean, params.beta, params.a, "mc",
                   ests[-1].stderr, flagged, raw)


def lemma4_bound(params: EnsembleParams, x, kappa3: float):
    """kappa3 exp(-(beta/4) e^{-x})."""
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore"):
        out = kappa3 * np.exp(-0.25 * params.beta * np.exp(-x))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Kappa3Calibration:
    kappa3: float
    xs: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    analytic: float


def analytic_kappa3(params: EnsembleParams) -> float:
    """sup over x of exit_probability(x) e^{(beta/4) e^{-x}}, finite since Q(rho, z) ~ e^{-z}."""
    z = np.logspace(-10, 4, 20001)
    lq = np.log(np.maximum(gammaincc(params.rho, z), 1e-300)) + 0.5 * z
    lq[gammaincc(params.rho, z) == 0] = -np.inf
    return float(np.exp(lq.max()))


def calibrate_kappa3(params: EnsembleParams, config: SimConfig, xs=None,
                     safety: float = 1.2) -> Kappa3Calibration:
    """kappa3 = safety * max over xs of p1(x) e^{(beta/4) e^{-x}} from a Monte Carlo table.

    Pass a config whose seed differs from the one used for testing.
    """
    xs = np.arange(-6.0, 0.0 + 1e-9, 0.25) if xs is None else np.asarray(xs, dtype=float)
    ests = _mc_node_values(params, xs, config, 48.0 / params.beta)
    vals = np.array([e.mean for e in ests])
    se = np.array([e.stderr for e in ests])
    scaled = vals * np.exp(0.25 * params.beta * np.exp(-xs))
    return Kappa3Calibration(safety * float(scaled.max()), xs, vals, se, analytic_kappa3(params))


@dataclass(frozen=True)
class TailFit:
    lambdas: np.ndarray
    e_estimates: list
    flatness: float
    extrapolated_e: float
    flagged: bool


def tail_fit(params: EnsembleParams, lambdas, p1: P1Table, config: SimConfig,
             threshold: float = 0.15) -> TailFit:
    """Estimate e_lambda on a grid; flatness is the max pairwise spread over the minimum.

    Block ``i`` of paths uses streams ``stream_base + i n_paths``.
    """
    lams = np.asarray(lambdas, dtype=float)
    if lams.size == 0 or np.any(np.diff(lams) <= 0) or np.any(lams < 4):
        raise DomainError("lambdas must be increasing and >= 4")
    ests = [estimate_e_lambda(params, float(l), p1,
                              replace(config, stream_base=config.stream_base + i * config.n_paths))
            for i, l in enumerate(lams)]
    means = np.array([e.mean for e in ests])
    flat = float((means.max() - means.min()) / means.min()) if means.min() > 0 else math.inf
    return TailFit(lams, ests, flat, float(means[-1]), flat > threshold)


@dataclass(frozen=True)
class SandwichCheck:
    kappa4: float
    kappa5: float
    fraction_inside: float
    n_paths: int


def _sandwich_logs(params, lam, p1, config):
    res, resid, pv, _, _, _ = _importance_run(params, lam, p1, config)
    y = res.terminal
    neg = np.maximum(0.0, -y)
    with np.errstate(divide="ignore"):
        log_p1 = np.log(pv)
    log_s = log_p1 + resid
    return y, neg, log_p1, log_s


def sandwich_check(params: EnsembleParams, lam: float, p1: P1Table, calib: SimConfig,
                   test: SimConfig, kappa5: float | None = None,
                   safety: float = 1.2) -> SandwichCheck:
    """Two-sided envelope of p1(y_T) e^{residual} depending on y_T only.

    Lower: p1(y) e^{-kappa5 [y]^-} / kappa4.  Upper:
    kappa4 e^{kappa5 [y]^- + (beta/4) e^{[y]^-}}.  kappa4 is fitted on the
    ``calib`` paths (times ``safety``) and the envelope is evaluated on the
    independent ``test`` paths.
    """
    k5 = abs(params.gamma) + 1.0 if kappa5 is None else float(kappa5)
    b4 = 0.25 * params.beta

    def gaps(cfg):
        y, neg, log_p1, log_s = _sandwich_logs(params, lam, p1, cfg)
        lo_gap = (log_p1 - k5 * neg) - log_s
        hi_gap = log_s - (k5 * neg + b4 * np.exp(neg))
        ok = np.isfinite(log_s)
        return np.maximum(np.where(ok, lo_gap, -np.inf), np.where(ok, hi_gap, -np.inf))

    k4 = math.exp(max(0.0, float(np.max(gaps(calib))))) * safety
    g = gaps(test)
    inside = float(np.mean(g <= math.log(k4)))
    return SandwichCheck(k4, k5, inside, test.n_paths)
