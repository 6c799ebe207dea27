"""Euler-Maruyama integrators for the x, q, y, y-tilde, homogeneous and z processes.

All integrators take adaptive substeps inside each grid step, with substep
length ``max_move / (1 + |drift|)`` capped by the grid step.  The x-type
processes explode toward -infinity; a path is declared exploded when it
crosses the policy floor.  The reflected z-process is kept in (-inf, 0] by
``v <- -|v|`` after every substep.

The q-process (a Riccati diffusion) is integrated in logarithmic
coordinates: ``log q`` while q > 0 and ``log(-q)`` after q passes through
zero, so that both the zero crossing and the subsequent blow-up to -infinity
are resolved without overflow.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.integrate import cumulative_simpson, quad
from scipy.interpolate import CubicHermiteSpline

from . import _kernels as K
from .core import (DiffusionPath, DomainError, EnsembleParams, MonteCarloEstimate, PathStatus,
                   RngStream, SimConfig, StreamCursor, TimeGrid, chunk_ranges, entrance_start,
                   horizon_T, normal_block, ordered_map)

KINDS = {
    "x": K.X,
    "q": K.Q,
    "y": K.Y,
    "y_tilde": K.Y_TILDE,
    "y_homogeneous": K.Y_HOMOGENEOUS,
    "z": K.Z,
}


@dataclass(frozen=True)
class DriftSpec:
    """Which process to integrate and with which constants.

    ``T`` is only read by the y-process; when left as None it is set to
    ``horizon_T(params, lam)``.
    """

    process_kind: str
    params: EnsembleParams
    lam: float = 1.0
    T: float | None = None
    h0: float = 0.0

    def __post_init__(self):
        if self.process_kind not in KINDS:
            raise DomainError(f"unknown process kind {self.process_kind!r}")
        if self.lam < 0:
            raise DomainError("lambda must be >= 0")
        if self.process_kind == "y":
            if self.lam < 1.0:
                raise DomainError("the y-process needs lambda >= 1")
            if self.T is None:
                object.__setattr__(self, "T", horizon_T(self.params, self.lam))

    @property
    def kind(self) -> int:
        return KINDS[self.process_kind]

    def packed(self) -> np.ndarray:
        return K.pack(self.params.beta, self.params.a, self.lam, self.T or 0.0, self.h0)


@dataclass(frozen=True)
class ExplosionPolicy:
    """Explosion detection and substep control.

    For the q-process ``floor`` is applied to ``log|q|``: crossing it in the
    positive phase marks the zero passage, and ``-floor`` in the negative
    phase marks explosion.
    """

    floor: float = -25.0
    substep_cap: int = 1_000_000
    max_move: float = 0.02

    def __post_init__(self):
        if not self.floor < -10.0:
            raise DomainError("explosion floor must be below -10")
        if self.substep_cap < 1 or not self.max_move > 0:
            raise DomainError("substep_cap and max_move must be positive")

    @classmethod
    def from_config(cls, config: SimConfig) -> "ExplosionPolicy":
        return cls(config.floor, config.substep_cap, config.max_move)


def drift(spec: DriftSpec, t: float, value: float):
    """Drift of the process at ``(t, value)``.

    For the q-process returns the pair ``(diffusion coefficient, drift)`` of
    dq = (2/sqrt(beta)) q db + [(a + 2/beta) q - q^2 - lam e^{-t}] dt.
    """
    p = spec.params
    if spec.process_kind == "q":
        sig = 2.0 / math.sqrt(p.beta) * value
        return sig, (p.a + 2.0 / p.beta) * value - value * value - spec.lam * math.exp(-t)
    return K.drift(spec.kind, float(t), float(value), spec.packed())


def integrate(spec: DriftSpec, start: float, grid: TimeGrid,
              policy: ExplosionPolicy = ExplosionPolicy(),
              stream: RngStream = RngStream(0)) -> DiffusionPath:
    """One path on ``grid`` driven by ``stream``.

    The standard normals are exactly those behind
    ``sample_brownian_increments(grid, stream)``.
    """
    if not math.isfinite(start):
        raise DomainError("start must be finite")
    z = stream.generator().standard_normal(grid.n_steps)
    if spec.process_kind == "q":
        return _integrate_q(spec, start, grid, policy, z)
    vals, st, tau = K.integrate_path(spec.kind, spec.packed(), float(start), grid.t0, grid.dt, z,
                                     policy.floor, policy.substep_cap, policy.max_move)
    return DiffusionPath(grid, vals, PathStatus(st), tau)


def _integrate_q(spec, start, grid, policy, z):
    # ``start`` is q itself; internally log q is integrated
    if start <= 0:
        raise DomainError("q must start positive")
    p = spec.params
    logs, phases, st, tau = K.q_path(p.a, 2.0 / math.sqrt(p.beta), spec.lam, math.log(start),
                                     grid.dt, z, policy.floor, -policy.floor, policy.max_move,
                                     policy.substep_cap)
    q = np.where(phases == 0, np.exp(logs), -np.exp(logs))
    return DiffusionPath(grid, q, PathStatus(st), tau)


@dataclass(frozen=True)
class BatchResult:
    terminal: np.ndarray
    status: np.ndarray
    tau: np.ndarray
    phi_integral: np.ndarray

    @property
    def survived(self) -> np.ndarray:
        return self.status == PathStatus.SURVIVED


def simulate_batch(spec: DriftSpec, starts, grid: TimeGrid, config: SimConfig,
                   with_phi: bool = False) -> BatchResult:
    """Terminal values of ``config.n_paths`` paths.

    Path ``k`` uses ``RngStream(config.seed, config.stream_base + k)``, so it
    coincides with ``integrate`` on that stream, independently of chunking
    and thread count.
    """
    n = config.n_paths
    starts = np.broadcast_to(np.asarray(starts, dtype=float), (n,))
    par = spec.packed()
    policy = ExplosionPolicy.from_config(config)

    def run(rng):
        lo, hi = rng
        Z = normal_block(config.seed, config.stream_base + lo, hi - lo, grid.n_steps,
                         StreamCursor(config.seed))
        m = hi - lo
        out = (np.empty(m), np.empty(m, dtype=np.int64), np.full(m, np.nan), np.zeros(m))
        if with_phi and spec.kind == K.Y:
            K.y_batch(par, np.ascontiguousarray(starts[lo:hi]), grid.t0, grid.dt, Z,
                      policy.substep_cap, policy.max_move, out[0], out[1], out[3])
            return out
        K.integrate_batch(spec.kind, par, np.ascontiguousarray(starts[lo:hi]), grid.t0, grid.dt,
                          Z, policy.floor, policy.substep_cap, policy.max_move, with_phi, *out)
        return out

    parts = ordered_map(run, chunk_ranges(n, grid.n_steps, config.chunk_normals), config.threads)
    cols = [np.concatenate([p[i] for p in parts]) for i in range(4)]
    return BatchResult(*cols)


def estimate_p_direct(params: EnsembleParams, lam: float, p1, config: SimConfig = SimConfig()
                      ) -> MonteCarloEstimate:
    """Estimate P(Lambda > lam) as E[p1(x_T); no explosion on (0, T]].

    ``p1`` supplies ``lookup`` and ``error`` (see ``asymptotics.P1Table``);
    the table error is propagated into ``MonteCarloEstimate.systematic``.
    Truncated paths count as zero and are reported in the diagnostics.
    """
    if lam < 1.0:
        raise DomainError("estimate_p_direct needs lambda >= 1")
    T = horizon_T(params, lam)
    start = config.start if config.start is not None else entrance_start(lam)
    grid = TimeGrid.spanning(0.0, T, config.dt)
    res = simulate_batch(DriftSpec("x", params, lam), start, grid, config)
    ok = res.survived
    samples = np.where(ok, p1.lookup(res.terminal), 0.0)
    systematic = float(np.sum(np.where(ok, p1.error(res.terminal), 0.0)) / samples.size)
    truncated = float(np.mean(res.status == PathStatus.TRUNCATED))
    return MonteCarloEstimate.from_samples(
        samples, config.seed, systematic,
        method="direct", lam=lam, T=T, start=start,
        exploded_fraction=float(np.mean(res.status == PathStatus.EXPLODED)),
        truncated_fraction=truncated, truncation_ok=truncated < 1e-3)


@dataclass(frozen=True)
class QBoundaryCheck:
    fraction_hit_zero: float
    fraction_exploded_given_hit: float
    n_hit: int
    n_paths: int
    hit_window: float
    explosion_deadline: float


def simulate_q_boundary_check(params: EnsembleParams, lam: float, n_paths: int,
                              stream: RngStream, hit_window: float | None = None,
                              explosion_deadline: float | None = None, ds: float = 1e-3,
                              policy: ExplosionPolicy = ExplosionPolicy(),
                              start: float | None = None, threads: int = 1) -> QBoundaryCheck:
    """Fraction of q-paths reaching zero, and of those the fraction then exploding.

    ``hit_window`` defaults to ``3 T`` with ``T = horizon_T(lam)`` (at least 3),
    ``explosion_deadline`` to twice the hit window.  Time is the q-clock, in
    which the forcing decays like ``e^{-s}``.  For a fixed hit window the
    exploded fraction is nondecreasing in the deadline (nested events).
    """
    if params.a < 0:
        raise DomainError("the boundary behaviour is checked for a >= 0")
    if not lam >= 0:
        raise DomainError("lambda must be >= 0")
    if hit_window is None:
        hit_window = 3.0 * max(horizon_T(params, lam) if lam > 0 else 0.0, 1.0)
    if explosion_deadline is None:
        explosion_deadline = 2.0 * hit_window
    if explosion_deadline < hit_window:
        raise DomainError("explosion deadline must not precede the hit window")
    grid = TimeGrid.spanning(0.0, explosion_deadline, ds)
    log_start = start if start is not None else entrance_start(max(lam, 1.0))
    c = 2.0 / math.sqrt(params.beta)
    chunks = chunk_ranges(n_paths, grid.n_steps, 1 << 22)

    def run(rng):
        lo, hi = rng
        Z = normal_block(stream.seed, stream.stream_index + lo, hi - lo, grid.n_steps)
        hit = np.empty(hi - lo)
        boom = np.empty(hi - lo)
        K.q_batch(params.a, c, float(lam), log_start, grid.dt, Z, hit_window, policy.floor,
                  -policy.floor, policy.max_move, policy.substep_cap, hit, boom)
        return hit, boom

    parts = ordered_map(run, chunks, threads)
    hit = np.concatenate([p[0] for p in parts])
    boom = np.concatenate([p[1] for p in parts])
    was_hit = np.isfinite(hit)
    n_hit = int(was_hit.sum())
    exploded = np.isfinite(boom) & was_hit
    frac = float(exploded.sum() / n_hit) if n_hit else math.nan
    return QBoundaryCheck(n_hit / n_paths, frac, n_hit, n_paths, hit_window, explosion_deadline)


class ZStationaryLaw:
    """Stationary law m(dz) of the reflected z-process on (-inf, 0].

    m(dz) is proportional to exp(2 h0 z - beta cosh z).  The CDF is tabulated
    with cumulative Simpson quadrature and interpolated by cubic Hermite
    splines using the exact density as slope, so the inverse CDF is refined
    by Newton steps on a C^1 interpolant.
    """

    def __init__(self, beta: float, h0: float, n_nodes: int = 20001):
        self.beta = float(beta)
        self.h0 = float(h0)
        lo = self._lower_cutoff()
        z = np.linspace(lo, 0.0, n_nodes)
        logf = self._log_unnormalized(z)
        self._shift = float(logf.max())
        f = np.exp(logf - self._shift)
        F = cumulative_simpson(f, x=z, initial=0.0)
        self.norm = float(F[-1])
        self._z = z
        self._F = F / self.norm
        self._cdf = CubicHermiteSpline(z, self._F, f / self.norm)

    def _log_unnormalized(self, z):
        return 2.0 * self.h0 * z - self.beta * np.cosh(z)

    def _lower_cutoff(self) -> float:
        # go left until the log-density is 60 below its maximum on (-inf, 0]
        zm = min(0.0, math.asinh(2.0 * self.h0 / self.beta))
        top = float(self._log_unnormalized(np.array([zm]))[0])
        lo = zm - 1.0
        while self._log_unnormalized(np.array([lo]))[0] > top - 60.0:
            lo -= 1.0
        return lo

    def density(self, z):
        z = np.asarray(z, dtype=float)
        d = np.exp(self._log_unnormalized(z) - self._shift) / self.norm
        return np.where(z <= 0.0, d, 0.0)

    def cdf(self, z):
        z = np.asarray(z, dtype=float)
        return np.where(z >= 0.0, 1.0, np.where(z <= self._z[0], 0.0, self._cdf(np.clip(z, self._z[0], 0.0))))

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        z = np.interp(u, self._F, self._z)
        for _ in range(3):
            f = self.density(z)
            step = np.where(f > 0, (self._cdf(z) - u) / np.where(f > 0, f, 1.0), 0.0)
            z = np.clip(z - step, self._z[0], 0.0)
        return z

    def mean(self) -> float:
        """Quadrature value of the mean, independent of the table."""
        # the density below the table cutoff is under e^{-60} of its peak
        lo = float(self._z[0])
        num = quad(lambda t: t * math.exp(2 * self.h0 * t - self.beta * math.cosh(t) - self._shift),
                   lo, 0.0, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
        den = quad(lambda t: math.exp(2 * self.h0 * t - self.beta * math.cosh(t) - self._shift),
                   lo, 0.0, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
        return num / den

    def sample(self, gen: np.random.Generator, size=None):
        return self.ppf(gen.random(size))


@functools.lru_cache(maxsize=32)
def z_stationary_law(beta: float, h0: float) -> ZStationaryLaw:
    return ZStationaryLaw(beta, h0)


def sample_z_stationary(params: EnsembleParams, h0: float, stream: RngStream, size=None):
    """Inverse-CDF draw(s) from the stationary law of the reflected z-process."""
    if not math.isfinite(h0):
        raise DomainError("h0 must be finite")
    out = z_stationary_law(params.beta, float(h0)).sample(stream.generator(), size)
    return float(out) if size is None else out


def evolve_z(params: EnsembleParams, h0: float, starts: np.ndarray, duration: float,
             dt: float, seed: int, stream_base: int = 0, threads: int = 1) -> np.ndarray:
    """Evolve reflected z-paths from ``starts`` for ``duration``; returns terminal values."""
    config = SimConfig(n_paths=len(starts), dt=dt, seed=seed, stream_base=stream_base,
                       threads=threads)
    grid = TimeGrid.spanning(0.0, duration, dt)
    return simulate_batch(DriftSpec("z", params, h0=h0), starts, grid, config).terminal


def coupled_y_family(params: EnsembleParams, T_list: Sequence[float], dt: float,
                     stream: RngStream, with_z: bool = False, h0: float | None = None,
                     max_move: float = 0.1) -> list[DiffusionPath]:
    """Time-reversed family y^T_t = y_{t+T}, t in [-T, 0], on shared noise.

    In the reversed clock every member follows the same drift (that of the
    lambda = 1, T = 0 process) and only the entrance time -T and start
    ``entrance_start(e^{beta T/4})`` differ.  Each T is rounded to the grid.
    With ``with_z`` a reflected z-path started from its stationary law at
    ``-max(T_list)`` is appended; ``h0`` defaults to ``HFamily.h0``.
    """
    T_arr = np.asarray(T_list, dtype=float)
    if T_arr.size == 0 or np.any(np.diff(T_arr) <= 0) or T_arr[0] < 0:
        raise DomainError("T_list must be nonnegative and increasing")
    T_max = float(T_arr[-1])
    n = int(round(T_max / dt))
    grid = TimeGrid(-n * dt, dt, n)
    idx = [n - int(round(T / dt)) for T in T_arr]
    starts = [entrance_start(math.exp(params.beta * T / 4.0)) for T in T_arr]
    kinds = [K.Y] * len(T_arr)
    pars = [K.pack(params.beta, params.a, 1.0, 0.0)] * len(T_arr)
    if with_z:
        if h0 is None:
            from .girsanov import HFamily
            h0 = HFamily(params).h0
        kinds.append(K.Z)
        pars.append(K.pack(params.beta, params.a, 1.0, 0.0, h0))
        starts.append(sample_z_stationary(params, h0, stream.substream(1 << 40)))
        idx.append(0)
    z = stream.generator().standard_normal(n)
    out = np.empty((len(kinds), n + 1))
    K.integrate_coupled(np.array(kinds, dtype=np.int64), np.array(pars), np.array(starts),
                        np.array(idx, dtype=np.int64), grid.t0, dt, z, max_move, out)
    paths = []
    for j, i0 in enumerate(idx):
        g = TimeGrid(grid.t0 + i0 * dt, dt, n - i0)
        paths.append(DiffusionPath(g, out[j, i0:].copy(), PathStatus.SURVIVED))
    return paths


def ordering_violations(upper: DiffusionPath, lower: DiffusionPath) -> tuple[float, float, int]:
    """Where both paths share a grid point (aligned at their end), measure lower > upper.

    Returns (fraction of shared points violated, max violation, shared points).
    """
    m = min(len(upper.values), len(lower.values))
    d = lower.values[-m:] - upper.values[-m:]
    bad = d > 0
    return float(bad.mean()) if m else 0.0, float(d[bad].max()) if bad.any() else 0.0, m
