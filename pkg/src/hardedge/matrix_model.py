"""Bidiagonal beta-Laguerre matrices and their scaled smallest eigenvalues.

B is lower bidiagonal with

    B_ii     ~ chi(beta (a + n - i + 1)),  i = 1..n
    B_{i+1,i} ~ chi(beta (n - i)),         i = 1..n-1

and W = B B^T / beta has joint eigenvalue density proportional to
prod |l_i - l_j|^beta prod l_i^{beta(a+1)/2 - 1} e^{-beta l_i/2}.  The hard-edge
statistic is n * lambda_min(W).

``chi(k)`` is sampled as sqrt(2 Gamma(k/2)), so non-integer k is allowed.
The eigenvalue solver only needs squared entries: W is tridiagonal with
diagonal (d_i^2 + s_{i-1}^2)/beta and squared off-diagonal d_i^2 s_i^2/beta^2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from .core import (DomainError, EnsembleParams, MonteCarloEstimate, RngStream, StreamCursor,
                   ordered_map)


@dataclass(frozen=True)
class BidiagonalMatrix:
    n: int
    diag: np.ndarray
    sub: np.ndarray

    def dense(self) -> np.ndarray:
        B = np.diag(self.diag)
        if self.n > 1:
            B[np.arange(1, self.n), np.arange(self.n - 1)] = self.sub
        return B


@dataclass(frozen=True)
class HardEdgeSample:
    n: int
    scaled_min: float


class HardEdgeBatch(Sequence):
    """Draws of n * lambda_min, indexable as ``HardEdgeSample`` records."""

    def __init__(self, n: int, scaled_min: np.ndarray):
        self.n = n
        self.scaled_min = np.asarray(scaled_min, dtype=float)

    def __len__(self):
        return self.scaled_min.size

    def __getitem__(self, i):
        if isinstance(i, slice):
            return HardEdgeBatch(self.n, self.scaled_min[i])
        return HardEdgeSample(self.n, float(self.scaled_min[i]))


def _shapes(params: EnsembleParams, n: int) -> np.ndarray:
    i = np.arange(1, n + 1)
    d = params.beta * (params.a + n - i + 1) / 2.0
    s = params.beta * (n - i[:-1]) / 2.0
    return np.concatenate([d, s])


def _squared_entries(gen: np.random.Generator, shapes: np.ndarray, n: int):
    g = 2.0 * gen.standard_gamma(shapes)
    return g[:n], g[n:]


def sample_bidiagonal(params: EnsembleParams, n: int, stream: RngStream) -> BidiagonalMatrix:
    if n < 1:
        raise DomainError("n must be >= 1")
    d2, s2 = _squared_entries(stream.generator(), _shapes(params, n), n)
    return BidiagonalMatrix(n, np.sqrt(d2), np.sqrt(s2))


@njit(cache=True, nogil=True)
def _has_eig_below(x, td, off2):
    # Sturm sequence of T - x I: any negative pivot means an eigenvalue < x
    q = td[0] - x
    if q < 0.0:
        return True
    for i in range(1, td.shape[0]):
        if q == 0.0:
            q = 1e-300
        q = td[i] - x - off2[i - 1] / q
        if q < 0.0:
            return True
    return False


@njit(cache=True, nogil=True)
def _min_eig(d2, s2, beta, rel_tol):
    n = d2.shape[0]
    td = np.empty(n)
    off2 = np.empty(max(n - 1, 0))
    for i in range(n):
        td[i] = (d2[i] + (s2[i - 1] if i > 0 else 0.0)) / beta
    for i in range(n - 1):
        off2[i] = d2[i] * s2[i] / (beta * beta)
    lo = math.inf
    hi = math.inf
    radius = 0.0
    for i in range(n):
        r = 0.0
        if i > 0:
            r += math.sqrt(off2[i - 1])
        if i < n - 1:
            r += math.sqrt(off2[i])
        lo = min(lo, td[i] - r)
        hi = min(hi, td[i])
        radius = max(radius, td[i] + r)
    lo = max(lo, 0.0)
    tol = rel_tol * (1.0 + radius)
    for _ in range(200):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if _has_eig_below(mid, td, off2):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


@njit(cache=True, nogil=True)
def _min_eig_rows(D2, S2, beta, rel_tol, out):
    for k in range(D2.shape[0]):
        out[k] = _min_eig(D2[k], S2[k], beta, rel_tol)


def smallest_eigenvalue(B: BidiagonalMatrix, beta: float, rel_tol: float = 1e-12) -> float:
    """Smallest eigenvalue of B B^T / beta by Sturm-count bisection.

    Absolute accuracy ``rel_tol * (1 + Gershgorin radius)``; the bracket is
    [max(0, Gershgorin lower bound), min diagonal entry].
    """
    return float(_min_eig(np.asarray(B.diag, float) ** 2, np.asarray(B.sub, float) ** 2,
                          float(beta), rel_tol))


def sample_hard_edge(params: EnsembleParams, n: int, n_samples: int, stream: RngStream,
                     threads: int = 1, chunk: int = 2048) -> HardEdgeBatch:
    """``n_samples`` independent draws of n * lambda_min; draw k uses stream index + k."""
    if n < 1 or n_samples < 1:
        raise DomainError("n and n_samples must be >= 1")
    shapes = _shapes(params, n)

    def run(rng):
        lo, hi = rng
        cur = StreamCursor(stream.seed)
        D2 = np.empty((hi - lo, n))
        S2 = np.empty((hi - lo, max(n - 1, 0)))
        for r, k in enumerate(range(lo, hi)):
            D2[r], S2[r] = _squared_entries(cur.at(stream.stream_index + k), shapes, n)
        out = np.empty(hi - lo)
        _min_eig_rows(D2, S2, params.beta, 1e-12, out)
        return out

    parts = ordered_map(run, [(i, min(n_samples, i + chunk)) for i in range(0, n_samples, chunk)],
                        threads)
    return HardEdgeBatch(n, n * np.concatenate(parts))


def empirical_survival(samples, lam: float, seed: int = 0) -> MonteCarloEstimate:
    """Fraction of draws above ``lam`` with its binomial standard error."""
    x = samples.scaled_min if isinstance(samples, HardEdgeBatch) else np.asarray(samples, float)
    return MonteCarloEstimate.from_samples((x > lam).astype(float), seed)
