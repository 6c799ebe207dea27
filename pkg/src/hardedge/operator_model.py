"""Grid discretization of the random integral operator whose top eigenvalue is 1/Lambda.

With c = 2/sqrt(beta), A(u) = int_0^u e^{a r + c b(r)} dr and
w(s) = e^{-(a+1) s - c b(s)}, the operator acts as

    (L f)(t) = int_0^inf A(t ^ s) f(s) w(s) ds.

On a uniform grid with trapezoid weights omega_j this becomes
M_ij = A(t_i ^ t_j) c_j, c_j = w_j omega_j.  Conjugating by diag(sqrt(c))
gives the symmetric positive semidefinite matrix
S_ij = sqrt(c_i) A(t_i ^ t_j) sqrt(c_j), whose product with a vector costs
O(N) through prefix sums, so power iteration never forms S.

The shooting test is the exact discrete counterpart of the Riccati system:
with f_0 = 0, D_0 = 1,

    f_{i+1} = f_i + (A_{i+1} - A_i) D_i,   D_{i+1} = D_i - lam c_{i+1} f_{i+1},

lam lies below the smallest eigenvalue of 1/S exactly when D stays positive
(D plays the role of psi' e^{-a t - c b(t)}).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import (DomainError, EnsembleParams, RngStream, TimeGrid, ordered_map,
                   sample_brownian_increments)


class ConvergenceError(RuntimeError):
    """Power iteration did not reach its tolerance within the iteration cap."""


@dataclass(frozen=True)
class OperatorDiscretization:
    grid: TimeGrid
    brownian: np.ndarray
    weights: np.ndarray  # trapezoid weights omega_j
    A: np.ndarray
    w: np.ndarray

    @property
    def c(self) -> np.ndarray:
        return self.w * self.weights

    @property
    def matrix(self) -> np.ndarray:
        """Dense M_ij = A(t_i ^ t_j) w_j omega_j; O(N^2) memory."""
        return np.minimum.outer(self.A, self.A) * self.c[None, :]

    def symmetric_matrix(self) -> np.ndarray:
        r = np.sqrt(self.c)
        return r[:, None] * np.minimum.outer(self.A, self.A) * r[None, :]

    def sym_matvec(self, u: np.ndarray) -> np.ndarray:
        r = np.sqrt(self.c)
        v = r * u
        head = np.cumsum(self.A * v)
        tail = np.sum(v) - np.cumsum(v)
        return r * (head + self.A * tail)

    def trace(self) -> float:
        return float(np.sum(self.A * self.c))


def brownian_path(grid: TimeGrid, stream: RngStream) -> np.ndarray:
    """b on the grid with b(0) = 0."""
    return np.concatenate([[0.0], np.cumsum(sample_brownian_increments(grid, stream))])


def build_operator(params: EnsembleParams, brownian, grid: TimeGrid) -> OperatorDiscretization:
    if grid.t0 != 0.0:
        raise DomainError("operator grid must start at 0")
    b = np.asarray(brownian, dtype=float)
    if b.shape != (grid.n_steps + 1,) or b[0] != 0.0:
        raise DomainError("brownian must have one value per grid point and start at 0")
    t = grid.times()
    c = 2.0 / math.sqrt(params.beta)
    f = np.exp(params.a * t + c * b)
    A = np.concatenate([[0.0], np.cumsum(0.5 * grid.dt * (f[1:] + f[:-1]))])
    w = np.exp(-(params.a + 1.0) * t - c * b)
    om = np.full(t.size, grid.dt)
    om[0] = om[-1] = 0.5 * grid.dt
    return OperatorDiscretization(grid, b, om, A, w)


def largest_eigenvalue(op, rel_tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Top eigenvalue by power iteration with Rayleigh quotients.

    ``op`` is an ``OperatorDiscretization`` (symmetrized, matrix-free) or a
    square array, used as is.
    """
    if isinstance(op, OperatorDiscretization):
        mv = op.sym_matvec
        n = op.A.size
    else:
        M = np.asarray(op, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise DomainError("matrix must be square")
        mv = M.__matmul__
        n = M.shape[0]
    u = np.ones(n) / math.sqrt(n)
    prev = math.nan
    for _ in range(max_iter):
        v = mv(u)
        rq = float(u @ v)
        nv = float(np.linalg.norm(v))
        if nv == 0.0:
            return 0.0
        u = v / nv
        if abs(rq - prev) <= rel_tol * abs(rq):
            return rq
        prev = rq
    raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations")


@njit(cache=True, nogil=True)
def _shoot(A, c, lam):
    f = 0.0
    D = 1.0
    for i in range(A.shape[0] - 1):
        f += (A[i + 1] - A[i]) * D
        D -= lam * c[i + 1] * f
        if D <= 0.0:
            return False
        if f > 1e150:
            # positive rescaling keeps the signs
            f *= 1e-150
            D *= 1e-150
    return True


def riccati_sweep(params: EnsembleParams, brownian, lam: float, grid: TimeGrid) -> bool:
    """True iff psi and psi' stay positive on the grid, i.e. lam < Lambda for this path."""
    if lam < 0:
        raise DomainError("lambda must be >= 0")
    op = build_operator(params, brownian, grid)
    return bool(_shoot(op.A, op.c, float(lam)))


def riccati_threshold(op: OperatorDiscretization, rel_tol: float = 1e-12) -> float:
    """Largest lam passing the sweep, by bisection."""
    A, c = op.A, op.c
    lo, hi = 0.0, 1.0
    while _shoot(A, c, hi):
        lo, hi = hi, 2.0 * hi
        if hi > 1e300:
            return math.inf
    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if _shoot(A, c, mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def tail_bound(params: EnsembleParams, op: OperatorDiscretization) -> float:
    """Truncation indicator e^{-(a+1) T_op + c max|b|}."""
    c = 2.0 / math.sqrt(params.beta)
    return math.exp(-(params.a + 1.0) * op.grid.t1 + c * float(np.max(np.abs(op.brownian))))


def operator_draw(params: EnsembleParams, dt: float, stream: RngStream, T_op: float = 30.0,
                  T_max: float = 200.0, bound: float = 1e-8) -> OperatorDiscretization:
    """Discretization on a fresh Brownian path, extending T_op by 10 while the tail bound exceeds ``bound``."""
    T = T_op
    while True:
        grid = TimeGrid(0.0, dt, int(round(T / dt)))
        op = build_operator(params, brownian_path(grid, stream), grid)
        if tail_bound(params, op) <= bound or T >= T_max:
            return op
        T = min(T + 10.0, T_max)


def sample_operator_lambda(params: EnsembleParams, n_draws: int, dt: float, stream: RngStream,
                           T_op: float = 30.0, threads: int = 1) -> np.ndarray:
    """Draws of 1 / top eigenvalue; draw k uses ``stream.substream(k)``."""
    if n_draws < 1:
        raise DomainError("n_draws must be >= 1")

    def one(k):
        return 1.0 / largest_eigenvalue(operator_draw(params, dt, stream.substream(k), T_op))

    return np.array(ordered_map(one, range(n_draws), threads))
