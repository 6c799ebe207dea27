"""Parameters, random streams, time grids and Monte Carlo containers.

Every stochastic routine in the package draws its randomness from an
:class:`RngStream`, a ``(seed, stream_index)`` pair mapped onto a Philox
counter-based generator keyed by both numbers.  Monte Carlo loops give
sample ``k`` the stream ``base + k``, so a result depends only on the seed
and the sample index, never on how the work was split across threads.

Gaussian variates always come from ``numpy.random.Generator.standard_normal``
(the ziggurat method) on that Philox generator.
"""
from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

_U64 = (1 << 64) - 1


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of a formula."""


@dataclass(frozen=True)
class EnsembleParams:
    """Ensemble parameters ``(beta, a)`` and the derived exponent ``gamma``."""

    beta: float
    a: float
    gamma: float

    @property
    def k(self) -> float:
        """Constant drift ``(beta/4)(a + 1/2)`` shared by the x- and y-processes."""
        return 0.25 * self.beta * (self.a + 0.5)

    @property
    def rho(self) -> float:
        """``gamma + 1 = (beta/2)(a + 1)``, the one-point density exponent plus one."""
        return 0.5 * self.beta * (self.a + 1.0)


def make_params(beta: float, a: float) -> EnsembleParams:
    beta = float(beta)
    a = float(a)
    if not (beta > 0.0) or not math.isfinite(beta):
        raise DomainError(f"beta must be > 0, got {beta}")
    if not (a > -1.0) or not math.isfinite(a):
        raise DomainError(f"a must be > -1, got {a}")
    return EnsembleParams(beta=beta, a=a, gamma=0.5 * beta * (a + 1.0) - 1.0)


def horizon_T(params: EnsembleParams, lam: float) -> float:
    """Time ``(4/beta) log(lam)`` after which the x-drift forcing equals its lam=1 value."""
    if not lam > 0.0:
        raise DomainError(f"lambda must be > 0, got {lam}")
    return 4.0 / params.beta * math.log(lam)


def entrance_start(lam: float) -> float:
    """Finite stand-in for the entrance boundary at +infinity."""
    return max(8.0, math.log(math.sqrt(max(lam, 1e-300))) + 4.0)


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & _U64)
        object.__setattr__(self, "stream_index", int(self.stream_index) & _U64)

    def substream(self, k: int) -> "RngStream":
        return RngStream(self.seed, self.stream_index + int(k))

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed, self.stream_index], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))


class StreamCursor:
    """Re-keys one Philox bit generator in place.

    Equivalent to ``RngStream(seed, i).generator()`` for each ``i`` but avoids
    the construction cost, which dominates for short per-sample draws.
    Instances are not thread safe; use one per worker.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _U64
        self._bitgen = np.random.Philox(key=np.array([self.seed, 0], dtype=np.uint64))
        self._gen = np.random.Generator(self._bitgen)
        self._state = self._bitgen.state

    def at(self, stream_index: int) -> np.random.Generator:
        st = self._state
        st["state"]["key"][1] = int(stream_index) & _U64
        st["state"]["counter"][:] = 0
        st["buffer_pos"] = 4
        st["has_uint32"] = 0
        st["uinteger"] = 0
        self._bitgen.state = st
        return self._gen


def normal_block(seed: int, first_stream: int, count: int, n: int,
                 cursor: StreamCursor | None = None) -> np.ndarray:
    """Standard normals, row ``k`` drawn from stream ``first_stream + k``."""
    out = np.empty((count, n))
    if n == 0:
        return out
    cur = cursor if cursor is not None else StreamCursor(seed)
    for k in range(count):
        cur.at(first_stream + k).standard_normal(out=out[k])
    return out


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    dt: float
    n_steps: int

    def __post_init__(self):
        if not self.dt > 0.0:
            raise DomainError(f"dt must be > 0, got {self.dt}")
        if self.n_steps < 0:
            raise DomainError(f"n_steps must be >= 0, got {self.n_steps}")

    @classmethod
    def spanning(cls, t0: float, t1: float, dt: float) -> "TimeGrid":
        """Uniform grid from ``t0`` to exactly ``t1`` with step at most ``dt``."""
        span = t1 - t0
        if span < 0:
            raise DomainError("t1 must be >= t0")
        n = int(math.ceil(span / dt - 1e-9)) if span > 0 else 0
        return cls(t0, span / n if n else dt, n)

    @property
    def t1(self) -> float:
        return self.t0 + self.n_steps * self.dt

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)


def sample_brownian_increments(grid: TimeGrid, stream: RngStream) -> np.ndarray:
    """``n_steps`` independent N(0, dt) increments, deterministic in ``(grid, stream)``."""
    if grid.n_steps == 0:
        return np.empty(0)
    return stream.generator().standard_normal(grid.n_steps) * math.sqrt(grid.dt)


class PathStatus(enum.IntEnum):
    SURVIVED = 0
    EXPLODED = 1
    TRUNCATED = 2


@dataclass(frozen=True)
class DiffusionPath:
    grid: TimeGrid
    values: np.ndarray
    status: PathStatus
    tau: float = math.nan  # explosion time when status is EXPLODED

    @property
    def exploded(self) -> bool:
        return self.status == PathStatus.EXPLODED

    def times(self) -> np.ndarray:
        return self.grid.times()[: len(self.values)]


@dataclass(frozen=True)
class MonteCarloEstimate:
    """Sample mean with its standard error.

    ``stderr`` is always the sampling error, sample std / sqrt(n).
    ``systematic`` carries a separate deterministic error bound (for example,
    the propagated accuracy of a tabulated terminal weight); ``total_stderr``
    combines the two in quadrature.
    """

    mean: float
    stderr: float
    n_samples: int
    seed: int
    systematic: float = 0.0
    diagnostics: dict = field(default_factory=dict, compare=False)

    @classmethod
    def from_samples(cls, samples: np.ndarray, seed: int, systematic: float = 0.0,
                     **diagnostics) -> "MonteCarloEstimate":
        x = np.asarray(samples, dtype=float)
        n = x.size
        if n < 1:
            raise DomainError("need at least one sample")
        # np.sum uses pairwise summation: fixed reduction order.
        mean = float(np.sum(x) / n)
        sd = float(np.sqrt(np.sum((x - mean) ** 2) / (n - 1))) if n > 1 else 0.0
        return cls(mean, sd / math.sqrt(n), n, int(seed), float(systematic), dict(diagnostics))

    @property
    def total_stderr(self) -> float:
        return math.hypot(self.stderr, self.systematic)

    @property
    def relative_stderr(self) -> float:
        return self.total_stderr / abs(self.mean) if self.mean != 0 else math.inf

    def scaled(self, factor: float) -> "MonteCarloEstimate":
        return MonteCarloEstimate(self.mean * factor, self.stderr * abs(factor), self.n_samples,
                                  self.seed, self.systematic * abs(factor), dict(self.diagnostics))


def combined_z(a: MonteCarloEstimate, b: MonteCarloEstimate) -> float:
    """Separation of two estimates in units of their combined standard error."""
    s = math.hypot(a.total_stderr, b.total_stderr)
    return abs(a.mean - b.mean) / s if s > 0 else (0.0 if a.mean == b.mean else math.inf)


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo settings shared by the path estimators."""

    n_paths: int = 100_000
    dt: float = 1e-3
    seed: int = 0
    stream_base: int = 0
    threads: int = 1
    floor: float = -25.0
    substep_cap: int = 1_000_000
    max_move: float = 0.02
    start: float | None = None  # None: entrance_start(lambda)
    chunk_normals: int = 1 << 22


def chunk_ranges(n: int, n_steps: int, chunk_normals: int) -> list[tuple[int, int]]:
    """Split ``range(n)`` into fixed chunks; boundaries depend only on the sizes."""
    size = max(1, min(n, chunk_normals // max(n_steps, 1)))
    return [(i, min(n, i + size)) for i in range(0, n, size)]


def ordered_map(fn: Callable, items: Sequence, threads: int = 1) -> list:
    """Map preserving input order; the thread count never changes results."""
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))
