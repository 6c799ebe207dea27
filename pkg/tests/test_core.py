import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from hardedge.core import (DomainError, MonteCarloEstimate, RngStream, StreamCursor, TimeGrid,
                           chunk_ranges, combined_z, entrance_start, horizon_T, make_params,
                           normal_block, ordered_map, sample_brownian_increments)


@given(st.floats(0.05, 20.0), st.floats(-0.99, 20.0))
def test_gamma_relation(beta, a):
    p = make_params(beta, a)
    assert math.isclose(p.gamma, 0.5 * beta * (a + 1) - 1, rel_tol=1e-15, abs_tol=1e-15)
    assert math.isclose(p.rho, p.gamma + 1, rel_tol=1e-14, abs_tol=1e-14)


def test_params_examples():
    assert make_params(2, 0).gamma == 0.0
    assert make_params(4, 1).gamma == 3.0
    assert make_params(1, 0.5).gamma == -0.25
    assert make_params(1, 0).gamma == -0.5


@pytest.mark.parametrize("beta,a", [(0, 0), (-1, 0), (1, -1), (1, -2), (math.nan, 0), (1, math.inf)])
def test_params_domain(beta, a):
    with pytest.raises(DomainError):
        make_params(beta, a)


def test_horizon_and_entrance():
    p = make_params(2, 0)
    assert horizon_T(p, 1.0) == 0.0
    assert math.isclose(horizon_T(make_params(4, 0), math.e), 1.0)
    assert math.isclose(horizon_T(p, math.e ** 2), 4.0)
    assert math.isclose(horizon_T(p, 4.0), 2 * math.log(4))
    with pytest.raises(DomainError):
        horizon_T(p, 0.0)
    assert entrance_start(1.0) == 8.0
    assert math.isclose(entrance_start(1e10), 0.5 * math.log(1e10) + 4)


def test_streams_deterministic_and_distinct():
    a = RngStream(7, 3).generator().standard_normal(100)
    b = RngStream(7, 3).generator().standard_normal(100)
    c = RngStream(7, 4).generator().standard_normal(100)
    d = RngStream(8, 3).generator().standard_normal(100)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)
    assert RngStream(7, 3).substream(5) == RngStream(7, 8)


def test_cursor_matches_fresh_generators():
    cur = StreamCursor(11)
    for i in (0, 5, 2, 1 << 40):
        got = cur.at(i).standard_normal(37)
        assert np.array_equal(got, RngStream(11, i).generator().standard_normal(37))
    blk = normal_block(11, 3, 4, 9)
    for k in range(4):
        assert np.array_equal(blk[k], RngStream(11, 3 + k).generator().standard_normal(9))


def test_brownian_increments():
    g = TimeGrid(0.0, 0.01, 200_000)
    inc = sample_brownian_increments(g, RngStream(1))
    assert inc.shape == (g.n_steps,)
    assert abs(inc.mean()) < 4 * math.sqrt(g.dt / g.n_steps)
    assert abs(inc.var() / g.dt - 1) < 4 * math.sqrt(2 / g.n_steps)
    assert np.array_equal(inc, sample_brownian_increments(g, RngStream(1)))


def test_brownian_increments_million():
    g = TimeGrid(0.0, 0.01, 1_000_000)
    inc = sample_brownian_increments(g, RngStream(12))
    assert abs(inc.mean()) < 4 * (0.1 / 1e3)
    # relative stderr of a sample variance is sqrt(2 / n)
    assert abs(inc.var(ddof=1) / g.dt - 1) < 5 * math.sqrt(2 / g.n_steps)


def test_time_grid():
    assert TimeGrid(0.0, 0.1, 0).times().shape == (1,)
    assert sample_brownian_increments(TimeGrid(0.0, 0.1, 0), RngStream(1)).shape == (0,)
    g = TimeGrid.spanning(0.0, 1.0, 0.3)
    assert g.n_steps == 4 and math.isclose(g.t1, 1.0)
    assert g.times().shape == (5,)
    assert TimeGrid.spanning(0.0, 2.0, 1e-3).n_steps == 2000
    with pytest.raises(DomainError):
        TimeGrid(0.0, 0.0, 3)
    with pytest.raises(DomainError):
        TimeGrid.spanning(1.0, 0.0, 0.1)


def test_monte_carlo_estimate():
    x = RngStream(2).generator().random(1000)
    e = MonteCarloEstimate.from_samples(x, seed=2, systematic=0.003)
    assert math.isclose(e.mean, x.mean(), rel_tol=1e-14)
    assert math.isclose(e.stderr, x.std(ddof=1) / math.sqrt(1000), rel_tol=1e-12)
    assert math.isclose(e.total_stderr, math.hypot(e.stderr, 0.003))
    s = e.scaled(-2.0)
    assert s.mean == -2 * e.mean and s.stderr == 2 * e.stderr and s.systematic == 0.006
    assert combined_z(e, e) == 0.0
    with pytest.raises(DomainError):
        MonteCarloEstimate.from_samples([], 0)


@settings(max_examples=50)
@given(st.integers(1, 10_000), st.integers(0, 5000), st.integers(1, 1 << 20))
def test_chunk_ranges_partition(n, n_steps, budget):
    r = chunk_ranges(n, n_steps, budget)
    assert r[0][0] == 0 and r[-1][1] == n
    assert all(a[1] == b[0] for a, b in zip(r, r[1:]))


def test_ordered_map_thread_independent():
    items = list(range(40))

    def f(i):
        return float(RngStream(3, i).generator().standard_normal())

    assert ordered_map(f, items, 1) == ordered_map(f, items, 4)


def test_normal_block_is_gaussian():
    z = normal_block(5, 0, 50, 200).ravel()
    assert stats.kstest(z, "norm").pvalue > 1e-3
