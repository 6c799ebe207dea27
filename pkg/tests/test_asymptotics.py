import math

import mpmath as mp
import numpy as np
import pytest
from scipy import integrate as spi

from hardedge.asymptotics import (P1Table, analytic_kappa3, build_p1_table, calibrate_kappa3,
                                  exit_probability, leading_log_factor, lemma4_bound,
                                  sandwich_check, solve_p1_table, tail_fit)
from hardedge.core import DomainError, RngStream, SimConfig, make_params


def test_leading_log_factor_examples():
    assert leading_log_factor(make_params(2, 0), 4.0) == -4.0
    gen = RngStream(1).generator()
    for _ in range(20):
        beta, a, lam = gen.uniform(0.2, 8), gen.uniform(-0.9, 5), gen.uniform(1, 100)
        p = make_params(beta, a)
        with mp.workdps(30):
            g = mp.mpf(p.gamma)
            ref = (-mp.mpf(beta) * lam / 2 + 2 * g * mp.sqrt(lam)
                   - g * (g + 1 - mp.mpf(beta) / 2) / (2 * mp.mpf(beta)) * mp.log(lam))
        got = leading_log_factor(p, lam)
        assert abs(got - float(ref)) <= 1e-13 * max(1.0, abs(float(ref)))


@pytest.mark.parametrize("beta,a", [(2.0, 0.0), (4.0, 1.0), (1.0, 0.5), (0.5, -0.5)])
def test_exit_probability_against_quadrature(beta, a):
    p = make_params(beta, a)

    def f(xi):
        return math.exp(-0.5 * beta * ((a + 1) * xi + math.exp(-xi)))

    lo = -math.log(200.0 / beta)  # e^{-xi} term makes the integrand negligible below
    den = spi.quad(f, lo, np.inf, epsabs=0, epsrel=1e-12, limit=400)[0]
    for x in (-1.5, -0.5, 0.0, 1.0, 3.0):
        num = spi.quad(f, lo, x, epsabs=0, epsrel=1e-12, limit=400)[0]
        assert abs(exit_probability(p, x) - num / den) <= 1e-8


def test_exit_probability_shape():
    p = make_params(4, 1)
    x = np.linspace(-10, 30, 401)
    v = exit_probability(p, x)
    assert np.all(np.diff(v) >= 0) and v[0] == 0.0 and abs(v[-1] - 1.0) < 1e-10
    assert isinstance(exit_probability(p, 0.0), float)
    # beta = 2, a = 0: Q(1, e^{-x}) = exp(-e^{-x})
    assert math.isclose(exit_probability(make_params(2, 0), 0.3), math.exp(-math.exp(-0.3)))


def test_pde_table_exact_case():
    p = make_params(2, 0)
    tab = solve_p1_table(p)
    exact = np.exp(-1.0 - np.exp(-tab.xs))
    assert np.all(np.abs(tab.values - exact) <= tab.stderr)
    assert np.max(tab.stderr) < 1e-4
    assert abs(tab.plateau - math.exp(-1)) <= 3 * tab.plateau_stderr
    assert np.all(np.diff(tab.values) >= 0)


def test_mc_table_matches_pde_table():
    p = make_params(4, 1)
    xs = np.array([-1.0, 0.0, 1.0, 3.0])
    mc = build_p1_table(p, SimConfig(n_paths=5000, dt=1e-2, seed=2), xs=xs)
    pde = solve_p1_table(p)
    se = np.hypot(mc.stderr, pde.error(xs))
    assert np.all(np.abs(mc.raw - pde.lookup(xs)) <= 4 * se)
    assert abs(mc.plateau - pde.plateau) <= 4 * math.hypot(mc.plateau_stderr, pde.plateau_stderr)


def test_mc_table_exact_case():
    p = make_params(2, 0)
    xs = np.array([-8.0, -1.0, 0.0, 2.0])
    tab = build_p1_table(p, SimConfig(n_paths=4000, dt=1e-2, seed=3), xs=xs)
    assert tab.raw[0] == 0.0
    exact = np.exp(-1.0 - np.exp(-xs))
    assert np.all(np.abs(tab.raw - exact) <= 4 * np.maximum(tab.stderr, 1e-3))
    assert np.all(np.diff(tab.values) >= 0)
    assert abs(tab.plateau - math.exp(-1)) <= 4 * tab.plateau_stderr
    assert tab.method == "mc" and tab.flagged == ()


def test_table_lookup_and_roundtrip(tmp_path):
    tab = P1Table(np.array([0.0, 1.0, 2.0]), np.array([0.1, 0.2, 0.4]),
                  np.array([0.01, 0.02, 0.03]), 0.5, 2.0, 0.0, "mc", 0.005)
    assert tab.lookup(-1.0) == 0.0 and tab.lookup(3.0) == 0.5
    assert math.isclose(tab.lookup(1.0), 0.2)
    assert math.isclose(tab.error(3.0), 0.005 + 0.1)
    f = tmp_path / "t.csv"
    tab.save(f)
    back = P1Table.load(f)
    assert np.array_equal(back.xs, tab.xs) and np.array_equal(back.values, tab.values)
    assert np.array_equal(back.stderr, tab.stderr)
    assert (back.plateau, back.plateau_stderr, back.beta, back.a, back.method) == \
        (0.5, 0.005, 2.0, 0.0, "mc")
    f.write_text("nonsense\n")
    with pytest.raises(DomainError):
        P1Table.load(f)
    with pytest.raises(DomainError):
        P1Table(np.array([1.0, 0.0]), np.zeros(2), np.zeros(2), 0.0, 2.0, 0.0)


def test_pde_table_roundtrip_is_exact(tmp_path):
    tab = solve_p1_table(make_params(1, 0.5))
    f = tmp_path / "p1.csv"
    tab.save(f)
    back = P1Table.load(f)
    x = np.linspace(-9, 13, 1001)
    assert np.array_equal(back.lookup(x), tab.lookup(x))


def test_hitting_bound_ratio():
    p = make_params(4, 1)
    x = np.array([-3.0, -1.0, 0.5])
    r = lemma4_bound(p, x, 2.0) / lemma4_bound(p, x, 1.0)
    assert np.allclose(r, 2.0)
    assert math.isclose(lemma4_bound(p, 0.0, 1.0), math.exp(-1.0))


def test_analytic_kappa3_exact_case():
    # Q(1, z) e^{z/2} = e^{-z/2}, largest as z -> 0
    assert abs(analytic_kappa3(make_params(2, 0)) - 1.0) < 1e-8


def test_calibration_dominates_table():
    p = make_params(2, 0)
    cal = calibrate_kappa3(p, SimConfig(n_paths=2000, dt=1e-2, seed=4))
    pde = solve_p1_table(p)
    x = np.arange(-6.0, 0.01, 0.25)
    assert np.all(pde.lookup(x) <= lemma4_bound(p, x, cal.kappa3) + 3 * cal.stderr.max())
    # shape: log p1 + (beta/4) e^{-x} stays below log kappa3 on [-3, 0]
    y = np.linspace(-3, 0, 31)
    s = np.log(pde.lookup(y)) + 0.5 * np.exp(-y)
    assert np.all(s <= math.log(cal.kappa3))


def test_tail_fit_exact_case():
    p = make_params(2, 0)
    tab = solve_p1_table(p)
    one = tail_fit(p, [9.0], tab, SimConfig(n_paths=500, dt=1e-2))
    assert one.flatness == 0.0 and not one.flagged
    fit = tail_fit(p, [16.0, 25.0, 36.0], tab, SimConfig(n_paths=2000, dt=1e-2))
    assert fit.flatness < 0.1
    assert all(abs(e.mean - 1) < 0.1 for e in fit.e_estimates)
    with pytest.raises(DomainError):
        tail_fit(p, [9.0, 4.0], tab, SimConfig(n_paths=10))


def test_sandwich_envelope():
    p = make_params(4, 1)
    tab = solve_p1_table(p)
    chk = sandwich_check(p, 9.0, tab, SimConfig(n_paths=2000, dt=1e-2, seed=1),
                         SimConfig(n_paths=2000, dt=1e-2, seed=2))
    assert chk.fraction_inside >= 0.999
    assert chk.kappa5 == abs(p.gamma) + 1
