import math
from dataclasses import replace

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate as spi

from hardedge.asymptotics import solve_p1_table
from hardedge.core import (DiffusionPath, DomainError, PathStatus, RngStream, SimConfig, TimeGrid,
                           horizon_T, make_params)
from hardedge.diffusion import DriftSpec, drift, estimate_p_direct, integrate
from hardedge.girsanov import (HFamily, estimate_e_lambda, estimate_p_importance, eta,
                               f_minus_g, fit_nu_bound, kappa, kappa_from_h, leading_log,
                               log_R_closed, log_R_direct, nu, phi, phi_bound_constant)

SETTINGS = [(2.0, 0.0), (4.0, 1.0), (1.0, 0.5), (0.5, 3.0)]


def _h2_mp(beta, a, y):
    """h2 from its defining quotient in 50-digit arithmetic."""
    with mp.workdps(50):
        beta, a, y = mp.mpf(beta), mp.mpf(a), mp.mpf(y)
        g = beta * (a + 1) / 2 - 1
        h1 = lambda u: -g / (1 + mp.exp(u))
        h1p = lambda u: g * mp.exp(u) / (1 + mp.exp(u)) ** 2
        k2 = beta * (a + mp.mpf(1) / 2) / 2
        num = (h1(y) ** 2 - h1(0) ** 2) + k2 * (h1(y) - h1(0)) + (h1p(y) - h1p(0))
        return num / (beta * mp.sinh(y))


def test_h2_closed_form_against_high_precision():
    hf = HFamily(make_params(4.0, 1.0))
    assert abs(float(hf.h2(1.0)) - float(_h2_mp(4.0, 1.0, 1.0))) <= 1e-15
    for beta, a in SETTINGS:
        hf = HFamily(make_params(beta, a))
        for y in (-20.0, -3.0, -0.5, 1e-3, 0.7, 4.0, 25.0):
            ref = float(_h2_mp(beta, a, y))
            assert abs(float(hf.h2(y)) - ref) <= 1e-14 * max(1.0, abs(ref))


def test_h1_examples():
    hf = HFamily(make_params(4.0, 1.0))
    assert hf.h1(0.0) == -1.5
    assert hf.h1p(0.0) == 0.75
    assert hf.H1(0.0) == 0.0
    g = HFamily(make_params(2.0, 0.0))
    y = np.linspace(-30, 30, 61)
    assert np.all(g.h1(y) == 0) and np.all(g.h2(y) == 0)
    assert np.all(g.h_total(5.0, 1.0, y) == 0.25)


def test_h_total_at_terminal_time():
    p = make_params(1.0, 0.5)
    hf = HFamily(p)
    y = np.array([-2.0, 0.3, 4.0])
    assert np.allclose(hf.h_total(3.0, 3.0, y), p.k + hf.h1(y) + hf.h2(y), rtol=1e-15)


def test_h2_quotient_away_from_zero():
    hf = HFamily(make_params(4.0, 1.0))
    y = np.array([-5.0, -1.0, 0.5, 2.0, 6.0])
    assert np.allclose(hf.h2_quotient(y), hf.h2(y), rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("beta,a", SETTINGS)
def test_derivatives_and_antiderivatives(beta, a):
    hf = HFamily(make_params(beta, a))
    y = np.linspace(-10, 10, 201)
    d = 1e-5
    assert np.max(np.abs((hf.h2(y + d) - hf.h2(y - d)) / (2 * d) - hf.h2p(y))) <= 1e-7
    assert np.max(np.abs((hf.h1(y + d) - hf.h1(y - d)) / (2 * d) - hf.h1p(y))) <= 1e-7
    for yy in (-7.0, -1.0, 2.5, 9.0):
        ref1 = spi.quad(lambda u: float(hf.h1(u)), 0, yy, epsabs=1e-14, epsrel=1e-13)[0]
        ref2 = spi.quad(lambda u: float(hf.h2(u)), 0, yy, epsabs=1e-14, epsrel=1e-13)[0]
        assert abs(float(hf.H1(yy)) - ref1) <= 1e-11
        assert abs(float(hf.G(yy)) - ref2) <= 1e-11


@pytest.mark.parametrize("beta,a", SETTINGS)
def test_tail_integrals(beta, a):
    hf = HFamily(make_params(beta, a))
    f = lambda u: float(hf.h2(u))
    for cut in (80.0, 160.0):
        assert abs(spi.quad(f, 0, cut, limit=400)[0] - hf.G_inf) <= 1e-10
        assert abs(spi.quad(f, 0, -cut, limit=400)[0] - hf.G_neginf) <= 1e-10
    ref = spi.quad(lambda u: float(hf.h1(u)), 0, 200, limit=400)[0]
    assert abs(ref - hf.H1_inf) <= 1e-10


def test_h_bounds():
    for beta, a in SETTINGS:
        p = make_params(beta, a)
        hf = HFamily(p)
        y = np.linspace(-40, 40, 4001)
        assert np.max(np.abs(hf.h1(y))) <= abs(p.gamma) + 1e-15
        assert np.all(hf.h_total(5.0, 1.0, y) >= hf.h0 + 0.5 - 1e-12)


@given(st.floats(0.1, 12.0), st.floats(-0.99, 12.0))
def test_kappa_identity(beta, a):
    p = make_params(beta, a)
    assert abs(kappa(p) - kappa_from_h(p)) <= 1e-13 * max(1.0, abs(kappa(p)))


def test_kappa_examples():
    assert kappa(make_params(2, 0)) == 0.0
    assert kappa(make_params(4, 1)) == -0.75


def test_nu_phi_examples():
    p = make_params(2, 0)
    y = np.linspace(-30, 30, 61)
    assert np.allclose(nu(p, 3.0, y), 1.0) and np.allclose(nu(p, math.inf, y), 1.0)
    assert np.all(phi(p, 0.5, y) == 0.0)
    q = make_params(4, 1)
    assert np.all(np.abs(phi(q, 1e4, y)) < 1e-300)
    # G(inf) = (3/32) * 2 for beta = 4, a = 1
    assert math.isclose(float(nu(q, math.inf, 1e3)), 2 - 4 * 1.5 - 0.1875, abs_tol=1e-12)
    with pytest.raises(DomainError):
        nu(q, -1.0, 0.0)
    with pytest.raises(DomainError):
        phi(q, -1.0, 0.0)


@pytest.mark.parametrize("beta,a", SETTINGS)
def test_nu_and_phi_bounds(beta, a):
    p = make_params(beta, a)
    hf = HFamily(p)
    y = np.linspace(-40, 40, 4001)
    Ts = [0.0, 1.0, 10.0, math.inf]
    k1, k2 = fit_nu_bound(p, Ts, y, hf)
    yt = np.linspace(-80, 80, 3001)
    for T in Ts:
        assert np.all(np.abs(nu(p, T, yt, hf)) <= k1 + k2 * np.maximum(0, -yt) + 1e-9)
    c = phi_bound_constant(p, y, hf)
    for s in (0.0, 2.0, 30.0):
        assert np.all(np.abs(phi(p, s, y, hf)) <= c * eta(p, s) * (1 + 1e-12))


def test_leading_log_examples():
    assert leading_log(make_params(2, 0), 9.0) == -9.0
    p = make_params(4, 1)
    assert math.isclose(leading_log(p, 16.0), -32 + 24 - 0.75 * math.log(16), rel_tol=1e-15)


def test_f_minus_g_identity():
    p = make_params(4, 1)
    lam = 9.0
    T = horizon_T(p, lam)
    for t, y in [(0.0, 2.0), (0.3, -1.0), (T, 0.4)]:
        f = drift(DriftSpec("x", p, lam), t, y)
        g = drift(DriftSpec("y", p, lam, T), t, y)
        assert math.isclose(float(f_minus_g(p, lam, T, t, y)), f - g, rel_tol=1e-11, abs_tol=1e-12)


def test_direct_zero_noise_path():
    # gamma = 0 and y = 0 with no noise: only -(1/2) sum m(t)^2 dt survives
    p = make_params(2, 0)
    lam = 4.0
    T = horizon_T(p, lam)
    n = 2000
    g = TimeGrid(0.0, T / n, n)
    path = DiffusionPath(g, np.zeros(n + 1), PathStatus.SURVIVED)
    got = log_R_direct(p, lam, path, np.zeros(n))
    r = math.exp(-p.beta * g.dt / 4)
    geo = g.dt * (1 - r ** n) / (1 - r)
    ref = -0.5 * (p.beta / 2) ** 2 * lam * geo
    assert abs(got - ref) <= 1e-8
    assert abs(ref + (p.beta / 2) * (lam - 1)) < 5 * g.dt


def test_closed_exact_case_form():
    p = make_params(2, 0)
    lam = 9.0
    g = TimeGrid.spanning(0.0, horizon_T(p, lam), 1e-2)
    path = integrate(DriftSpec("y", p, lam), 8.0, g, stream=RngStream(1))
    w = log_R_closed(p, lam, path)
    assert w.log_leading == -9.0
    assert math.isclose(w.log_residual, math.exp(-path.values[-1]) + 1.0, rel_tol=1e-14)
    with pytest.raises(DomainError):
        log_R_closed(p, 0.5, path)


def test_closed_lambda_one():
    p = make_params(4, 1)
    hf = HFamily(p)
    path = DiffusionPath(TimeGrid(0.0, 1e-2, 0), np.array([1.7]), PathStatus.SURVIVED)
    w = log_R_closed(p, 1.0, path)
    assert math.isclose(w.log_leading, -p.beta / 2 + 2 * p.gamma, rel_tol=1e-15)
    ref = 0.5 * p.beta * math.exp(-1.7) + float(nu(p, 0.0, 1.7, hf))
    assert math.isclose(w.log_residual, ref, rel_tol=1e-14)


def test_closed_and_direct_converge():
    from hardedge.verify import girsanov_rms
    rms, order = girsanov_rms(make_params(4, 1), 4.0, 10, 4e-3, 2, seed=3)
    assert all(math.isfinite(r) for r in rms) and rms[-1] < rms[0]
    assert 0.3 <= order <= 1.5


def test_e_times_leading_is_p():
    p = make_params(1, 0.5)
    tab = solve_p1_table(p)
    cfg = SimConfig(n_paths=2000, dt=1e-2, seed=2)
    e = estimate_e_lambda(p, 9.0, tab, cfg)
    pi = estimate_p_importance(p, 9.0, tab, cfg)
    assert math.isclose(e.mean * math.exp(leading_log(p, 9.0)), pi.mean, rel_tol=1e-14)
    assert math.isclose(e.stderr * math.exp(leading_log(p, 9.0)), pi.stderr, rel_tol=1e-14)


def test_importance_variance_reduction():
    p = make_params(1, 0.5)
    tab = solve_p1_table(p)
    cfg = SimConfig(n_paths=20_000, dt=1e-2, seed=4)
    d = estimate_p_direct(p, 9.0, tab, cfg)
    i = estimate_p_importance(p, 9.0, tab, cfg)
    assert d.stderr / d.mean >= 5 * i.stderr / i.mean
    assert not i.diagnostics["degenerate"]


def test_importance_thread_independent():
    p = make_params(4, 1)
    tab = solve_p1_table(p)
    cfg = SimConfig(n_paths=3000, dt=1e-2, seed=5, chunk_normals=20_000)
    a = estimate_p_importance(p, 4.0, tab, cfg)
    b = estimate_p_importance(p, 4.0, tab, replace(cfg, threads=3))
    assert a == b


@pytest.mark.slow
@pytest.mark.parametrize("beta,a", [(2.0, 0.0), (1.0, 0.5)])
def test_e_lambda_stability(beta, a):
    from hardedge.core import combined_z
    p = make_params(beta, a)
    tab = solve_p1_table(p)
    e25 = estimate_e_lambda(p, 25.0, tab, SimConfig(n_paths=20_000, dt=2e-3, seed=10))
    e49 = estimate_e_lambda(p, 49.0, tab, SimConfig(n_paths=20_000, dt=2e-3, seed=11))
    assert combined_z(e25, e49) < 3
