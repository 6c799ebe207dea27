"""Invariant suites run by ``hardedge verify``; each returns a list of checks."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .asymptotics import (build_p1_table, calibrate_kappa3, exit_probability, lemma4_bound,
                          solve_p1_table)
from .core import (DiffusionPath, EnsembleParams, PathStatus, RngStream, SimConfig, TimeGrid,
                   horizon_T, make_params)
from .diffusion import (coupled_y_family, estimate_p_direct, ordering_violations,
                        simulate_q_boundary_check)
from .girsanov import (HFamily, estimate_e_lambda, estimate_p_importance, eta, fit_nu_bound,
                       kappa, kappa_from_h, log_R_closed, log_R_direct, nu, phi,
                       phi_bound_constant)
from .matrix_model import empirical_survival, sample_hard_edge


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def kappa_suite(n: int = 1000, seed: int = 0) -> list[Check]:
    gen = RngStream(seed, 0).generator()
    betas = gen.uniform(0.2, 10.0, n)
    avals = gen.uniform(-0.99, 10.0, n)
    worst = 0.0
    for b, a in zip(betas, avals):
        p = make_params(b, a)
        k1, k2 = kappa(p), kappa_from_h(p)
        worst = max(worst, abs(k1 - k2) / max(1.0, abs(k1)))
    return [Check("kappa identity", worst <= 1e-13, f"max scaled deviation {worst:.3g} over {n} draws")]


def _coupled_paths(params, lam, grid_fine, ratio, stream, start):
    """y-path at the fine step and at ``ratio`` times coarser, on one Brownian path."""
    z = stream.generator().standard_normal(grid_fine.n_steps)
    par = K.pack(params.beta, params.a, lam, horizon_T(params, lam))
    zc = z.reshape(-1, ratio).sum(axis=1) / math.sqrt(ratio)
    g = TimeGrid(0.0, grid_fine.dt * ratio, grid_fine.n_steps // ratio)
    vals, st, _ = K.integrate_path(K.Y, par, start, 0.0, g.dt, zc, -25.0, 10 ** 6, 0.1)
    return DiffusionPath(g, vals, PathStatus(st)), zc * math.sqrt(g.dt)


def girsanov_rms(params: EnsembleParams, lam: float, n_paths: int, dt: float, halvings: int = 2,
                 seed: int = 0, start: float = 8.0) -> tuple[list[float], float]:
    """rms |closed - direct| at dt, dt/2, ...; fitted order from a log-log slope.

    The coarse paths aggregate the finest Brownian increments, so all levels
    share one Brownian path per sample.
    """
    T = horizon_T(params, lam)
    levels = halvings + 1
    n_coarse = int(round(T / dt))
    grid_fine = TimeGrid(0.0, T / n_coarse / 2 ** halvings, n_coarse * 2 ** halvings)
    hf = HFamily(params)
    rms = []
    for lev in range(levels):
        ratio = 2 ** (halvings - lev)
        d = []
        for k in range(n_paths):
            path, inc = _coupled_paths(params, lam, grid_fine, ratio, RngStream(seed, k), start)
            c = log_R_closed(params, lam, path, from_start=True, hf=hf).total
            d.append(c - log_R_direct(params, lam, path, inc, hf))
        rms.append(float(np.sqrt(np.mean(np.square(d)))))
    dts = dt / 2.0 ** np.arange(levels)
    order = float(np.polyfit(np.log(dts), np.log(rms), 1)[0])
    return rms, order


GIRSANOV_SETTINGS = ((2.0, 0.0, 4.0), (1.0, 0.5, 4.0), (4.0, 1.0, 4.0))


def girsanov_suite(dt: float = 1e-3, n_paths: int = 50, seed: int = 0,
                   settings=GIRSANOV_SETTINGS) -> list[Check]:
    out = []
    for b, a, lam in settings:
        p = make_params(b, a)
        rms, order = girsanov_rms(p, lam, n_paths, dt, 2, seed)
        ok = all(math.isfinite(r) for r in rms) and rms[2] < rms[0] and 0.3 <= order <= 1.5
        out.append(Check(f"girsanov beta={b:g} a={a:g} lambda={lam:g}", ok,
                         "rms " + ", ".join(f"{r:.4g}" for r in rms) + f"; order {order:.3f}"))
    return out


def coupling_suite(dt: float = 1e-3, n_families: int = 20, seed: int = 0,
                   q_paths: int = 2000) -> list[Check]:
    p = make_params(2.0, 0.0)
    bad_t = bad_z = shared_t = shared_z = 0
    mag_t = mag_z = 0.0
    for k in range(n_families):
        ys = coupled_y_family(p, [4.0, 8.0], dt, RngStream(seed, k), with_z=True)
        f, m, s = ordering_violations(ys[0], ys[1])
        bad_t += f * s
        shared_t += s
        mag_t = max(mag_t, m)
        for y in ys[:2]:
            f, m, s = ordering_violations(y, ys[2])
            bad_z += f * s
            shared_z += s
            mag_z = max(mag_z, m)
    tol = 5.0 * math.sqrt(dt)
    ft, fz = bad_t / shared_t, bad_z / shared_z
    out = [
        Check("T-monotonicity", ft < 1e-3 and mag_t < tol,
              f"violated fraction {ft:.3g}, max magnitude {mag_t:.3g} (limit {tol:.3g})"),
        Check("z-domination", fz < 1e-3 and mag_z < tol,
              f"violated fraction {fz:.3g}, max magnitude {mag_z:.3g} (limit {tol:.3g})"),
    ]
    q = simulate_q_boundary_check(p, 4.0, q_paths, RngStream(seed, 1 << 32))
    out.append(Check("q boundary", q.fraction_exploded_given_hit >= 0.95,
                     f"hit {q.fraction_hit_zero:.4f}, exploded given hit "
                     f"{q.fraction_exploded_given_hit:.4f} (window {q.hit_window:.3g}, "
                     f"deadline {q.explosion_deadline:.3g})"))
    return out


def hitting_bound_checks(params: EnsembleParams, n_paths: int = 4000, dt: float = 1e-2,
                  seed: int = 0, test_paths: int | None = None) -> list[Check]:
    """MC p1 at x = -3, -2, -1 under the calibrated and the exit-probability bounds.

    Calibration uses ``n_paths`` per node from seed + 1; the test nodes use
    ``test_paths`` (default ``n_paths``) from ``seed``.
    """
    calib = calibrate_kappa3(params, SimConfig(n_paths=n_paths, dt=dt, seed=seed + 1))
    xs = np.array([-3.0, -2.0, -1.0])
    tab = build_p1_table(params, SimConfig(n_paths=test_paths or n_paths, dt=dt, seed=seed), xs=xs)
    raw, se = tab.raw, tab.stderr
    bound = lemma4_bound(params, xs, calib.kappa3)
    ex = exit_probability(params, xs)
    return [
        Check("calibrated hitting bound", bool(np.all(raw <= bound)),
              f"p1 {np.array2string(raw, precision=5)} vs bound "
              f"{np.array2string(bound, precision=5)}; kappa3 {calib.kappa3:.4g} "
              f"(analytic {calib.analytic:.4g})"),
        Check("exit-probability hitting bound", bool(np.all(raw <= ex + 3 * se)),
              f"p1 {np.array2string(raw, precision=5)} vs {np.array2string(ex, precision=5)}"),
    ]


def bounds_suite(params: EnsembleParams | None = None, hitting_paths: int = 4000,
                 seed: int = 0) -> list[Check]:
    out = []
    plist = [params] if params is not None else [make_params(2, 0), make_params(4, 1),
                                                  make_params(1, 0.5)]
    y = np.linspace(-40, 40, 8001)
    for p in plist:
        hf = HFamily(p)
        tag = f"beta={p.beta:g} a={p.a:g}"
        h1max = float(np.max(np.abs(hf.h1(y))))
        out.append(Check(f"h1 bound {tag}", h1max <= abs(p.gamma) + 1e-15,
                         f"sup|h1| {h1max:.6g} <= |gamma| {abs(p.gamma):.6g}"))
        h2max = float(np.max(np.abs(hf.h2(y))))
        tails = abs(float(hf.h2(40.0))) + abs(float(hf.h2(-40.0)))
        out.append(Check(f"h2 bounded {tag}", math.isfinite(h2max) and tails < 1e-12,
                         f"sup|h2| {h2max:.6g}, |h2(+-40)| {tails:.3g}"))
        yy = np.linspace(-10, 10, 2001)
        hstep = 1e-5
        cd = (hf.h2(yy + hstep) - hf.h2(yy - hstep)) / (2 * hstep)
        dev = float(np.max(np.abs(cd - hf.h2p(yy))))
        out.append(Check(f"h2' analytic {tag}", dev <= 1e-7, f"max deviation {dev:.3g}"))
        T_grid = [0.0, 0.5, 2.0, 8.0, 32.0, math.inf]
        k1, k2 = fit_nu_bound(p, T_grid, y, hf)
        yt = np.linspace(-60, 60, 4001)
        viol = max(float(np.max(np.abs(nu(p, T, yt, hf)) - (k1 + k2 * np.maximum(0, -yt))))
                   for T in T_grid)
        out.append(Check(f"nu bound {tag}", viol <= 1e-9,
                         f"kappa1 {k1:.4g}, kappa2 {k2:.4g}; worst excess on wider grid {viol:.3g}"))
        c = phi_bound_constant(p, y, hf)
        ratios = [float(np.max(np.abs(phi(p, s, y, hf)) / eta(p, s))) for s in (0.0, 1.0, 10.0)]
        out.append(Check(f"phi bound {tag}", max(ratios) <= c * (1 + 1e-12),
                         f"c {c:.4g}; sup|phi|/eta at s=0,1,10: "
                         + ", ".join(f"{r:.4g}" for r in ratios)))
    out += hitting_bound_checks(plist[0], hitting_paths, seed=seed)
    return out


def exact_case_suite(n_paths: int = 100_000, dt: float = 2e-3, seed: int = 0,
                     matrix_samples: int = 100_000, direct_paths: int = 100_000) -> list[Check]:
    p = make_params(2.0, 0.0)
    tab = solve_p1_table(p)
    out = []
    for lam in (4.0, 9.0):
        e = estimate_p_importance(p, lam, tab, SimConfig(n_paths=n_paths, dt=dt, seed=seed))
        z = abs(e.mean - math.exp(-lam)) / e.total_stderr
        out.append(Check(f"importance p lambda={lam:g}", z <= 3 and e.relative_stderr <= 0.02,
                         f"p {e.mean:.8g} vs {math.exp(-lam):.8g}, {z:.2f} stderr, "
                         f"relative stderr {e.relative_stderr:.3g}"))
    d = estimate_p_direct(p, 4.0, tab, SimConfig(n_paths=direct_paths, dt=dt, seed=seed + 1))
    z = abs(d.mean - math.exp(-4.0)) / d.total_stderr
    out.append(Check("direct p lambda=4", z <= 3, f"p {d.mean:.6g} vs {math.exp(-4):.6g}, {z:.2f} stderr"))
    for lam in (16.0, 36.0):
        e = estimate_e_lambda(p, lam, tab, SimConfig(n_paths=min(n_paths, 20000), dt=dt, seed=seed))
        out.append(Check(f"e_lambda lambda={lam:g}", abs(e.mean - 1.0) <= 3 * e.total_stderr,
                         f"e {e.mean:.8g} +- {e.total_stderr:.3g}"))
    for n in (1, 2, 50):
        s = sample_hard_edge(p, n, matrix_samples, RngStream(seed, n << 32))
        worst = max(abs(empirical_survival(s, l).mean - math.exp(-l)) / empirical_survival(s, l).stderr
                    for l in (0.5, 1.0, 2.0))
        out.append(Check(f"matrix survival n={n}", worst <= 3, f"max {worst:.2f} binomial stderr"))
    out.append(Check("p1 plateau", abs(tab.plateau - math.exp(-1)) <= 3 * tab.plateau_stderr,
                     f"{tab.plateau:.8g} vs {math.exp(-1):.8g}"))
    return out


SUITES = {
    "kappa": kappa_suite,
    "girsanov": girsanov_suite,
    "coupling": coupling_suite,
    "bounds": bounds_suite,
    "exact-case": exact_case_suite,
}
