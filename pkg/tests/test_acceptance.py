"""Acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line (printed and collected into the
terminal summary) before asserting, so a failing criterion still reports.
"""

from __future__ import annotations

import math
import re
import time

import numpy as np
import pytest
from scipy.optimize import minimize

from conftest import record
from gcb_lab import bounds, kernels
from gcb_lab.cli import main as cli_main
from gcb_lab.config import load_config
from gcb_lab.engine import (TimeGrid, simulate_coupled_pair, simulate_ensemble,
                            simulate_nonmarkov)
from gcb_lab.estimators import (burkholder_moment_check, chernoff_check, coupling_rate_estimate,
                                empirical_gcb_constant, exp_square_moment, odd_moment_check)
from gcb_lab.experiments import run_experiment
from gcb_lab.laws import PointMass, ProductGaussian
from gcb_lab.observables import (coordinate, cutoff_observable, default_family, distance,
                                 linear, lipschitz_violation, truncate_observable)
from gcb_lab.processes import (descente_h, make_descente, make_gl_chain, make_nonmarkov_pair,
                               make_ou_1d, make_ou_matrix)

pytestmark = pytest.mark.acceptance

SQRT2 = math.sqrt(2.0)
DOUBLING_TOL = 0.10
TEST_TAG = 11


def _doubling_stable(est) -> bool:
    """Full-sample and half-sample estimates agree to within 10%."""
    r = est.info.get("doubling_log_ratio")
    return r is not None and math.isfinite(r) and abs(r) <= math.log1p(DOUBLING_TOL)


@pytest.fixture(scope="module")
def ou_run():
    t0 = time.perf_counter()
    spec = make_ou_1d(1.0, SQRT2)
    grid = TimeGrid(0.0, 4.0, 1e-3)
    ens = simulate_ensemble(spec, ProductGaussian((0.0,), (4.0,)), grid, 100_000, 101,
                            checkpoints=[0.25, 1.0, 4.0])
    return ens, time.perf_counter() - t0


def test_criterion_01_ou_variance(ou_run):
    ens, elapsed = ou_run
    worst = 0.0
    ok = elapsed < 30
    for e in ens:
        x = e.alive()[:, 0]
        n = x.size
        s2 = x.var(ddof=1)
        m4 = np.mean((x - x.mean()) ** 4)
        se = math.sqrt((m4 - s2 * s2) / n)
        target = 4 * math.exp(-2 * e.time) + (1 - math.exp(-2 * e.time))
        z = abs(s2 - target) / se
        worst = max(worst, z)
        ok = ok and z <= 3
    record(1, "OU variance law", ok, f"max |z| = {worst:.2f}, {elapsed:.1f} s")
    assert ok


def test_criterion_02_ou_gcb_interpolation(ou_run):
    ens, _ = ou_run
    t0 = time.perf_counter()
    family = default_family(1, seed=0)
    lin = family.subset("linear", "coordinate")
    ok = True
    worst_rel = 0.0
    for e in ens:
        D = 0.5 + 1.5 * math.exp(-2 * e.time)
        full = empirical_gcb_constant(e, family)
        sub = empirical_gcb_constant(e, lin)
        rel = abs(sub.value - D) / D
        worst_rel = max(worst_rel, rel)
        ok = ok and full.value <= D + 3 * full.std_error and rel <= 0.10
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed < 120
    record(2, "OU GCB interpolation", ok, f"linear sub-family max rel err {worst_rel:.3f}")
    assert ok


def test_criterion_03_brownian_literal_curve():
    sigma = 1.0
    spec = make_ou_1d(0.0, sigma)
    grid = TimeGrid(0.0, 2.0, 0.01)
    ens = simulate_ensemble(spec, ProductGaussian((0.0,), (1.0,)), grid, 100_000, 3,
                            checkpoints=[1.0, 2.0])
    lin = default_family(1, seed=0).subset("linear", "coordinate")
    d0 = 0.5
    ok = True
    details = []
    for e in ens:
        literal = d0 + sigma**2 * e.time
        dhat = empirical_gcb_constant(e, lin).value
        rel = abs(dhat - literal) / literal
        details.append(f"t={e.time:g}: D_hat={dhat:.3f} vs {literal:.3f}")
        ok = ok and rel <= 0.10
    record(3, "Brownian D0 + sigma^2 t", ok, "; ".join(details))
    assert ok


def test_criterion_04_coupling_rate():
    dt = 1e-3
    grid = TimeGrid(0.0, 1.0, dt)
    target = math.exp(-1.0)
    one = coupling_rate_estimate(
        simulate_coupled_pair(make_ou_1d(1.0, 1.0), [1.0], [0.0], grid, 2000, 5)[0])
    spec = make_ou_matrix(np.diag([1.0, 3.0]), np.eye(2))
    rates = []
    for axis in np.eye(2):
        c = simulate_coupled_pair(spec, axis, np.zeros(2), grid, 2000, 5)[0]
        rates.append(coupling_rate_estimate(c).value)
    worst = max(rates)
    ok = abs(one.value - target) <= 2 * dt and abs(worst - target) <= 2 * dt
    record(4, "coupling rate", ok, f"ou_1d {one.value:.6f}, ou_matrix worst {worst:.6f}, "
                                   f"target {target:.6f}")
    assert ok


@pytest.fixture(scope="module")
def gl_run():
    t0 = time.perf_counter()
    spec = make_gl_chain(10, 1.0, 2.0, SQRT2, SQRT2)
    grid = TimeGrid(0.0, 50.0, 0.01)
    ens = simulate_ensemble(spec, PointMass((0.0,) * 10), grid, 20_000, 23)[0]
    return spec, ens, time.perf_counter() - t0


def test_criterion_05_gl_profile(gl_run):
    spec, ens, elapsed = gl_run
    x = ens.alive()
    n = x.shape[0]
    var = x.var(axis=0, ddof=1)
    m4 = ((x - x.mean(axis=0)) ** 4).mean(axis=0)
    se = np.sqrt((m4 - var**2) / n)
    target = np.array([1 + (0.5 - 1) * i / 11 for i in range(1, 11)])
    z = np.abs(var - target) / se
    ok = bool(np.all(z <= 3)) and elapsed < 240
    record(5, "GL stationary linear profile", ok,
           f"max |z| = {z.max():.1f} at site {int(z.argmax()) + 1}, {elapsed:.0f} s")
    assert ok


def test_criterion_05_gl_matches_lyapunov_covariance(gl_run):
    """Not itself a criterion: the same ensemble against the exact stationary covariance."""
    from scipy.linalg import solve_continuous_lyapunov

    spec, ens, _ = gl_run
    B, S = spec.kernel[1]
    cov = solve_continuous_lyapunov(B, -S @ S.T)
    x = ens.alive()
    n = x.shape[0]
    var = x.var(axis=0, ddof=1)
    m4 = ((x - x.mean(axis=0)) ** 4).mean(axis=0)
    se = np.sqrt((m4 - var**2) / n)
    # Euler bias at dt = 0.01 is O(dt) relative
    assert np.all(np.abs(var - np.diag(cov)) <= 3 * se + 0.02 * np.diag(cov))


def test_criterion_05_bulk_conservation():
    spec = make_gl_chain(10)
    grid = TimeGrid(0.0, 50.0, 0.01)
    init = ProductGaussian((0.0,) * 10, (1.0,) * 10)
    start = init.sample(23, np.arange(20_000, dtype=np.uint64)).sum(axis=1)
    end = simulate_ensemble(spec, init, grid, 20_000, 23)[0].states.sum(axis=1)
    err = float(np.max(np.abs(end - start)))
    ok = err <= 1e-9
    record(5, "GL zero-reservoir sum conservation", ok, f"max drift {err:.2e}")
    assert ok


def test_criterion_06_quadrature_oracle():
    t0 = time.perf_counter()
    d0, kappa, a = 2.0, 1.0, 1.0
    conv = bounds.convex_drift_curve(d0, kappa, a)
    cpl = bounds.coupling_curve(d0, a, lambda s: math.exp(-kappa * s))
    ts = np.linspace(0.0, 10.0, 1000)
    err = max(abs(cpl(t) - conv(t)) for t in ts)
    elapsed = time.perf_counter() - t0
    ok = err <= 1e-8 and elapsed < 1.0
    record(6, "coupling curve equals convex curve", ok, f"max err {err:.1e}, {elapsed:.2f} s")
    assert ok


def test_criterion_07_moment_gcb_conversions():
    n = 1_000_000
    z = kernels.backend.normals(7, TEST_TAG, 0, np.arange(n, dtype=np.uint64), 1)
    est = exp_square_moment(z, 0.25)
    first = abs(est.value - SQRT2) <= 3 * est.std_error
    d = bounds.moment_to_gcb(0.25, SQRT2)
    second = abs(d - 3.0672) <= 1e-4
    ch = chernoff_check(z, [0.0], 0.5, np.linspace(0.0, 4.0, 41))
    ok = first and second and ch.passed
    record(7, "moment and GCB conversions", ok,
           f"E exp(X^2/4) = {est.value:.4f} +- {est.std_error:.4f}, D = {d:.5f}, "
           f"chernoff {'ok' if ch.passed else 'violated'}")
    assert ok


def test_criterion_08_coming_down_from_infinity():
    sched = bounds.descente_schedule(descente_h, 0.25, 2.0)
    t_star_ok = abs(sched.t_star - 1.0) <= 1e-8
    alpha = sched.alpha_exp
    spec = make_descente(1)
    grid = TimeGrid(0.0, 0.1, 5e-7)
    vals = []
    ok = t_star_ok
    for x0 in (10.0, 100.0, 1000.0):
        ens = simulate_ensemble(spec, PointMass((x0,)), grid, 2000, 31)[0]
        est = exp_square_moment(ens, alpha)
        ok = ok and est.valid and math.isfinite(est.value) and _doubling_stable(est)
        vals.append(est.value)
    spread = (max(vals) - min(vals)) / min(vals)
    ok = ok and spread < 0.10
    record(8, "coming down from infinity", ok,
           f"t* = {sched.t_star:.10f}, moments {[round(v, 4) for v in vals]}, "
           f"spread {spread:.3f}")
    assert ok


def _lorenz_ratio(v, sigma=10.0, r=28.0, b=8.0 / 3.0):
    v = np.atleast_2d(v)
    x, y, z = v[:, 0], v[:, 1], v[:, 2]
    return (r * x * x + y * y + b * z * z) / (r * x * x + sigma * y * y + sigma * z * z)


def test_criterion_09_lorenz():
    beta = bounds.lorenz_beta(10.0, 28.0, 8.0 / 3.0)
    exact = beta == 0.1
    pts = kernels.backend.normals(9, TEST_TAG, 0, np.arange(1_000_000, dtype=np.uint64), 3)
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    vals = _lorenz_ratio(pts)
    best = pts[int(vals.argmin())]
    res = minimize(lambda v: float(_lorenz_ratio(v / np.linalg.norm(v))[0]), best,
                   method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-12})
    brute = min(float(vals.min()), float(res.fun))
    agree = abs(brute - beta) <= 1e-3

    cfg = load_config("lorenz").with_overrides(n_paths=20_000, dt=2e-3)
    rep = run_experiment(cfg)
    last = rep.rows[-1]
    ch = last["diagnostics"].get("chernoff", {})
    passed = bool(ch.get("passed")) and last["t"] == 30.0
    ok = exact and agree and passed
    record(9, "Lorenz beta and Chernoff", ok,
           f"beta = {beta}, brute force {brute:.6f}, chernoff at t=30 "
           f"{'ok' if passed else 'violated'}")
    assert ok


def test_criterion_10_nonmarkov():
    spec = make_nonmarkov_pair(1.0, 1.0, lambda y: np.tanh(y) + 1.5, 2.5)
    init = ProductGaussian((0.0, 0.0), (0.5, 1.0))
    res = simulate_nonmarkov(spec, init, TimeGrid(0.0, 1.0, 1e-3), 100_000, 41)
    a0_init = 1.0 / (16.0 * init.var[1] / 2.0)
    a = 0.5 * bounds.nonmarkov_admissible_a(2.5, 1.0, a0_init, 1.0)
    est = exp_square_moment(res.ensembles[-1], a)
    first = est.valid and math.isfinite(est.value) and _doubling_stable(est)
    odd = odd_moment_check(res.z[-1], orders=(1, 3))
    bk = burkholder_moment_check(res.z[-1], res.qv[-1], n=1)
    iso = [r for r in bk.rows if r.get("isometry")][0]
    ok = first and odd.passed and iso["passed"]
    m = {r["order"]: f"{r['moment']:.3f}+-{r['se']:.3f}" for r in odd.rows}
    record(10, "non-Markovian moments", ok,
           f"E exp(aX^2) = {est.value:.4f}, odd moments of Z {m}, "
           f"isometry {'ok' if iso['passed'] else 'violated'}")
    assert ok


def test_criterion_11_truncation_and_cutoff():
    dim = 3
    n = 100_000
    g = kernels.backend.normals(13, TEST_TAG, 0, np.arange(2 * n, dtype=np.uint64), dim)
    x = 3.0 * g[:n]
    # half the pairs are close, to probe the kinks
    y = np.concatenate([3.0 * g[n:n + n // 2], x[n // 2:] + 1e-3 * g[n + n // 2:]])
    base = [coordinate(0, dim), linear([1.0, -2.0, 0.5], 1.5), distance([1.0, 0.0, 0.0], 2.0)]
    worst = 0.0
    for f in base:
        for M in (0.5, 2.0):
            t = truncate_observable(f, M)
            worst = max(worst, lipschitz_violation(t, x, y))
            for A in (0.5, 2.0):
                worst = max(worst, lipschitz_violation(cutoff_observable(t, A), x, y))
    lip_ok = worst <= 1e-9
    A = 1.5
    cut = cutoff_observable(truncate_observable(base[2], 2.0), A)
    pts = 6.0 * kernels.backend.normals(17, TEST_TAG, 0, np.arange(1_000_000, dtype=np.uint64),
                                        dim)
    outside = np.linalg.norm(pts, axis=1) > 2 * A
    support_ok = bool(outside.sum() > 0 and np.all(cut(pts[outside]) == 0.0))
    ok = lip_ok and support_ok
    record(11, "truncation and cutoff transforms", ok,
           f"worst relative excess {worst:.1e}, {int(outside.sum())} points beyond 2A")
    assert ok


_STAMP = re.compile(r"\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}(\+00:00|Z)?")


def _snapshot(directory) -> dict:
    return {p.name: _STAMP.sub("<timestamp>", p.read_text()) for p in sorted(directory.iterdir())}


def test_criterion_12_determinism(tmp_path):
    configs = ["ou", "drift-perturbation"]
    snaps = []
    for k, workers in enumerate((1, 1, 8)):
        out = tmp_path / f"run{k}"
        for name in configs:
            code = cli_main(["verify", "--config", name, "--workers", str(workers),
                             "--out", str(out), "--format", "json", "--format", "csv",
                             "--format", "md"])
            assert code in (0, 1, 2)
        snaps.append(_snapshot(out))
    ok = len(snaps[0]) == 3 * len(configs) and snaps[0] == snaps[1] == snaps[2]
    record(12, "determinism across runs and workers", ok,
           f"{len(snaps[0])} files compared over 3 runs (workers 1, 1, 8)")
    assert ok
