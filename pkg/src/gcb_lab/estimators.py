"""Monte Carlo estimators of concentration quantities.

Standard errors use the delta method unless stated otherwise: for a
smooth functional ``g(mean(W))`` of per-path values ``W`` the error is
``std(psi) / sqrt(n)`` with the influence values ``psi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional, Sequence

import numpy as np

from .bounds import chernoff_tail_bound
from .engine import CoupledEnsemble, Ensemble, TimeGrid, simulate_ensemble
from .laws import PointMass
from .observables import Observable, TestFamily

Array = np.ndarray
EXPONENT_LIMIT = 700.0


class EstimatorError(ValueError):
    pass


@dataclass
class Estimate:
    value: float
    std_error: float
    n: int
    valid: bool = True
    info: dict = field(default_factory=dict)

    def upper(self, k: float = 3.0) -> float:
        return self.value + k * self.std_error

    def lower(self, k: float = 3.0) -> float:
        return self.value - k * self.std_error

    def to_dict(self) -> dict:
        return {"value": self.value, "std_error": self.std_error, "n": self.n,
                "valid": self.valid}


def _states(ens) -> Array:
    if isinstance(ens, Ensemble):
        return ens.alive()
    x = np.asarray(ens, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def log_mean_exp(v: Array) -> float:
    v = np.asarray(v, dtype=float)
    m = float(np.max(v))
    return m + math.log(float(np.mean(np.exp(v - m))))


def log_mgf_values(v: Array) -> Estimate:
    """log mean exp(v - mean v) for per-path values ``v``."""
    v = np.asarray(v, dtype=float)
    n = v.size
    if n < 2:
        raise EstimatorError("need at least two samples")
    c = v - v.mean()
    m = float(c.max())
    w = np.exp(c - m)
    wbar = float(w.mean())
    value = m + math.log(wbar)
    psi = w / wbar - c - 1.0
    se = float(psi.std(ddof=1) / math.sqrt(n))
    ok = bool(math.isfinite(value) and math.isfinite(se))
    return Estimate(value, se, n, ok)


def empirical_log_mgf(ens, f: Observable) -> Estimate:
    """log of the empirical mean of exp(f - mean f), accumulated after a max shift."""
    x = _states(ens)
    est = log_mgf_values(f(x))
    est.info["observable"] = f.name
    return est


def empirical_gcb_constant(ens, family: TestFamily) -> Estimate:
    """max over the family of log-MGF(f) / lip(f)^2, with the arg-max member recorded."""
    if len(family) == 0:
        raise EstimatorError("empty test family")
    x = _states(ens)
    best = None
    best_name = ""
    valid = True
    for f in family:
        if not f.lip > 0:
            raise EstimatorError(f"observable {f.name} has non-positive lip")
        e = log_mgf_values(f(x))
        valid = valid and e.valid
        val = e.value / f.lip**2
        if best is None or val > best.value:
            best = Estimate(val, e.std_error / f.lip**2, e.n, e.valid)
            best_name = f.name
    best.valid = valid
    best.info = {"argmax": best_name, "family_size": len(family)}
    return best


def exp_square_moment(ens, a: float, x0=None) -> Estimate:
    """Mean of exp(a |X - x0|^2) with a max shift.

    ``valid`` is false when the largest exponent exceeds 700; ``info`` holds
    the log value, the half-sample value and their ratio.
    """
    if not a > 0:
        raise EstimatorError("a must be positive")
    x = _states(ens)
    n = x.shape[0]
    c = np.zeros(x.shape[1]) if x0 is None else np.asarray(x0, dtype=float)
    e = a * np.sum((x - c) ** 2, axis=1)
    m = float(e.max())
    w = np.exp(e - m)
    wbar = float(w.mean())
    log_val = m + math.log(wbar)
    rel_se = float(w.std(ddof=1) / math.sqrt(n) / wbar) if n > 1 else math.inf
    value = math.exp(log_val) if log_val < 709 else math.inf
    half = n // 2
    info = {"log_value": log_val, "max_exponent": m}
    if half >= 1:
        h_log = log_mean_exp(e[:half])
        info["log_half_value"] = h_log
        info["doubling_log_ratio"] = log_val - h_log
    return Estimate(value, value * rel_se, n, m <= EXPONENT_LIMIT, info)


def tail_probability(ens, x0, r: float) -> Estimate:
    """Empirical P(d(x0, X) > mean d + r)."""
    if r < 0:
        raise EstimatorError("r must be nonnegative")
    x = _states(ens)
    d = np.linalg.norm(x - np.asarray(x0, dtype=float), axis=1)
    mu = float(d.mean())
    p = float(np.mean(d > mu + r))
    n = d.size
    return Estimate(p, math.sqrt(p * (1 - p) / n), n, True, {"mu_d": mu})


@dataclass
class ChernoffReport:
    passed: bool
    D: float
    mu_d: float
    rows: list

    def to_dict(self) -> dict:
        return {"passed": self.passed, "D": self.D, "mu_d": self.mu_d, "rows": self.rows}


def chernoff_check(ens, x0, D: float, r_grid: Optional[Sequence[float]] = None) -> ChernoffReport:
    """Compare empirical tails with exp(-r^2 / 4D); a violation is p - 3 SE > bound."""
    x = _states(ens)
    if r_grid is None:
        r_grid = np.linspace(0.0, 4.0, 41)
    d = np.linalg.norm(x - np.asarray(x0, dtype=float), axis=1)
    mu = float(d.mean())
    n = d.size
    rows = []
    ok = True
    ds = np.sort(d)
    for r in r_grid:
        p = float(n - np.searchsorted(ds, mu + r, side="right")) / n
        se = math.sqrt(p * (1 - p) / n)
        bound = chernoff_tail_bound(D, mu, float(r))
        bad = p - 3 * se > bound
        ok = ok and not bad
        rows.append({"r": float(r), "p": p, "se": se, "bound": bound, "violation": bool(bad)})
    return ChernoffReport(ok, D, mu, rows)


def coupling_rate_estimate(cpl: CoupledEnsemble) -> Estimate:
    """Per-path ratios |X^x_t - X^y_t| / |x - y|: value is the max, info has the mean."""
    gap = float(np.linalg.norm(np.asarray(cpl.x0) - np.asarray(cpl.y0)))
    if gap == 0:
        raise EstimatorError("coupled starts coincide")
    ratio = np.linalg.norm(cpl.states_x - cpl.states_y, axis=1) / gap
    n = ratio.size
    se = float(ratio.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return Estimate(float(ratio.max()), se, n, bool(np.all(np.isfinite(ratio))),
                    {"mean": float(ratio.mean()), "min": float(ratio.min())})


@dataclass
class SemigroupReport:
    x_grid: list
    values: list
    std_errors: list
    lip_ratio: float
    bound: Optional[float]
    passed: Optional[bool]


def nonlinear_semigroup_estimate(spec, f: Observable, x_grid: Sequence, t: float, n_paths: int,
                                 seed: int, dt: float = 1e-3, workers: int = 1) -> SemigroupReport:
    """V_t(f)(x) = log mean exp f(X^x_t) per start, on common random numbers."""
    pts = [np.atleast_1d(np.asarray(x, dtype=float)) for x in x_grid]
    if len(pts) < 2:
        raise EstimatorError("need at least two starting points")
    vals, ses = [], []
    for x in pts:
        if t == 0:
            vals.append(float(f(x[None, :])[0]))
            ses.append(0.0)
            continue
        grid = TimeGrid(0.0, t, dt)
        ens = simulate_ensemble(spec, PointMass(tuple(x)), grid, n_paths, seed, workers=workers)[0]
        v = f(ens.alive())
        vals.append(log_mean_exp(v))
        w = np.exp(v - v.max())
        ses.append(float(w.std(ddof=1) / math.sqrt(v.size) / w.mean()))
    ratio = 0.0
    margin = 0.0
    for i, j in combinations(range(len(pts)), 2):
        gap = float(np.linalg.norm(pts[i] - pts[j]))
        if gap == 0:
            continue
        q = abs(vals[i] - vals[j]) / gap
        if q > ratio:
            ratio = q
            margin = (ses[i] + ses[j]) / gap
    bound = None
    passed = None
    g = spec.constants.gamma_rate
    if g is not None:
        bound = f.lip * float(g(t))
        passed = bool(ratio - 3.0 * margin <= bound)
    return SemigroupReport([p.tolist() for p in pts], vals, ses, ratio, bound, passed)


@dataclass
class MomentReport:
    passed: bool
    rows: list

    def to_dict(self) -> dict:
        return {"passed": self.passed, "rows": self.rows}


def odd_moment_check(z, orders: Sequence[int] = (1, 3, 5)) -> MomentReport:
    """Flag any odd sample moment farther than 3 SE from zero."""
    z = np.asarray(z, dtype=float).ravel()
    if z.size < 100:
        raise EstimatorError("need at least 100 samples")
    rows = []
    ok = True
    for k in orders:
        if k % 2 == 0:
            raise EstimatorError(f"order {k} is not odd")
        p = z**k
        m = float(p.mean())
        se = float(p.std(ddof=1) / math.sqrt(z.size))
        good = abs(m) <= 3.0 * se
        ok = ok and good
        rows.append({"order": k, "moment": m, "se": se, "passed": bool(good)})
    return MomentReport(ok, rows)


def symmetrized_differences(values) -> Array:
    """f(X) - f(Y) from the two halves of one ensemble."""
    v = np.asarray(values, dtype=float).ravel()
    h = v.size // 2
    return v[:h] - v[h:2 * h]


def burkholder_moment_check(z, qv, n: int = 1, A: float = 1.0) -> MomentReport:
    """E Z^{2n} <= A (2n)^n E [Z,Z]^n, plus the isometry E Z^2 = E [Z,Z] when n = 1."""
    z = np.asarray(z, dtype=float).ravel()
    qv = np.asarray(qv, dtype=float).ravel()
    if z.shape != qv.shape:
        raise EstimatorError("z and qv must be paired")
    if z.size < 2:
        raise EstimatorError("need at least two samples")
    N = z.size
    lhs = z ** (2 * n)
    rhs = A * (2 * n) ** n * qv**n
    diff = lhs - rhs
    m = float(diff.mean())
    se = float(diff.std(ddof=1) / math.sqrt(N))
    rows = [{"n": n, "lhs": float(lhs.mean()), "rhs": float(rhs.mean()), "se": se,
             "passed": bool(m - 3.0 * se <= 0.0)}]
    ok = rows[0]["passed"]
    if n == 1:
        iso = z * z - qv
        mi = float(iso.mean())
        si = float(iso.std(ddof=1) / math.sqrt(N))
        good = abs(mi) <= 3.0 * si if si > 0 else abs(mi) <= 1e-12
        rows.append({"isometry": True, "lhs": float((z * z).mean()), "rhs": float(qv.mean()),
                     "se": si, "passed": bool(good)})
        ok = ok and good
    return MomentReport(bool(ok), rows)
