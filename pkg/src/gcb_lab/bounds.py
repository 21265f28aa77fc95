"""Theoretical concentration constants D_t and their schedules.

Convention: a law satisfies GCB(D) when ``log E exp(f - E f) <= D lip(f)^2``
for every Lipschitz ``f``; the Gaussian N(0, v) satisfies it with ``D = v/2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .quadrature import QuadratureError, adaptive_simpson, integrate_to_infinity

SQRT_PI = math.sqrt(math.pi)
LOG_E_OVER_2SQRTPI = 1.0 - math.log(2.0 * SQRT_PI)


class BoundError(ValueError):
    pass


@dataclass(frozen=True)
class BoundCurve:
    """A map t -> D_t together with the inputs it was built from."""

    theorem: str
    inputs: dict
    evaluator: Callable[[float], float]
    d_infinity: Optional[float] = None
    notes: tuple = ()
    log_evaluator: Optional[Callable[[float], float]] = None

    def __call__(self, t):
        if np.ndim(t) == 0:
            return float(self.evaluator(float(t)))
        return np.array([self.evaluator(float(s)) for s in np.ravel(t)]).reshape(np.shape(t))

    def log_value(self, t: float) -> float:
        if self.log_evaluator is not None:
            return float(self.log_evaluator(float(t)))
        v = self(t)
        return math.log(v) if v > 0 else -math.inf

    def provenance(self) -> dict:
        out = {"theorem": self.theorem, "inputs": dict(self.inputs)}
        if self.d_infinity is not None:
            out["d_infinity"] = self.d_infinity
        if self.notes:
            out["notes"] = list(self.notes)
        return out


def _one_minus_exp(x: float) -> float:
    """1 - e^{-x}, accurate for small x."""
    return -math.expm1(-x)


def _relax_integral(rate: float, t: float) -> float:
    """int_0^t e^{-2 rate s} ds, with the rate -> 0 branch taken explicitly."""
    if rate == 0:
        return t
    return _one_minus_exp(2.0 * rate * t) / (2.0 * rate)


def ou_gcb_curve(d0: float, kappa: float, sigma: float) -> BoundCurve:
    """D_t for the 1-d OU process dX = -kappa X dt + sigma dW.

    The stationary variance is sigma^2 / (2 kappa), hence D_inf = sigma^2 / (4 kappa);
    for kappa = 0 the curve is D_0 + sigma^2 t / 2.
    """
    if not d0 > 0:
        raise BoundError("d0 must be positive")
    kappa = float(kappa)
    sigma = float(sigma)

    def ev(t):
        return d0 * math.exp(-2.0 * kappa * t) + 0.5 * sigma**2 * _relax_integral(kappa, t)

    d_inf = sigma**2 / (4.0 * kappa) if kappa > 0 else None
    return BoundCurve("ou", {"d0": d0, "kappa": kappa, "sigma": sigma}, ev, d_inf)


def gradient_bound_curve(d0: float, c1: float, c2: float, rho: float) -> BoundCurve:
    """D_t = D0 C1^2 C2^2 e^{-2 rho t} + C1^2 C2^4 int_0^t e^{-2 rho s} ds."""
    if not (c1 > 0 and c2 > 0):
        raise BoundError("c1 and c2 must be positive")
    rho = float(rho)
    k1 = c1**2 * c2**2
    k2 = c1**2 * c2**4

    def ev(t):
        return d0 * k1 * math.exp(-2.0 * rho * t) + k2 * _relax_integral(rho, t)

    d_inf = k2 / (2.0 * rho) if rho > 0 else None
    return BoundCurve("gradient", {"d0": d0, "c1": c1, "c2": c2, "rho": rho}, ev, d_inf,
                      notes=("second term uses C1^2 C2^4",))


def coupling_curve(d0: float, c2sq: float, gamma_rate: Callable[[float], float],
                   rel_tol: float = 1e-8, label: str = "gamma") -> BoundCurve:
    """D_t = D0 gamma(t)^2 + C2^2 int_0^t gamma(s)^2 ds (adaptive Simpson)."""
    if c2sq < 0:
        raise BoundError("c2sq must be nonnegative")
    g0 = float(gamma_rate(0.0))
    if abs(g0 - 1.0) > 1e-10:
        raise BoundError(f"gamma_rate(0) must be 1, got {g0}")

    def g2(s):
        return float(gamma_rate(s)) ** 2

    def ev(t):
        if t == 0:
            return d0
        return d0 * g2(t) + c2sq * adaptive_simpson(g2, 0.0, t, rel_tol=rel_tol)

    try:
        d_inf = c2sq * integrate_to_infinity(g2, 0.0, rel_tol=rel_tol)
    except QuadratureError:
        d_inf = None
    return BoundCurve("coupling", {"d0": d0, "c2sq": c2sq, "gamma_rate": label}, ev, d_inf)


def convex_drift_curve(d0: float, kappa: float, a_norm: float) -> BoundCurve:
    """D_t = D0 e^{-2 kappa t} + ||a|| int_0^t e^{-2 kappa s} ds."""
    if a_norm < 0:
        raise BoundError("a_norm must be nonnegative")
    kappa = float(kappa)

    def ev(t):
        return d0 * math.exp(-2.0 * kappa * t) + a_norm * _relax_integral(kappa, t)

    d_inf = a_norm / (2.0 * kappa) if kappa > 0 else None
    return BoundCurve("convex", {"d0": d0, "kappa": kappa, "a_norm": a_norm}, ev, d_inf)


def brownian_curve(d0: float, a_norm: float) -> BoundCurve:
    """D_t = D0 + ||a|| t: pure diffusion with no drift."""
    if d0 < 0 or a_norm < 0:
        raise BoundError("d0 and a_norm must be nonnegative")
    return BoundCurve("brownian", {"d0": d0, "c2sq": a_norm}, lambda t: d0 + a_norm * t)


def log_moment_to_gcb(a: float, log_b: float) -> float:
    """log D for D = (1/2a) max(1, b^2 e / (2 sqrt(pi))), given log b."""
    if not a > 0:
        raise BoundError("a must be positive")
    if log_b < 0:
        raise BoundError("b must be >= 1")
    return -math.log(2.0 * a) + max(0.0, 2.0 * log_b + LOG_E_OVER_2SQRTPI)


def moment_to_gcb(a: float, b: float) -> float:
    """GCB constant implied by ``E exp(a d(x0, X)^2) <= b``."""
    if not a > 0:
        raise BoundError("a must be positive")
    if not b >= 1:
        raise BoundError("b must be >= 1")
    return max(1.0, b * b * math.e / (2.0 * SQRT_PI)) / (2.0 * a)


def gcb_to_moment_bound(D: float, mu_d: float) -> tuple[float, float]:
    """Exponent and bound with ``E exp(d^2 / 16D) <= 3 exp(mu_d^2 / D)``."""
    if not D > 0:
        raise BoundError("D must be positive")
    return 1.0 / (16.0 * D), _exp_or_inf(math.log(3.0) + mu_d**2 / D)


def chernoff_tail_bound(D: float, mu_d: float, r: float) -> float:
    """Bound on P(d(x0, X) > mu_d + r) for a law satisfying GCB(D)."""
    if r < 0:
        raise BoundError("r must be nonnegative")
    if not D > 0:
        raise BoundError("D must be positive")
    if math.isinf(D):
        return 1.0
    return math.exp(-r * r / (4.0 * D))


# -- coming down from infinity ------------------------------------------------


@dataclass(frozen=True)
class DescenteSchedule:
    t_star: float
    y_star: float
    alpha_exp: float
    h_fn: Callable[[float], float]
    c_const: float = 1.0
    tail_star: float = field(default=0.0)

    def tail(self, y: float) -> float:
        """int_y^inf du / h(u)."""
        return integrate_to_infinity(lambda u: 1.0 / self.h_fn(u), y)

    def y(self, s: float) -> float:
        """Solve int_{y(s)}^inf du/h = alpha s / 2 for y(s) >= y_star."""
        if not 0 < s <= self.t_star * (1 + 1e-9):
            raise BoundError(f"s must lie in (0, t*], got {s}")
        target = self.alpha_exp * s / 2.0
        if target >= self.tail_star:
            return self.y_star
        lo = self.y_star
        hi = 2.0 * max(self.y_star, 1.0)
        while self.tail(hi) > target:
            lo, hi = hi, 2.0 * hi
            if hi > 1e150:
                raise BoundError("y(s) search diverged")
        return brentq(lambda y: self.tail(y) - target, lo, hi, xtol=1e-13, rtol=1e-14,
                      maxiter=400)

    def log_c_of_t(self, t: float) -> float:
        """log C(t) with C(t) = C/(1-2 alpha) (e^{alpha y^2} + t e^{y^2/2})."""
        if not t > 0:
            raise BoundError("t must be positive")
        s = min(t, self.t_star)
        y = self.y(s)
        a = self.alpha_exp
        return (math.log(self.c_const) - math.log1p(-2.0 * a)
                + np.logaddexp(a * y * y, math.log(s) + 0.5 * y * y))

    def c_of_t(self, t: float) -> float:
        lc = self.log_c_of_t(t)
        return math.exp(lc) if lc < 709 else math.inf


def descente_schedule(h_fn: Callable[[float], float], alpha_exp: float, y_star: float,
                      c_const: float = 1.0, n_check: int = 64) -> DescenteSchedule:
    """Build t*, y(s) and C(t) for a drift satisfying <x, b>/|x| <= A - h(|x|)."""
    if not 0 < alpha_exp < 0.5:
        raise BoundError("alpha_exp must lie in (0, 1/2)")
    if not y_star > 0:
        raise BoundError("y_star must be positive")
    grid = np.concatenate([np.linspace(0.0, 4.0 * y_star, n_check),
                           y_star * np.logspace(0.7, 6, n_check)])
    hv = np.array([h_fn(u) for u in grid])
    if np.any(np.diff(hv) < -1e-12 * np.abs(hv[1:])):
        raise BoundError("h is not non-decreasing on the sampled grid")
    if np.any(hv <= 0):
        raise BoundError("h must be positive")
    try:
        integrate_to_infinity(lambda u: 1.0 / h_fn(u), 0.0)
        tail_star = integrate_to_infinity(lambda u: 1.0 / h_fn(u), y_star)
    except QuadratureError as exc:
        raise BoundError(f"int du/h(u) diverges: {exc}") from None
    t_star = 2.0 * tail_star / alpha_exp
    return DescenteSchedule(t_star, float(y_star), float(alpha_exp), h_fn, float(c_const),
                            tail_star)


def descente_log_gcb_constant(schedule: DescenteSchedule, t: float) -> float:
    if not t > 0:
        raise BoundError("t must be positive")
    lc = schedule.log_c_of_t(min(t, schedule.t_star))
    return -math.log(2.0 * schedule.alpha_exp) + max(0.0, lc + LOG_E_OVER_2SQRTPI)


def descente_gcb_constant(schedule: DescenteSchedule, t: float) -> float:
    """D_t = (1/2 alpha) max(1, C(t) e / (2 sqrt(pi))), constant after t*."""
    ld = descente_log_gcb_constant(schedule, t)
    return math.exp(ld) if ld < 709 else math.inf


def descente_curve(schedule: DescenteSchedule) -> BoundCurve:
    inputs = {"alpha_exp": schedule.alpha_exp, "y_star": schedule.y_star,
              "t_star": schedule.t_star, "C": schedule.c_const}
    return BoundCurve(
        "descente", inputs,
        lambda t: descente_gcb_constant(schedule, t),
        notes=("absolute constant C set to 1", "C(t) enters unsquared"),
        log_evaluator=lambda t: descente_log_gcb_constant(schedule, t),
    )


# -- weakly confining drifts ---------------------------------------------------


@dataclass(frozen=True)
class FaibleConstants:
    a0: float
    log_b0: float
    log_b_t: float
    log_b_inf: float
    rate: float
    log_D_t: float
    log_D_inf: float

    @property
    def b0(self) -> float:
        return _exp_or_inf(self.log_b0)

    @property
    def b_t(self) -> float:
        return _exp_or_inf(self.log_b_t)

    @property
    def b_inf(self) -> float:
        return _exp_or_inf(self.log_b_inf)

    @property
    def D_t(self) -> float:
        return _exp_or_inf(self.log_D_t)

    @property
    def D_inf(self) -> float:
        return _exp_or_inf(self.log_D_inf)


def _exp_or_inf(x: float) -> float:
    return math.exp(x) if x < 709 else math.inf


def faible_descente_constants(alpha: float, beta: float, theta: float, dim: int, d0: float,
                              mu_d: float, t: float) -> FaibleConstants:
    """Moment exponent a0, moment bound b_t and D_t for a weakly confining drift.

    a0 = min(beta / 2 theta, 1 / 16 D0), b0 = 3 exp(mu_d^2 / 8 D0) and b_t
    relaxes from b0 to b_inf = 2 exp((4 a0 / beta) K), K = theta d + 2 alpha^2 / beta,
    at rate a0 K.  All values are carried in log space.
    """
    if not (alpha > 0 and beta > 0 and theta > 0):
        raise BoundError("alpha, beta and theta must be positive")
    if t < 0:
        raise BoundError("t must be nonnegative")
    k = theta * dim + 2.0 * alpha**2 / beta
    a0 = beta / (2.0 * theta)
    if d0 > 0:
        a0 = min(a0, 1.0 / (16.0 * d0))
    log_b0 = math.log(3.0) + (mu_d**2 / (8.0 * d0) if d0 > 0 else (0.0 if mu_d == 0 else math.inf))
    rate = a0 * k
    log_binf = math.log(2.0) + 4.0 * a0 * k / beta
    decay = math.exp(-rate * t)
    if decay > 0:
        log_bt = np.logaddexp(log_b0 + math.log(decay),
                              log_binf + math.log(_one_minus_exp(rate * t)) if t > 0 else -math.inf)
    else:
        log_bt = log_binf
    log_bt = float(log_bt)
    return FaibleConstants(
        a0=a0,
        log_b0=log_b0,
        log_b_t=log_bt,
        log_b_inf=log_binf,
        rate=rate,
        log_D_t=log_moment_to_gcb(a0, max(log_bt, 0.0)),
        log_D_inf=log_moment_to_gcb(a0, max(log_binf, 0.0)),
    )


def faible_curve(alpha, beta, theta, dim, d0, mu_d) -> BoundCurve:
    def ev(t):
        return faible_descente_constants(alpha, beta, theta, dim, d0, mu_d, t).D_t

    def lev(t):
        return faible_descente_constants(alpha, beta, theta, dim, d0, mu_d, t).log_D_t

    inf = faible_descente_constants(alpha, beta, theta, dim, d0, mu_d, 0.0)
    return BoundCurve(
        "faible_descente",
        {"alpha": alpha, "beta": beta, "theta": theta, "dim": dim, "d0": d0, "mu_d": mu_d},
        ev, inf.D_inf, notes=("b0 = 3 exp(mu_d^2 / 8 D0)",), log_evaluator=lev,
    )


def lorenz_beta(sigma: float, r: float, b: float) -> float:
    """inf (r x^2 + y^2 + b z^2) / (r x^2 + sigma y^2 + sigma z^2) = min(1, 1/sigma, b/sigma)."""
    if not (sigma > 0 and r > 0 and b > 0):
        raise BoundError("Lorenz parameters must be positive")
    return min(1.0, 1.0 / sigma, b / sigma)


# -- non-Markovian volatility ------------------------------------------------


def _variance_factor(kappa: float, t: float) -> float:
    """(1 - e^{-2 kappa t}) / (2 kappa), equal to t at kappa = 0."""
    return _relax_integral(kappa, t)


def nonmarkov_admissible_a(M: float, kappa: float, a0_init: float, t: float) -> float:
    """min( (8 e M^2 v_t)^{-1}, a0 e^{2 kappa t} ) with v_t = (1 - e^{-2 kappa t}) / (2 kappa)."""
    if not (M > 0 and a0_init > 0 and t > 0):
        raise BoundError("M, a0_init and t must be positive")
    v = _variance_factor(kappa, t)
    return min(1.0 / (8.0 * math.e * M * M * v), a0_init * math.exp(2.0 * kappa * t))


def nonmarkov_log_moment_bound(a: float, M: float, kappa: float, t: float,
                               init_log_moment: Callable[[float], float],
                               burkholder_A: float = 1.0, max_terms: int = 100000) -> float:
    """log of a bound on E exp(a X_t^2).

    Cauchy-Schwarz splits ``exp(a X_t^2) <= exp(2a X0^2 e^{-2kt}) exp(2a I_t^2)``
    into ``sqrt(E exp(4a e^{-2kt} X0^2)) * sqrt(E exp(4a I_t^2))``; the second
    factor is bounded by the Burkholder series ``A sum_n (4a M^2 2n v)^n / n!``.
    ``init_log_moment(c)`` must return ``log E exp(c X0^2)``.
    """
    v = _variance_factor(kappa, t)
    x = 4.0 * a * M * M * v
    if 2.0 * math.e * x >= 1.0:
        return math.inf
    # terms: log T_n = n log(2 n x) - lgamma(n + 1)
    logs = [0.0]
    for n in range(1, max_terms):
        lt = n * math.log(2.0 * n * x) - math.lgamma(n + 1)
        logs.append(lt)
        if lt < logs[0] - 40 and n > 2:
            break
    series = math.log(burkholder_A) + float(np.logaddexp.reduce(logs))
    first = init_log_moment(4.0 * a * math.exp(-2.0 * kappa * t))
    return 0.5 * first + 0.5 * series


def gaussian_log_exp_square_moment(mean: float, var: float, c: float) -> float:
    """log E exp(c X^2) for X ~ N(mean, var); +inf when 2 c var >= 1."""
    if 2.0 * c * var >= 1.0:
        return math.inf
    q = 1.0 - 2.0 * c * var
    return -0.5 * math.log(q) + c * mean * mean / q


def nonmarkov_curve(M: float, kappa: float, a0_init: float, init_mean: float, init_var: float,
                    fraction: float = 0.5) -> BoundCurve:
    """D_t from the moment bound at a = fraction * admissible a."""

    def lev(t):
        if t == 0:
            return math.log(init_var / 2.0) if init_var > 0 else -math.inf
        a = fraction * nonmarkov_admissible_a(M, kappa, a0_init, t)
        lb = nonmarkov_log_moment_bound(
            a, M, kappa, t, lambda c: gaussian_log_exp_square_moment(init_mean, init_var, c))
        return log_moment_to_gcb(a, max(lb, 0.0))

    return BoundCurve(
        "nonmarkov",
        {"M": M, "kappa": kappa, "a0_init": a0_init, "init_mean": init_mean,
         "init_var": init_var, "fraction": fraction},
        lambda t: _exp_or_inf(lev(t)),
        notes=("Burkholder constant A set to 1",), log_evaluator=lev,
    )


def gl_stationary_variance(alpha1: float, alphaN: float, N: int, i: int) -> float:
    """Linear interpolation 1/alpha1 + (1/alphaN - 1/alpha1) i / (N + 1)."""
    if not (alpha1 > 0 and alphaN > 0):
        raise BoundError("reservoir rates must be positive")
    if not 1 <= i <= N:
        raise BoundError(f"site index {i} outside 1..{N}")
    return 1.0 / alpha1 + (1.0 / alphaN - 1.0 / alpha1) * i / (N + 1)
