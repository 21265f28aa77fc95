"""Adaptive Simpson quadrature with a doubling tail test for improper integrals."""

from __future__ import annotations

import math
from typing import Callable

Fn = Callable[[float], float]


class QuadratureError(RuntimeError):
    pass


def _simpson(fa, fm, fb, a, b):
    return (b - a) * (fa + 4.0 * fm + fb) / 6.0


def adaptive_simpson(f: Fn, a: float, b: float, rel_tol: float = 1e-10, abs_tol: float = 1e-300,
                     max_depth: int = 50, min_depth: int = 4) -> float:
    """Integrate ``f`` over ``[a, b]`` by recursive Simpson refinement.

    Intervals are split while the Richardson error estimate exceeds the
    local share of ``max(abs_tol, rel_tol * I)``, where ``I`` is the coarse
    estimate of ``int |f|`` (so integrals that cancel to zero still terminate).
    """
    if a == b:
        return 0.0
    sign = 1.0
    if b < a:
        a, b, sign = b, a, -1.0
    fa, fb = f(a), f(b)
    m = 0.5 * (a + b)
    fm = f(m)
    whole = _simpson(fa, fm, fb, a, b)
    if not math.isfinite(whole):
        raise QuadratureError("non-finite integrand")
    tol = max(abs_tol, rel_tol * _simpson(abs(fa), abs(fm), abs(fb), a, b))
    stack = [(a, b, fa, fm, fb, whole, tol, 0)]
    total = 0.0
    while stack:
        a, b, fa, fm, fb, whole, tol, depth = stack.pop()
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = _simpson(fa, flm, fm, a, m)
        right = _simpson(fm, frm, fb, m, b)
        err = left + right - whole
        if not math.isfinite(err):
            raise QuadratureError(f"non-finite integrand on [{a}, {b}]")
        if depth >= min_depth and (abs(err) <= 15.0 * tol or depth >= max_depth):
            if depth >= max_depth and abs(err) > 15.0 * tol:
                raise QuadratureError(f"no convergence on [{a}, {b}]")
            total += left + right + err / 15.0
            continue
        stack.append((m, b, fm, frm, fb, right, tol / 2.0, depth + 1))
        stack.append((a, m, fa, flm, fm, left, tol / 2.0, depth + 1))
    if not math.isfinite(total):
        raise QuadratureError("non-finite integral")
    return sign * total


def integrate_to_infinity(f: Fn, a: float, rel_tol: float = 1e-10, tail_tol: float = 1e-10,
                          max_doublings: int = 200) -> float:
    """``int_a^inf f`` over chunks ``[a, T], [T, 2T], ...`` with a tail test.

    Accepts when the latest chunk contributes less than ``tail_tol`` of the
    running value; raises :class:`QuadratureError` if that never happens.
    """
    width = max(1.0, abs(a))
    lo, hi = a, a + width
    total = adaptive_simpson(f, lo, hi, rel_tol=rel_tol)
    for _ in range(max_doublings):
        lo, hi = hi, hi + 2.0 * (hi - a)
        inc = adaptive_simpson(f, lo, hi, rel_tol=rel_tol)
        total += inc
        if abs(inc) <= tail_tol * abs(total):
            return total
    raise QuadratureError(f"improper integral from {a} did not converge (value so far {total})")
