from __future__ import annotations

import math
from decimal import Decimal, getcontext
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.special import logsumexp

from gcb_lab.engine import CoupledEnsemble
from gcb_lab.estimators import (EstimatorError, burkholder_moment_check, chernoff_check,
                                coupling_rate_estimate, empirical_gcb_constant, empirical_log_mgf,
                                exp_square_moment, log_mgf_values, nonlinear_semigroup_estimate,
                                odd_moment_check, symmetrized_differences, tail_probability)
from gcb_lab.laws import ProductGaussian
from gcb_lab.observables import TestFamily, default_family, identity_1d, scaled_identity
from gcb_lab.processes import make_ou_1d

getcontext().prec = 40
TOY = [Fraction(v) for v in ("-1.5", "-0.25", "0", "0.125", "0.5", "0.75", "1", "1.25", "2", "3.5")]
TOY_F = np.array([float(v) for v in TOY])


def _dec(fr: Fraction) -> Decimal:
    return Decimal(fr.numerator) / Decimal(fr.denominator)


def test_log_mgf_toy_oracle():
    n = len(TOY)
    mean = sum(TOY) / n
    c = [_dec(v - mean) for v in TOY]
    w = [x.exp() for x in c]
    wbar = sum(w) / n
    value = wbar.ln()
    psi = [wi / wbar - ci - 1 for wi, ci in zip(w, c)]
    pbar = sum(psi) / n
    sd = (sum((p - pbar) ** 2 for p in psi) / (n - 1)).sqrt()
    est = log_mgf_values(TOY_F)
    assert est.value == pytest.approx(float(value), abs=1e-12)
    assert est.std_error == pytest.approx(float(sd / Decimal(n).sqrt()), abs=1e-12)


def test_exp_square_toy_oracle():
    a = Fraction(1, 4)
    vals = [(a * v * v) for v in TOY]
    mean = sum(_dec(v).exp() for v in vals) / len(vals)
    est = exp_square_moment(TOY_F, 0.25)
    assert est.value == pytest.approx(float(mean), abs=1e-12)
    assert est.info["log_value"] == pytest.approx(float(mean.ln()), abs=1e-12)
    half = sum(_dec(v).exp() for v in vals[:5]) / 5
    assert est.info["log_half_value"] == pytest.approx(float(half.ln()), abs=1e-12)


def test_tail_probability_toy_oracle():
    mean_d = sum(abs(v) for v in TOY) / len(TOY)
    r = Fraction(1, 2)
    k = sum(1 for v in TOY if abs(v) > mean_d + r)
    p = Fraction(k, len(TOY))
    est = tail_probability(TOY_F, [0.0], 0.5)
    assert est.value == pytest.approx(float(p), abs=1e-15)
    assert est.std_error == pytest.approx(math.sqrt(float(p * (1 - p) / len(TOY))), abs=1e-15)
    assert est.info["mu_d"] == pytest.approx(float(mean_d), abs=1e-15)


@given(arrays(np.float64, 50, elements=st.floats(-1e3, 1e3)))
def test_log_mgf_stable_against_logsumexp(v):
    c = v - v.mean()
    expect = logsumexp(c) - math.log(v.size)
    got = log_mgf_values(v).value
    assert got == pytest.approx(expect, rel=1e-10, abs=1e-9)
    assert got >= -1e-9  # Jensen


def test_log_mgf_needs_two_samples():
    with pytest.raises(EstimatorError):
        log_mgf_values(np.array([1.0]))


def test_gaussian_log_mgf_matches_variance():
    x = ProductGaussian((0.0,), (1.0,)).sample(3, np.arange(200000, dtype=np.uint64))
    est = empirical_log_mgf(x, scaled_identity(0.5))
    assert abs(est.value - 0.125) < 4 * est.std_error


def test_empirical_gcb_records_argmax():
    x = ProductGaussian((0.0,), (1.0,)).sample(3, np.arange(20000, dtype=np.uint64))
    fam = TestFamily([identity_1d(), scaled_identity(2.0)])
    est = empirical_gcb_constant(x, fam)
    assert est.info["family_size"] == 2 and est.info["argmax"] in ("x", "2*x")
    assert abs(est.value - 0.5) < 5 * est.std_error
    with pytest.raises(EstimatorError):
        empirical_gcb_constant(x, TestFamily([]))


def test_exp_square_gaussian_and_validity():
    x = ProductGaussian((0.0,), (1.0,)).sample(8, np.arange(100000, dtype=np.uint64))
    est = exp_square_moment(x, 0.25)
    assert abs(est.value - math.sqrt(2)) < 3 * est.std_error and est.valid
    bad = exp_square_moment(np.array([0.0, 1e3, 2.0]), 1.0)
    assert not bad.valid and bad.info["max_exponent"] > 700


def test_chernoff_on_gaussian():
    x = ProductGaussian((0.0,), (1.0,)).sample(8, np.arange(100000, dtype=np.uint64))
    rep = chernoff_check(x, [0.0], 0.5)
    assert rep.passed and len(rep.rows) == 41
    tight = chernoff_check(x, [0.0], 0.01)
    assert not tight.passed


def test_coupling_rate_estimate():
    cp = CoupledEnsemble(np.array([[1.0], [0.5]]), np.array([[0.0], [0.0]]), np.array([2.0]),
                         np.array([0.0]), 1.0, 0)
    est = coupling_rate_estimate(cp)
    assert est.value == 0.5 and est.info["mean"] == 0.375
    same = CoupledEnsemble(cp.states_x, cp.states_y, np.array([1.0]), np.array([1.0]), 1.0, 0)
    with pytest.raises(EstimatorError):
        coupling_rate_estimate(same)


def test_symmetrized_differences_are_odd_free():
    rng = np.random.default_rng(1)
    v = rng.exponential(size=20001)
    d = symmetrized_differences(v)
    assert d.size == 10000
    assert np.array_equal(d, v[:10000] - v[10000:20000])
    assert odd_moment_check(d).passed


def test_odd_moment_check_flags_skew():
    rng = np.random.default_rng(2)
    rep = odd_moment_check(rng.exponential(size=10000) - 1.0)
    assert not rep.passed
    with pytest.raises(EstimatorError):
        odd_moment_check(np.zeros(10), orders=(1,))
    with pytest.raises(EstimatorError):
        odd_moment_check(np.zeros(1000), orders=(2,))


def test_burkholder_on_brownian():
    rng = np.random.default_rng(3)
    z = rng.normal(size=50000)
    qv = np.ones_like(z)
    rep = burkholder_moment_check(z, qv, 1)
    assert rep.passed and len(rep.rows) == 2
    # E Z^4 = 3 <= 16
    assert burkholder_moment_check(z, qv, 2).passed


def test_semigroup_estimate_ou():
    spec = make_ou_1d(1.0, 1.0)
    rep = nonlinear_semigroup_estimate(spec, identity_1d(), [-1.0, 0.0, 1.0], 0.5, 2000, 1, dt=1e-3)
    # V_t(x)(y) = e^{-t} y + const, and common random numbers make the slope exact
    assert rep.lip_ratio == pytest.approx((1 - 1e-3) ** 500, rel=1e-9)
    assert rep.passed


def test_default_family_on_gaussian_is_tight():
    x = ProductGaussian((0.0,), (1.0,)).sample(5, np.arange(50000, dtype=np.uint64))
    est = empirical_gcb_constant(x, default_family(1))
    assert est.value - 3 * est.std_error <= 0.5
    assert est.value > 0.45
