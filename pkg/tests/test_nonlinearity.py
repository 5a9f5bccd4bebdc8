import math

import mpmath
import numpy as np
import pytest
from scipy.integrate import quad

from robinlab.nonlinearity import (
    TRUNCATIONS,
    HypothesisError,
    Nonlinearity,
    builtin,
    catalog,
    check_hypotheses,
    make_truncation,
    sample_grid,
    unilateral_c1,
    unilateral_constants,
)

ALL_BUILTINS = ["sub_f1", "sub_f2", "h2_f2", "h2_f3", "h2_f4", "h3_f2", "super_f1", "super_f2"]


def test_sub_f1_value():
    nl = builtin("sub_f1", q=1.5)
    assert nl.f(2.0) == pytest.approx(math.sqrt(2.0), abs=1e-12)
    assert nl.F(2.0) == pytest.approx(2.0 ** 1.5 / 1.5, abs=1e-12)


def test_super_f2_primitive_against_quadrature():
    nl = builtin("super_f2")
    assert nl.f(0.0) == 0.0
    assert nl.f(1.0) == pytest.approx(math.log(2.0))
    ref = quad(lambda s: s * math.log1p(s), 0.0, 1.0, epsabs=1e-14)[0]
    assert nl.F(1.0) == pytest.approx(ref, abs=1e-12)
    assert ref == pytest.approx(0.25, abs=1e-12)


def test_sub_f2_continuous_at_joint():
    nl = builtin("sub_f2", p=1.5, s=1.8, q=1.5)
    left = nl.f(1.0 - 1e-12)
    right = nl.f(1.0 + 1e-12)
    assert nl.f(1.0) == 0.0
    assert abs(left) < 1e-10 and abs(right) < 1e-10


@pytest.mark.parametrize("name", ALL_BUILTINS)
def test_normalization_and_primitive(name):
    nl = builtin(name)
    assert nl.f(0.0) == 0.0
    assert np.all(nl.f(-np.geomspace(1e-6, 1e3, 30)) == 0.0)
    assert np.all(nl.F(-np.linspace(0.1, 5, 10)) == 0.0)
    # F' = f on 1000 points, away from the joint at x = 1
    x = np.linspace(0.05, 20.0, 1000)
    x = x[np.abs(x - 1.0) > 1e-3]
    h = 1e-5
    dF = (nl.F(x + h) - nl.F(x - h)) / (2 * h)
    assert np.max(np.abs(dF - nl.f(x)) / np.maximum(1.0, np.abs(nl.f(x)))) < 1e-8
    # and F(x) = int_0^x f for a few x, including across the joint
    for b in (0.5, 1.0, 3.0):
        # tanh-sinh copes with the x^a ln x endpoint behaviour that trips quad
        ref = float(mpmath.quad(lambda t: float(nl.f(float(t))), [0.0, min(b, 1.0), b]))
        assert nl.F(b) == pytest.approx(ref, abs=1e-9)


@pytest.mark.parametrize("name", ALL_BUILTINS)
def test_builtin_report_passes(name):
    nl = builtin(name)
    rep = check_hypotheses(nl)
    expected_fail = {"super_f2": "AR", "sub_f2": "positivity", "h2_f3": "positivity"}
    if name in expected_fail:
        bad = expected_fail[name]
        assert not rep.clause(bad).passed
        if bad == "positivity":
            # these two vanish at the joint x = 1
            assert rep.clause(bad).witness["at_x"] == 1.0
        others = [c for c in rep.clauses if c.clause != bad]
        assert all(c.passed for c in others), [c.clause for c in others if not c.passed]
    else:
        assert rep.passed, [(c.clause, c.witness) for c in rep.clauses if not c.passed]


def test_sub_f1_rejects_q_at_least_two():
    with pytest.raises(HypothesisError, match="H1"):
        builtin("sub_f1", q=2.0)
    with pytest.raises(HypothesisError):
        builtin("sub_f1", q=0.9)


def test_other_range_errors():
    with pytest.raises(HypothesisError):
        builtin("sub_f2", p=1.8, s=1.5)
    with pytest.raises(HypothesisError):
        builtin("h3_f2", q=1.3, tau=1.6)
    with pytest.raises(HypothesisError):
        builtin("super_f1", q=2.0)
    with pytest.raises(HypothesisError, match="unknown builtin"):
        builtin("nope")
    with pytest.raises(HypothesisError, match="bad parameters"):
        builtin("super_f2", q=3.0)


def test_catalog_lists_every_builtin():
    names = [row[0] for row in catalog()]
    assert sorted(names) == sorted(ALL_BUILTINS)
    notes = {row[0]: row[4] for row in catalog()}
    assert "AR" in notes["super_f2"]


def test_h3_quotient_strictly_decreasing():
    rep = check_hypotheses(builtin("sub_f1", q=1.5))
    c = rep.clause("H3(iv)")
    assert c.passed and c.witness["max_increment"] < 0


def test_super_f1_ar_with_tau_three():
    c = check_hypotheses(builtin("super_f1", q=3.0)).clause("AR")
    assert c.passed
    assert c.witness["tau"] == pytest.approx(3.0, abs=1e-9)
    # independent grid check of 0 < tau F <= f x with tau = 3
    nl = builtin("super_f1", q=3.0)
    x = np.geomspace(1e-3, 1e3, 2000)
    assert np.all(nl.F(x) > 0)
    assert np.all(3.0 * nl.F(x) <= nl.f(x) * x * (1 + 1e-12))


def test_super_f2_fails_ar_but_superquadratic():
    rep = check_hypotheses(builtin("super_f2"))
    ar = rep.clause("AR")
    assert not ar.passed
    assert ar.witness["R_limit"] < 2.01
    assert rep.clause("H5(ii)-superquadratic").passed
    quo = rep.clause("H5(ii)-quotient")
    assert quo.passed and quo.witness["q"] == 2.0
    # (f x - 2F)/x^2 tends to 1/2
    assert quo.witness["quotient_at_x_max"] == pytest.approx(0.5, abs=0.01)


def test_report_fails_for_bad_user_reaction():
    nl = Nonlinearity.from_expression("x**2", "H3", q=1.5)
    rep = check_hypotheses(nl)
    assert not rep.passed
    assert not rep.clause("H1(ii)").passed
    assert not rep.clause("H3(iv)").passed
    d = rep.to_dict()
    assert d["passed"] is False and d["class"] == "H3"


def test_sample_grid_density():
    g = sample_grid(1e3, 1000)
    assert len(g) >= 1000 and g[0] > 0 and g[-1] == 1e3
    with pytest.raises(ValueError):
        sample_grid(1e3, 500)


def test_expression_reaction():
    nl = Nonlinearity.from_expression("x**(1/2)", "H4", q=1.5)
    assert nl.f(4.0) == pytest.approx(2.0)
    assert nl.F(4.0) == pytest.approx(16.0 / 3.0)
    assert nl.f(-1.0) == 0.0
    with pytest.raises(HypothesisError):
        Nonlinearity.from_expression("x*y", "H4", q=1.5)
    with pytest.raises(HypothesisError, match="primitive"):
        Nonlinearity.from_expression("x", "H4", q=1.5, primitive="x**3")


# ---------------------------------------------------------------- unilateral bound

def _c4_oracle(nl, lam, tau, x_max=10.0):
    c1 = unilateral_c1(nl, lam)
    x = np.linspace(0, x_max, 400_001)[1:]
    need = (c1 * x ** (nl.q - 1) - lam * x - nl.f(x)) / x ** (tau - 1)
    return max(0.0, float(np.max(need)))


def test_c4_zero_at_lambda_zero():
    nl = builtin("sub_f1", q=1.5)
    assert unilateral_constants(nl, 0.0, 3.0) == 0.0


def test_c4_lambda_minus_one_matches_grid_oracle():
    nl = builtin("sub_f1", q=1.5)
    c4 = unilateral_constants(nl, -1.0, 3.0)
    ref = _c4_oracle(nl, -1.0, 3.0)
    # closed form: sup of (x - x^(1/2)/2)/x^2 is 16/27 at x = 9/16
    assert ref == pytest.approx(16.0 / 27.0, rel=1e-6)
    assert c4 == pytest.approx(1.1 * ref, rel=1e-4)
    x = np.linspace(0, 10, 100_001)
    c1 = unilateral_c1(nl, -1.0)
    assert np.all(-x + nl.f(x) >= c1 * x ** 0.5 - c4 * x ** 2 - 1e-14)


def test_c4_monotone_in_lambda():
    nl = builtin("sub_f1", q=1.5)
    c1 = unilateral_constants(nl, -1.0, 3.0)
    c2 = unilateral_constants(nl, -2.0, 3.0)
    assert c2 >= c1
    assert _c4_oracle(nl, -2.0, 3.0) >= _c4_oracle(nl, -1.0, 3.0)


def test_c4_rejects_superlinear_and_small_tau():
    with pytest.raises(HypothesisError):
        unilateral_constants(builtin("super_f1"), -1.0)
    with pytest.raises(HypothesisError):
        unilateral_constants(builtin("sub_f1"), -1.0, tau=2.0)


# ---------------------------------------------------------------- truncations

def test_ghat_frozen_above_reference():
    nl = builtin("sub_f1", q=1.5)
    mu = 2.0
    tr = make_truncation("GHat", nl, -1.0, mu, ref=np.array([1.0]))
    g, _ = tr.at(0, 2.0)
    expected = tr.c1 * 1.0 - tr.c4 * 1.0 + mu * 1.0
    assert g == pytest.approx(expected, abs=1e-14)
    assert tr.at(0, 5.0)[0] == pytest.approx(expected, abs=1e-14)
    assert tr.at(0, -1.0)[0] == 0.0


def test_k_lambda_vanishes_for_negative_x():
    tr = make_truncation("K_lambda", builtin("super_f1"), 0.5, 0.0)
    assert tr.at(0, -1.0)[0] == 0.0
    assert tr.at(0, -1.0)[1] == 0.0
    assert tr.at(0, 2.0)[0] == pytest.approx(0.5 * 2 + 4.0)


def test_gtilde_frozen_below_lower():
    nl = builtin("super_f1")
    lam, mu = 0.3, 1.5
    lo = np.array([0.8, 1.2])
    tr = make_truncation("GTilde", nl, lam, mu, lo=lo)
    for i, u in enumerate(lo):
        v, _ = tr.at(i, u / 2)
        assert v == pytest.approx((lam + mu) * u + nl.f(u), abs=1e-14)
    vals = tr.value(lo / 2)
    assert np.allclose(vals, (lam + mu) * lo + nl.f(lo), atol=1e-14)


def test_missing_reference_rejected():
    nl = builtin("sub_f1")
    for kind, kw in (("GHat", {}), ("E_lambda", {}), ("GTilde", {}), ("GStar", {"lo": np.ones(2)})):
        with pytest.raises(ValueError, match="reference"):
            make_truncation(kind, nl, -1.0, 1.0, **kw)
    with pytest.raises(ValueError):
        make_truncation("GStar", nl, -1.0, 1.0, lo=np.array([2.0]), hi=np.array([1.0]))
    with pytest.raises(ValueError):
        make_truncation("Bogus", nl, -1.0, 1.0)
    with pytest.raises(HypothesisError):
        make_truncation("Aux", builtin("super_f1"), -1.0, 1.0)


def _all_truncations():
    sub = builtin("sub_f1", q=1.5)
    sup = builtin("super_f1")
    ref = np.array([1.3])
    return [
        make_truncation("G_lambda", sub, -1.0, 2.0),
        make_truncation("Aux", sub, -1.0, 0.0),
        make_truncation("GHat", sub, -1.0, 2.0, ref=ref),
        make_truncation("E_lambda", sub, -1.0, 2.0, ref=ref),
        make_truncation("K_lambda", sup, 0.7, 0.0),
        make_truncation("GTilde", sup, 0.7, 1.0, lo=np.array([0.6])),
        make_truncation("GStar", sub, -1.0, 2.0, lo=np.array([0.6]), hi=ref),
    ]


@pytest.mark.parametrize("tr", _all_truncations(), ids=lambda t: t.kind)
def test_truncation_primitive_consistency(tr):
    assert {t.kind for t in _all_truncations()} == set(TRUNCATIONS)
    rng = np.random.default_rng(7)
    x = rng.uniform(-2.0, 4.0, 1000)
    kinks = [0.0, 0.6, 1.3]
    x = x[np.min(np.abs(x[:, None] - np.array(kinks)[None, :]), axis=1) > 1e-3]
    x = np.concatenate([x, [-0.5, 0.3, 2.5]])
    h = 1e-6
    v, _ = tr.at(0, x)
    dP = (tr.at(0, x + h)[1] - tr.at(0, x - h)[1]) / (2 * h)
    assert np.max(np.abs(dP - v) / np.maximum(1.0, np.abs(v))) < 1e-8


@pytest.mark.parametrize("tr", _all_truncations(), ids=lambda t: t.kind)
def test_truncation_continuous_at_breakpoints(tr):
    for b in (0.0, 0.6, 1.3):
        lo, hi = tr.at(0, np.array([b - 1e-12, b + 1e-12]))[0]
        assert abs(lo - hi) < 1e-5


def test_freezing_property():
    sub = builtin("sub_f1", q=1.5)
    sup = builtin("super_f1")
    ref = np.array([1.3])
    for tr in (make_truncation("GHat", sub, -1.0, 2.0, ref=ref),
               make_truncation("E_lambda", sub, -1.0, 2.0, ref=ref),
               make_truncation("GStar", sub, -1.0, 2.0, lo=np.array([0.6]), hi=ref)):
        a, b = tr.at(0, np.array([1.5, 40.0]))[0]
        assert a == b
    tr = make_truncation("GTilde", sup, 0.7, 1.0, lo=np.array([0.6]))
    a, b = tr.at(0, np.array([0.0, 0.59]))[0]
    assert a == b
    tr = make_truncation("GStar", sub, -1.0, 2.0, lo=np.array([0.6]), hi=ref)
    a, b = tr.at(0, np.array([-3.0, 0.2]))[0]
    assert a == b


@pytest.mark.parametrize("name", ["sub_f1", "sub_f2", "h2_f4", "h3_f2"])
def test_sublinear_g_lambda_asymptotic_slope(name):
    lam, mu = -0.5, 2.0
    tr = make_truncation("G_lambda", builtin(name), lam, mu)
    x = np.array([1e4, 1e8, 1e12, 1e16])
    ratio = tr.at(0, x)[0] / x
    err = np.abs(ratio - (lam + mu))
    assert np.all(np.diff(err) < 0)
    assert err[-1] < 1e-2


def test_truncation_is_immutable():
    ref = np.array([1.0, 2.0])
    tr = make_truncation("GHat", builtin("sub_f1"), -1.0, 1.0, ref=ref)
    ref[0] = 100.0
    assert tr.ref[0] == 1.0
    with pytest.raises(ValueError):
        tr.ref[0] = 5.0
