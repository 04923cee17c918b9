import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from monge_hjb.controls import (
    QUARTER_PI,
    ControlPair,
    G3Rule,
    Mode,
    Region,
    SecondDerivativeSamples,
    brute_force,
    classify,
    classify_arrays,
    coefficient_arrays,
    coefficients,
    curve_bounds,
    discrete_objective,
    optimize_b0,
    optimize_b13,
    optimize_b23,
    optimize_control,
    optimize_g1,
    optimize_g2,
    optimize_g3,
    seven_point_objective,
    theta_samples,
)
from monge_hjb.errors import ConfigurationError


def quadratic_wide_eval(hxx, hxy, hyy):
    """Exact rotated second derivatives of a quadratic with the given Hessian."""

    def wide_eval(theta):
        c, s = np.cos(theta), np.sin(theta)
        return hxx * c * c - 2 * hxy * c * s + hyy * s * s, hxx * s * s + 2 * hxy * c * s + hyy * c * c

    return wide_eval


def restricted(objective, regions):
    """``objective`` with every control outside ``regions`` sent to -inf."""

    def evaluate(a, theta):
        a, theta = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(theta, dtype=float))
        keep = np.isin(classify_arrays(a, theta), [int(r) for r in regions])
        return np.where(keep, objective(a, theta), -np.inf)

    return evaluate


def narrow(s, dxy):
    return lambda a, t: seven_point_objective(a, t, s.dxx, s.dyy, dxy, s.f_val)


# ---------------------------------------------------------------------------
# coefficients and regions


def test_coefficients_examples():
    c = coefficients(ControlPair(0.5, 0.3))
    assert (c.a11, c.a12, c.a22) == pytest.approx((0.5, 0.0, 0.5), abs=1e-15)
    c = coefficients(ControlPair(0.0, 0.0))
    assert (c.a11, c.a12, c.a22) == pytest.approx((0.0, 0.0, 1.0))
    c = coefficients(ControlPair(1.0, math.pi / 8))
    r = math.sqrt(2) / 2
    assert (c.a11, c.a12, c.a22) == pytest.approx((0.5 * (1 + r), -math.sqrt(2) / 4, 0.5 * (1 - r)))


def test_control_pair_domain():
    with pytest.raises(ValueError):
        ControlPair(1.5, 0.0)
    with pytest.raises(ValueError):
        ControlPair(0.5, QUARTER_PI)
    ControlPair(0.5, -QUARTER_PI)


def test_classify_examples():
    assert classify(ControlPair(0.5, 0.0)) is Region.B0
    assert classify(ControlPair(0.5, 0.3)) is Region.G1
    assert classify(ControlPair(1.0, math.pi / 8)) is Region.G3
    # |a12| = sin(pi/8)/2 ~ 0.19134 exceeds a22 = (1 - cos(pi/8))/2 ~ 0.03806
    c = coefficients(ControlPair(1.0, math.pi / 16))
    assert c.a22 == pytest.approx(0.03806, abs=1e-5)
    assert abs(c.a12) == pytest.approx(0.19134, abs=1e-5)
    assert classify(ControlPair(1.0, math.pi / 16)) is Region.G3


def test_classify_on_boundary_curves():
    theta = 0.2
    c_minus, c_plus = curve_bounds(theta)
    assert classify(ControlPair(float(c_plus), -theta)) is Region.B13
    assert classify(ControlPair(float(c_plus), theta)) is Region.B23
    assert classify(ControlPair(float(c_minus), theta)) is Region.B13


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 1), st.floats(-QUARTER_PI, QUARTER_PI, exclude_max=True))
def test_coefficients_trace_one_and_psd(a, theta):
    a11, a12, a22 = coefficient_arrays(a, theta)
    assert a11 + a22 == pytest.approx(1.0)
    assert a11 * a22 - a12 * a12 == pytest.approx(a * (1 - a), abs=1e-12)
    assert a11 >= -1e-15 and a22 >= -1e-15


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 1), st.floats(-QUARTER_PI, QUARTER_PI, exclude_max=True))
def test_narrow_regions_give_monotone_stencils(a, theta):
    region = classify(ControlPair(a, theta))
    a11, a12, a22 = coefficient_arrays(a, theta)
    margin = min(a11, a22) - abs(a12)
    if region in (Region.G1, Region.G2, Region.B13, Region.B23):
        assert margin >= -1e-12
        assert (a12 >= 0) == (region in (Region.G1, Region.B13)) or abs(a12) < 1e-15
    elif region is Region.G3:
        assert margin < 0


# ---------------------------------------------------------------------------
# regional optimisers


def test_g1_symmetric_case():
    for d in (-1.0, 0.0, 2.5):
        cand = optimize_g1(SecondDerivativeSamples(d, d, 0.0, 0.0, 1.0))
        assert cand.control.theta == pytest.approx(0.0)
        assert cand.control.a == pytest.approx(0.5)
        assert cand.objective == pytest.approx(-d + 1.0)


def test_g1_exact_quadratic_balances():
    cand = optimize_g1(SecondDerivativeSamples(2.0, 2.0, 0.0, 0.0, 4.0))
    assert cand.control.a == pytest.approx(0.5)
    assert cand.objective == pytest.approx(0.0, abs=1e-14)


def test_g1_against_fine_brute_force():
    # the operator carries -2*a12*dxy, so a negative cross difference favours a12 > 0 (G1)
    s = SecondDerivativeSamples(3.0, 1.0, -0.5, 0.0, 1.0)
    cand = optimize_g1(s)
    oracle = brute_force(restricted(narrow(s, s.dxy1), (Region.G1, Region.B0, Region.B13)), 2001)
    assert cand.objective >= oracle.objective - 1e-12
    assert cand.objective == pytest.approx(oracle.objective, abs=1e-6)


def test_g2_mirrors_g1():
    g1 = optimize_g1(SecondDerivativeSamples(3.0, 1.0, -0.5, 0.0, 1.0))
    g2 = optimize_g2(SecondDerivativeSamples(3.0, 1.0, 0.0, 0.5, 1.0))
    assert g2.objective == pytest.approx(g1.objective, rel=1e-14)
    assert g2.control.theta == pytest.approx(-g1.control.theta)
    assert g2.control.a == pytest.approx(g1.control.a)


def test_g2_zero_cross_difference_reduces_to_b0():
    s = SecondDerivativeSamples(3.0, 1.0, 0.0, 0.0, 1.0)
    g2 = optimize_g2(s)
    assert g2.control.theta == pytest.approx(0.0)
    assert g2.objective == pytest.approx(optimize_b0(s).objective)


def test_g1_stationary_point_outside_region():
    # dxy1 > 0 puts the stationary point at a12 < 0; the G1 maximum then sits on theta = 0
    s = SecondDerivativeSamples(3.0, 1.0, 0.5, 0.5, 1.0)
    assert optimize_g1(s) is None
    oracle = brute_force(restricted(narrow(s, s.dxy1), (Region.G1, Region.B0, Region.B13)), 2001)
    assert optimize_b0(s).objective == pytest.approx(oracle.objective, abs=1e-6)


def test_b0_examples():
    cand = optimize_b0(SecondDerivativeSamples(1.7, 1.7, 0.3, -0.2, 2.0))
    assert cand.control.a == pytest.approx(0.5)
    assert cand.objective == pytest.approx(-1.7 + math.sqrt(2.0))
    cand = optimize_b0(SecondDerivativeSamples(2.0, 0.0, 0.0, 0.0, 0.0))
    assert cand.control.a == 0.0
    assert cand.objective == 0.0
    # a* = (1 - 2/sqrt(12 + 4)) / 2 = 1/4, objective -1 - 1.5 + 1.5 = -1
    cand = optimize_b0(SecondDerivativeSamples(4.0, 2.0, 0.0, 0.0, 3.0))
    assert cand.control.a == pytest.approx(0.25)
    assert cand.objective == pytest.approx(-1.0)


def test_b13_gamma_zero_collapse():
    # gamma = 0 when dyy - dxx = 2 * s_theta * dxy1
    for s_theta, (s_a, _) in ((-1, (1, -1)), (1, (-1, 1))):
        s = SecondDerivativeSamples(1.0, 1.0 + 2 * s_theta * 0.4, 0.4, 0.0, 2.0)
        cand = next(c for c in optimize_b13(s) if np.sign(c.control.theta) == s_theta)
        assert cand.control.theta == pytest.approx(s_theta * math.pi / 8)
        assert cand.control.a == pytest.approx(0.5 * (1 + s_a / math.sqrt(2)))


@settings(max_examples=100, deadline=None)
@given(
    st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5), st.floats(0.01, 10)
)
def test_boundary_candidates_lie_on_their_curves(dxx, dyy, dxy, f):
    s = SecondDerivativeSamples(dxx, dyy, dxy, -dxy, f)
    for cand in optimize_b13(s):
        assert classify(cand.control) in (Region.B13, Region.B0)
    for cand in optimize_b23(s):
        assert classify(cand.control) in (Region.B23, Region.B0)


def _curve_samples(s_a, s_theta, count=200001):
    t = s_theta * np.linspace(1e-9, QUARTER_PI - 1e-9, count)
    a = 0.5 * (1 + s_a / (math.sqrt(2) * np.sin(2 * np.abs(t) + QUARTER_PI)))
    return a, t


def test_b13_against_curve_sampling():
    s = SecondDerivativeSamples(1.0, 5.0, 3.0, 0.0, 1.0)
    best = max(optimize_b13(s), key=lambda c: c.objective)
    curve_best = max(narrow(s, s.dxy1)(*_curve_samples(s_a, s_t)).max() for s_a, s_t in ((1, -1), (-1, 1)))
    glob = brute_force(discrete_objective(s, quadratic_wide_eval(1.0, 3.0, 5.0)), 401)
    assert best.objective >= curve_best - 1e-5
    assert best.objective <= glob.objective + 1e-3


def test_b23_against_curve_sampling():
    s = SecondDerivativeSamples(1.0, 5.0, 0.0, -3.0, 1.0)
    best = max(optimize_b23(s), key=lambda c: c.objective)
    curve_best = max(narrow(s, s.dxy2)(*_curve_samples(s_a, s_t)).max() for s_a, s_t in ((1, 1), (-1, -1)))
    assert best.objective >= curve_best - 1e-5
    mirror = max(optimize_b13(SecondDerivativeSamples(1.0, 5.0, 3.0, 0.0, 1.0)), key=lambda c: c.objective)
    assert best.objective == pytest.approx(mirror.objective, rel=1e-12)


def test_b13_zero_source_picks_the_diagonal_vertex():
    s = SecondDerivativeSamples(1.0, 1.0, -2.0, 0.0, 0.0)
    thetas = sorted(c.control.theta for c in optimize_b13(s))
    assert thetas == pytest.approx([-QUARTER_PI, -QUARTER_PI])


def test_g3_symmetric_input_is_clamped_onto_a_curve():
    wide_eval = lambda theta: (1.0, 1.0)
    cand = optimize_g3(wide_eval, 2.0, 16, G3Rule.CLAMP)
    c_minus, c_plus = curve_bounds(cand.control.theta)
    assert cand.control.a in (pytest.approx(float(c_minus)), pytest.approx(float(c_plus)))
    assert optimize_g3(wide_eval, 2.0, 16, G3Rule.STRICT) is None


def test_g3_rejects_zero_samples():
    with pytest.raises(ConfigurationError):
        optimize_g3(lambda t: (1.0, 0.0), 1.0, 0)


def test_g3_against_restricted_brute_force():
    wide_eval = quadratic_wide_eval(4.0, 3.0, 0.5)
    f, M = 1.5, 64
    cand = optimize_g3(wide_eval, f, M, G3Rule.CLAMP)
    a = np.linspace(0.0, 1.0, 2001)
    best = -np.inf
    for theta in theta_samples(M):
        dzz, dww = wide_eval(theta)
        c_minus, c_plus = curve_bounds(theta)
        keep = (a <= c_minus) | (a >= c_plus)
        vals = -a * dzz - (1 - a) * dww + 2 * np.sqrt(a * (1 - a) * f)
        best = max(best, vals[keep].max())
    assert cand.objective >= best - 1e-12
    assert cand.objective == pytest.approx(best, abs=1e-6)


# ---------------------------------------------------------------------------
# full optimiser


def test_symmetric_samples_choose_b0():
    res = optimize_control(SecondDerivativeSamples(2.0, 2.0, 0.0, 0.0, 1.0), quadratic_wide_eval(2.0, 0.0, 2.0), 32)
    assert res.region is Region.B0
    assert res.control.a == pytest.approx(0.5)
    assert res.mode is Mode.SEVEN_POINT_1


def test_region_tie_breaking_prefers_b0():
    # with f = 0 and equal diagonals every theta = 0 control ties at the top
    res = optimize_control(SecondDerivativeSamples(1.0, 1.0, 0.0, 0.0, 0.0), None, 8)
    assert res.region is Region.B0


hess = st.floats(-6, 6, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(hess, hess, hess, hess, st.floats(0, 10), hess, hess, hess)
def test_optimizer_dominates_brute_force(dxx, dyy, dxy1, dxy2, f, qxx, qxy, qyy):
    s = SecondDerivativeSamples(dxx, dyy, dxy1, dxy2, f)
    wide_eval = quadratic_wide_eval(qxx, qxy, qyy)
    res = optimize_control(s, wide_eval, 201, g3_rule=G3Rule.CLAMP)
    oracle = brute_force(discrete_objective(s, wide_eval), 201)
    assert res.objective >= oracle.objective - 1e-6


@settings(max_examples=300, deadline=None)
@given(hess, hess, hess, hess, st.floats(0, 10), st.floats(0, 1), st.floats(-QUARTER_PI, QUARTER_PI, exclude_max=True))
def test_narrow_maximum_is_an_upper_bound(dxx, dyy, dxy1, dxy2, f, a, theta):
    # without wide candidates the optimum bounds the objective at every 7-point control
    s = SecondDerivativeSamples(dxx, dyy, dxy1, dxy2, f)
    res = optimize_control(s, None, 8)
    value = float(discrete_objective(s)(a, theta))
    assert res.objective >= value - 1e-9 * max(1.0, abs(value))


@settings(max_examples=100, deadline=None)
@given(hess, hess, hess, hess, st.floats(0, 10))
def test_strict_rule_never_beats_clamp(dxx, dyy, dxy1, dxy2, f):
    s = SecondDerivativeSamples(dxx, dyy, dxy1, dxy2, f)
    wide_eval = quadratic_wide_eval(dxx, 0.5 * (dxy1 + dxy2), dyy)
    strict = optimize_control(s, wide_eval, 32, G3Rule.STRICT)
    clamp = optimize_control(s, wide_eval, 32, G3Rule.CLAMP)
    assert strict.objective <= clamp.objective + 1e-12


# ---------------------------------------------------------------------------
# brute force oracle


def test_brute_force_constant_returns_first_sample():
    cand = brute_force(lambda a, t: np.zeros(np.broadcast(a, t).shape), 11)
    assert cand.control.a == 0.0
    assert cand.control.theta == pytest.approx(theta_samples(11)[0])


def test_brute_force_parabola():
    cand = brute_force(lambda a, t: a * (1 - a) + 0 * t, 11)
    assert cand.control.a == pytest.approx(0.5)
    cand = brute_force(lambda a, t: a * (1 - a) + 0 * t, 10)
    assert abs(cand.control.a - 0.5) == pytest.approx(1 / 18)


def test_theta_samples_are_cell_midpoints():
    np.testing.assert_allclose(theta_samples(2), [-math.pi / 8, math.pi / 8])
    with pytest.raises(ConfigurationError):
        theta_samples(0)
