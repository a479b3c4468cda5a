import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cascadeflow.curves import (ConstantCurve, CurveError, Orientation, build_clamp_curve, build_step_curve,
                                default_step_delta, second_derivative)
from cascadeflow.curves import eval as curve_eval

betas = st.sampled_from([100.0, 200.0, 1000.0])
thresholds = st.floats(-2.0, 1.5, allow_nan=False)


def _pieces(c, u):
    """Value and slope of each of the five pieces at ``u``.

    Each patch ``q(u) = level +- k (u - edge)^2`` has zero slope at its outer
    edge by construction; ``k`` is solved from the slope match with the line
    at the inner edge. Centred form is used because the expanded
    ``a u^2 + b u + c`` loses digits to cancellation when ``a`` is large.
    """
    u1, u2, u3, u4 = c.breakpoints
    k_lo = c.slope / (2.0 * (u1 - u2))
    k_hi = c.slope / (2.0 * (u3 - u4))
    return {
        "flat_lo": (c.lower_value, 0.0),
        "patch_lo": (c.lower_value + k_lo * (u1 - u) ** 2, -2 * k_lo * (u1 - u)),
        "line": (c.lower_value + c.slope * (c.u_top - u), -c.slope),
        "patch_hi": (c.upper_value - k_hi * (u - u4) ** 2, -2 * k_hi * (u - u4)),
        "flat_hi": (c.upper_value, 0.0),
    }


# -- construction examples ----------------------------------------------------


def test_step_curve_region_values():
    c = build_step_curve(-0.3, 200.0, 1e-4)
    assert curve_eval(c, 0.0) == (0.0, 0.0)
    assert curve_eval(c, -1.0) == (1.0, 0.0)
    val, d = curve_eval(c, -0.3025)
    assert val == pytest.approx(0.5, abs=1e-12)
    assert d == -200.0


def test_upper_patch_matching_conditions():
    beta, delta, thr = 200.0, 1e-4, -0.3
    c = build_step_curve(thr, beta, delta)
    a, b, k = c.patch_lo
    q = lambda u: a * u * u + b * u + k  # noqa: E731
    dq = lambda u: 2 * a * u + b  # noqa: E731
    assert a == pytest.approx(beta / (4 * delta))
    assert q(thr + delta) == pytest.approx(0.0, abs=1e-10)
    assert dq(thr + delta) == pytest.approx(0.0, abs=1e-8)
    assert q(thr - delta) == pytest.approx(beta * delta, abs=1e-10)
    assert dq(thr - delta) == pytest.approx(-beta, rel=1e-10)


def test_second_derivative_examples():
    c = build_step_curve(-0.3, 200.0, 1e-4)
    assert second_derivative(c, -0.3025) == 0.0
    assert second_derivative(c, -0.3) == pytest.approx(1e6)
    u1 = c.breakpoints[0]
    assert second_derivative(c, u1) == pytest.approx(5e5)
    assert second_derivative(c, c.breakpoints[3]) == pytest.approx(-5e5)
    assert second_derivative(c, c.breakpoints[2]) == pytest.approx(-5e5)


def test_patch_overlap_is_rejected():
    with pytest.raises(CurveError):
        build_step_curve(-0.3, 200.0, 1.0 / 400.0)
    with pytest.raises(CurveError):
        build_step_curve(-0.3, 0.0)
    with pytest.raises(CurveError):
        build_step_curve(-0.3, 200.0, 0.0)


def test_default_delta_fits_inside_ramp():
    for beta in (100.0, 1e3, 1e6):
        d = default_step_delta(beta)
        assert d == pytest.approx(0.05 / beta)
        assert 0 < d < 1 / (2 * beta)


def test_clamp_examples():
    assert curve_eval(build_clamp_curve(0.1, -100.0, 100.0), 0.0)[0] == pytest.approx(0.0, abs=1e-15)
    assert curve_eval(build_clamp_curve(0.1, -100.0, 100.0), -0.3)[0] == pytest.approx(0.03, rel=1e-12)
    assert curve_eval(build_clamp_curve(10.0, -1.0, 1.0), -5.0) == (1.0, 0.0)
    assert curve_eval(build_clamp_curve(10.0, -1.0, 1.0), 5.0) == (-1.0, 0.0)
    c = build_clamp_curve(10.0, -1.0, 1.0)
    assert c.orientation is Orientation.CLAMP
    assert curve_eval(c, 0.05) == (pytest.approx(-0.5), -10.0)


def test_clamp_degenerate_and_invalid():
    assert isinstance(build_clamp_curve(0.0, -1.0, 1.0), ConstantCurve)
    assert curve_eval(build_clamp_curve(0.0, -1.0, 1.0), -3.0) == (0.0, 0.0)
    with pytest.raises(CurveError):
        build_clamp_curve(1.0, 0.0, 1.0)
    with pytest.raises(CurveError):
        build_clamp_curve(-1.0, -1.0, 1.0)


def test_vectorised_eval_matches_scalar():
    c = build_step_curve(-0.3, 1000.0)
    u = np.linspace(-0.32, -0.28, 101)
    vals, ders = c.eval(u)
    for ui, v, d in zip(u, vals, ders):
        assert (v, d) == c.eval(float(ui))


# -- properties ---------------------------------------------------------------


@given(beta=betas, thr=thresholds)
def test_c0_c1_at_breakpoints(beta, thr):
    c = build_step_curve(thr, beta)
    u1, u2, u3, u4 = c.breakpoints
    left_right = [(u1, "flat_lo", "patch_lo"), (u2, "patch_lo", "line"), (u3, "line", "patch_hi"), (u4, "patch_hi", "flat_hi")]
    for u, a, b in left_right:
        pieces = _pieces(c, u)
        assert abs(pieces[a][0] - pieces[b][0]) < 1e-12
        assert abs(pieces[a][1] - pieces[b][1]) < 1e-10
        v, d = c.eval(u)
        assert abs(v - pieces[a][0]) < 1e-12 and abs(d - pieces[a][1]) < 1e-10


@settings(max_examples=300)
@given(beta=betas, thr=thresholds, frac=st.floats(-3.0, 3.0))
def test_fd_derivative_near_breakpoints(beta, thr, frac):
    c = build_step_curve(thr, beta)
    bp = c.breakpoints[int(abs(frac) * 10) % 4]
    u = bp + frac * c.delta
    h = 1e-7 * c.delta * beta / 50.0
    v_plus, _ = c.eval(u + h)
    v_minus, _ = c.eval(u - h)
    fd = (v_plus - v_minus) / (2 * h)
    _, d = c.eval(u)
    # FD step is tiny against the patch width, so the only error is the
    # curvature term h * max|f''|, far below the 1e-6 relative allowance
    assert abs(fd - d) <= 1e-6 * beta + 1e-5 * beta


def test_fd_derivative_dense_sweep():
    rng = np.random.default_rng(7)
    for beta in (100.0, 200.0, 1000.0):
        c = build_step_curve(-0.3, beta)
        bps = np.array(c.breakpoints)
        u = bps[rng.integers(0, 4, 25_000)] + rng.uniform(-5, 5, 25_000) * c.delta
        h = 1e-7
        fd = (c.eval(u + h)[0] - c.eval(u - h)[0]) / (2 * h)
        d = c.eval(u)[1]
        # where the patch is narrow the FD error is bounded by h * curvature
        allow = 1e-6 * np.maximum(np.abs(d), 1.0) + h * c.curvature
        assert np.all(np.abs(fd - d) <= allow)


@given(beta=betas, thr=thresholds, u=st.floats(-1e9, 1e9, allow_nan=False))
def test_range_and_region3(beta, thr, u):
    c = build_step_curve(thr, beta)
    v, _ = c.eval(u)
    assert 0.0 <= v <= 1.0
    u2, u3 = c.breakpoints[1], c.breakpoints[2]
    mid = 0.5 * (u2 + u3)
    if u3 < mid < u2:
        assert c.eval(mid)[0] == -beta * (mid - thr)


@given(beta=betas, thr=thresholds, a=st.floats(-5, 5), b=st.floats(-5, 5))
def test_falling_monotone(beta, thr, a, b):
    c = build_step_curve(thr, beta)
    hi, lo = max(a, b), min(a, b)
    assert c.eval(hi)[0] <= c.eval(lo)[0]


def test_discrete_limit():
    c = build_step_curve(-0.3, 1e6, 1e-8)
    assert c.eval(-0.29)[0] < 1e-3
    assert c.eval(-0.31)[0] > 1 - 1e-3


@given(k=st.floats(1.0, 50.0), thr=st.floats(-1.0, 0.0), t=st.floats(0.3, 0.7))
def test_continuous_scheme_law(k, thr, t):
    c = build_step_curve(thr, k)
    u = thr - t / k  # inside the linear region for the default patch width
    assert c.eval(u)[0] == pytest.approx(-k * (u - thr), rel=1e-12, abs=1e-14)


@given(gain=st.floats(0.01, 100.0), lo=st.floats(-10.0, -0.1), hi=st.floats(0.1, 10.0),
       u=st.floats(-1e6, 1e6, allow_nan=False))
def test_clamp_bounded_and_c1(gain, lo, hi, u):
    c = build_clamp_curve(gain, lo, hi)
    v, _ = c.eval(u)
    assert lo <= v <= hi
    for bp in c.breakpoints:
        left = c.eval(math.nextafter(bp, -math.inf))
        right = c.eval(math.nextafter(bp, math.inf))
        assert abs(left[0] - right[0]) < 1e-9 * max(1.0, abs(hi) + abs(lo))
        assert abs(left[1] - right[1]) < 1e-6 * gain
