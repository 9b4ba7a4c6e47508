from __future__ import annotations

import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thinfilm import odeint as oi
from thinfilm import reductions as rd
from thinfilm.symexpr import normalize, parse


@pytest.fixture(scope="module")
def sine():
    return oi.to_first_order("v_yy + v")


def _rational_tw(alpha=2.0):
    sys = rd.first_integral_travelling(rd.ls.NonlinearityFamily("power", param=1), alpha, 0)
    exact = lambda s: 1 - alpha / 120 * s ** 5
    return sys, exact


# --- to_first_order ------------------------------------------------------------

def test_dimensions(sine):
    assert sine.dimension == 2
    blow = oi.to_first_order("144*e^(lambda*v) - lambda*v_y", params={"lambda": 1})
    assert blow.dimension == 1
    tw = oi.to_first_order("v^m*v_yyyyy + alpha*v - k", params={"m": 2, "alpha": 1, "k": 0})
    assert tw.dimension == 5


def test_isolates_highest():
    tw = oi.to_first_order("v^m*v_yyyyy + alpha*v - k")
    assert normalize(tw.highest - parse("(k - alpha*v)*v^(-m)")) == 0


def test_singular_predicate():
    tw = oi.to_first_order("v^m*v_yyyyy + alpha*v - k", params={"m": 2, "alpha": 1, "k": 0})
    assert tw.is_singular(0.0, np.array([0.0, 1, 1, 1, 1]))
    assert not tw.is_singular(0.0, np.array([1.0, 1, 1, 1, 1]))


def test_zero_leading_coefficient():
    with pytest.raises(ValueError):
        oi.to_first_order("v + y")
    with pytest.raises(ValueError):
        oi.to_first_order("0*v_yy + v")


# --- integrate -----------------------------------------------------------------

def test_sine_endpoint(sine):
    tr = oi.integrate(sine, 0.0, [0.0, 1.0], math.pi)
    assert tr.ok and abs(tr.states[-1][0]) < 1e-8


def test_rational_travelling_wave():
    sys, exact = _rational_tw()
    tr = oi.integrate(sys, 0.0, [1, 0, 0, 0, 0], 2.0)
    assert tr.ok
    assert np.max(np.abs(tr.states[:, 0] - exact(tr.ys))) < 1e-9
    ss = np.linspace(0, 2, 101)
    assert max(abs(oi.dense_eval(tr, s)[0] - exact(s)) for s in ss) < 1e-9


def test_blowup_ode_separable_solution():
    # tolerances tightened: the error grows like 1/(1 - t) toward the pole at t = 1
    sys = oi.to_first_order("144*e^(lambda*v) - lambda*v_y", params={"lambda": 1})
    tr = oi.integrate(sys, 0.0, [math.log(1 / 144)], 0.9, rtol=1e-11, atol=1e-13)
    ts = np.linspace(0, 0.9, 200)
    err = max(abs(oi.dense_eval(tr, t)[0] - math.log(1 / (144 * (1 - t)))) for t in ts)
    assert err < 1e-8


def test_backward_direction(sine):
    tr = oi.integrate(sine, math.pi, [0.0, -1.0], 0.0)
    assert tr.ok and abs(tr.states[-1][0]) < 1e-8 and abs(tr.states[-1][1] - 1) < 1e-8


def test_invalid_inputs(sine):
    with pytest.raises(ValueError):
        oi.integrate(sine, 0, [0, 1], 1, rtol=0)
    with pytest.raises(ValueError):
        oi.integrate(sine, 0, [0, 1, 2], 1)
    with pytest.raises(ValueError):
        oi.integrate(sine, 0, [0, 1], 1, adaptive=False)
    tw = oi.to_first_order("v^m*v_yyyyy + alpha*v - k", params={"m": 2, "alpha": 1, "k": 0})
    with pytest.raises(oi.IntegrationError):
        oi.integrate(tw, 0, [0, 1, 0, 0, 0], 1)


def test_max_steps(sine):
    tr = oi.integrate(sine, 0.0, [0.0, 1.0], 100.0, max_steps=10)
    assert tr.stop_reason == "max_steps" and not tr.ok


def test_sine_error_halving_tolerance(sine):
    """Halving rtol/atol reduces the sine endpoint error by at least 8x until the 1e-12 floor."""
    rtol, atol = 1e-5, 1e-8
    prev = None
    while True:
        tr = oi.integrate(sine, 0.0, [0.0, 1.0], math.pi, rtol=rtol, atol=atol)
        err = abs(tr.states[-1][0])
        if err < 1e-12:
            break
        if prev is not None:
            assert prev / err >= 8.0, f"rtol={rtol:.2e}: ratio {prev / err:.2f}"
        prev = err
        rtol, atol = rtol / 2, atol / 2


def test_fixed_step_fifth_order(sine):
    # endpoint 1.5, not pi: at pi the leading (amplitude) error is multiplied by sin(pi) = 0
    errs = []
    for n in (10, 20, 40):
        tr = oi.integrate(sine, 0.0, [0.0, 1.0], 1.5, h0=1.5 / n, adaptive=False)
        assert tr.stats["steps"] == n
        errs.append(abs(tr.states[-1][0] - math.sin(1.5)))
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert all(4.5 < p < 5.5 for p in orders), orders


@settings(max_examples=20)
@given(st.floats(0.5, 6.0), st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
def test_reversibility(span, a, b):
    sys = oi.to_first_order("v_yy + v")
    rtol = 1e-9
    fwd = oi.integrate(sys, 0.0, [a, b], span, rtol=rtol)
    back = oi.integrate(sys, span, fwd.states[-1], 0.0, rtol=rtol)
    assert np.max(np.abs(back.states[-1] - [a, b])) <= 10 * rtol * max(1.0, abs(a), abs(b))


@pytest.mark.parametrize("m", [-1, -2, "-1/2"])
def test_singularity_guard(m):
    # v^m v_yyyyy + alpha v = k with m < 0, driven toward v = 0
    sys = oi.to_first_order("v^m*v_yyyyy + alpha*v - k", params={"m": m, "alpha": 1, "k": 0}, positive=True)
    tr = oi.integrate(sys, 0.0, [0.5, -1.0, 0, 0, 0], 10.0)
    assert tr.stop_reason == "singular"
    assert np.all(np.isfinite(tr.states))
    assert np.all(tr.states[:, 0] > 0)


# --- dense output ------------------------------------------------------------

def test_dense_at_knots(sine):
    tr = oi.integrate(sine, 0.0, [0.0, 1.0], 3.0)
    for y, s in zip(tr.ys, tr.states):
        assert np.array_equal(oi.dense_eval(tr, float(y)), s)


def test_dense_derivative_matches_rhs(sine):
    tr = oi.integrate(sine, 0.0, [0.0, 1.0], 3.0)
    for y, s in zip(tr.ys[1:-1], tr.states[1:-1]):
        assert np.max(np.abs(oi.dense_eval(tr, float(y), 1) - sine.rhs(y, s))) < 1e-10


def test_dense_interpolant_accuracy(sine):
    tr = oi.integrate(sine, 0.0, [0.0, 1.0], 3.0)
    for y in np.linspace(0.05, 2.95, 50):
        assert abs(oi.dense_eval(tr, float(y))[0] - math.sin(y)) < 1e-8


def test_dense_higher_derivatives_finite_difference(sine):
    tr = oi.integrate(sine, 0.0, [0.0, 1.0], 3.0)
    h = 1e-3
    for y in (0.4, 1.3, 2.6):
        f = [oi.dense_eval(tr, y + k * h, 1) for k in (-1, 0, 1)]
        assert np.max(np.abs(oi.dense_eval(tr, y, 2) - (f[2] - f[0]) / (2 * h))) < 1e-5
        assert np.max(np.abs(oi.dense_eval(tr, y, 3) - (f[0] - 2 * f[1] + f[2]) / h ** 2)) < 1e-5


def test_transformed_third_derivative():
    # u1 = 1/v_y as a function of x1 = v along a travelling-wave trajectory
    c = rd.chained_reductions()[1]
    sys = rd.source_system(c)
    y0, s0, y1 = rd.CHAIN_INITIAL[c.id]
    tr = oi.integrate(sys, y0, s0, y1)
    stage = c.stages[0]
    _, jets = rd.push_forward(stage, 3, 5)
    jets = [rd._bind(j, c.params) for j in jets]
    fn = rd.sp.lambdify([rd.Y] + [rd.vjet(k) for k in range(6)], jets[3], modules="math")
    y = 0.3
    s = oi.dense_eval(tr, y)
    exact = fn(y, *s, sys.rhs(y, s)[-1])
    ys = np.linspace(y - 0.03, y + 0.03, 41)
    pts = np.array([oi.dense_eval(tr, float(t)) for t in ys])
    x1, u1 = pts[:, 0], 1 / pts[:, 1]
    x0 = s[0]
    poly = np.polynomial.Polynomial.fit(x1 - x0, u1, 7)
    fd = poly.deriv(3)(0.0)
    assert abs(fd - exact) < 1e-5 * max(1.0, abs(exact))


def test_out_of_span(sine):
    tr = oi.integrate(sine, 0.0, [0.0, 1.0], 1.0)
    with pytest.raises(oi.OutOfSpan):
        oi.dense_eval(tr, 1.5)
    with pytest.raises(ValueError):
        oi.dense_eval(tr, 0.5, 4)


# --- exports -------------------------------------------------------------------

def test_csv_and_stats(sine, tmp_path):
    tr = oi.integrate(sine, 0.0, [0.0, 1.0], 1.0)
    path = tmp_path / "traj.csv"
    tr.to_csv(path, ["v", "v_y"])
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["y", "v", "v_y"] and len(rows) == len(tr.ys) + 1
    stats = json.loads(tr.stats_json())
    assert stats["stop_reason"] == "completed" and stats["steps"] == len(tr.ys) - 1
    assert stats["rhs_evaluations"] >= 6 * stats["steps"]
