from __future__ import annotations

import math
import random

import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st

from thinfilm import jetcalc as jc
from thinfilm import symexpr as sx
from thinfilm.symexpr import normalize, parse, to_string

U, X, T = sx.VARIABLES["u"], sx.VARIABLES["x"], sx.VARIABLES["t"]
M, LAM = sx.PARAMETERS["m"], sx.PARAMETERS["lambda"]


# --- random expressions over positive variables --------------------------------

_atoms = st.sampled_from(["u", "x", "t", "v", "2", "3", "1/2", "m", "lambda"])


def _combine(children):
    return st.one_of(
        st.tuples(children, children).map(lambda p: f"({p[0]}) + ({p[1]})"),
        st.tuples(children, children).map(lambda p: f"({p[0]}) - ({p[1]})"),
        st.tuples(children, children).map(lambda p: f"({p[0]})*({p[1]})"),
        st.tuples(children, st.sampled_from(["u", "x", "t"])).map(lambda p: f"({p[0]})/({p[1]} + 1)"),
        st.tuples(st.sampled_from(["u", "x", "v"]), st.sampled_from(["2", "3", "-1", "m", "m+1", "1-m", "6/m"]))
        .map(lambda p: f"{p[0]}^({p[1]})"),
        st.sampled_from(["u", "x", "t"]).map(lambda s: f"ln({s})"),
        st.tuples(st.sampled_from(["1", "lambda", "-1/2"]), st.sampled_from(["u", "v", "t"]))
        .map(lambda p: f"e^(({p[0]})*{p[1]})"),
    )


exprs = st.recursive(_atoms, _combine, max_leaves=6)
symbols = st.sampled_from(["u", "x", "t", "v", "m", "lambda"])


def _point(rng: random.Random) -> dict:
    return {n: rng.uniform(0.3, 2.7) for n in ("u", "x", "t", "v", "m", "lambda")}


# --- parse / print ------------------------------------------------------------

def test_parse_jet_product():
    e = parse("f(u)*u_xxxxx")
    assert e == sx.f(U) * sx.sym("u_xxxxx")


def test_parse_affine_exponent():
    assert parse("u^(m+1)") == U ** (M + 1)


def test_parse_exponential_atom():
    e = parse("e^(lambda*v)")
    assert e == sp.exp(LAM * sx.VARIABLES["v"])


def test_parse_syntax_error_reports_position():
    with pytest.raises(sx.ExprSyntaxError) as info:
        parse("u +* 2")
    assert info.value.position == 3


def test_parse_unknown_identifier():
    with pytest.raises(sx.UnknownIdentifier):
        parse("foo + 1")


def test_parse_ignores_surrounding_whitespace():
    assert parse("  u + 1 ") == U + 1


def test_derivative_names():
    assert parse("df1(u)") == sx.df1(U)
    assert sp.diff(sx.f(U), U) == sx.df1(U)
    assert sp.diff(sx.df1(U), U) == sx.df2(U)


def test_third_derivative_of_f_rejected():
    with pytest.raises(sx.UnsupportedExpression):
        normalize(sp.diff(sx.df2(U), U))


@given(exprs)
def test_round_trip(text):
    n = normalize(parse(text))
    assert normalize(parse(to_string(n))) == n


# --- normalize -------------------------------------------------------------------

def test_exponent_addition():
    assert normalize(parse("u^m*u")) == normalize(parse("u^(m+1)"))


def test_inverse_exponentials():
    assert normalize(parse("e^(lambda*v)*e^(-lambda*v)")) == 1


def test_total_derivative_identity():
    e = parse("df1(u)*u_x*u_xxxxx + f(u)*u_xxxxxx") - jc.total_derivative(parse("f(u)*u_xxxxx"), "x")
    assert normalize(e) == 0


@given(exprs)
def test_normalize_idempotent(text):
    n = normalize(parse(text))
    assert normalize(n) == n


@given(exprs, exprs)
def test_zero_soundness(a, b):
    e = parse(f"({a})*({b}) - ({b})*({a})")
    assert normalize(e) == 0
    ok, worst = sx.probably_zero(e, random.Random(1), n_points=20, rtol=1e-12)
    assert ok, worst


@given(exprs, st.integers(0, 10_000))
def test_normalize_preserves_value(text, seed):
    e = parse(text)
    n = normalize(e)
    p = _point(random.Random(seed))
    a, b = sx.eval_numeric(e, p), sx.eval_numeric(n, p)
    assert math.isclose(a, b, rel_tol=1e-9, abs_tol=1e-9)


# --- diff ------------------------------------------------------------------------

def test_diff_power():
    assert normalize(sx.diff(parse("u^m"), U) - parse("m*u^(m-1)")) == 0


def test_diff_opaque():
    assert sx.diff(parse("f(u)"), U) == sx.df1(U)


def test_diff_exponential():
    assert normalize(sx.diff(parse("e^(lambda*u)"), U) - parse("lambda*e^(lambda*u)")) == 0


def test_diff_treats_jets_as_independent():
    assert sx.diff(parse("u_x*u"), U) == sx.sym("u_x")


@given(exprs, symbols, st.integers(0, 10_000))
def test_diff_matches_finite_differences(text, name, seed):
    e = parse(text)
    s = sx.sym(name)
    d = sx.diff(e, s)
    p = _point(random.Random(seed))
    h = 1e-5 * max(1.0, abs(p[name]))
    up, dn = dict(p), dict(p)
    up[name] += h
    dn[name] -= h
    fd = (sx.eval_numeric(e, up) - sx.eval_numeric(e, dn)) / (2 * h)
    exact = sx.eval_numeric(d, p)
    scale = max(1.0, abs(exact), abs(sx.eval_numeric(e, p)))
    assert abs(fd - exact) <= 1e-6 * scale


@given(exprs, exprs, symbols)
def test_diff_linearity(a, b, name):
    s = sx.sym(name)
    e1, e2 = parse(a), parse(b)
    lhs = sx.diff(3 * e1 - sp.Rational(2, 7) * e2, s)
    rhs = 3 * sx.diff(e1, s) - sp.Rational(2, 7) * sx.diff(e2, s)
    assert normalize(lhs - rhs) == 0


# --- substitute ----------------------------------------------------------------

def test_substitute_ut():
    e = parse("u_t - f(u)*u_xxxxxx")
    assert sx.substitute(e, sx.sym("u_t"), parse("f(u)*u_xxxxxx")) == 0


def test_substitute_family():
    assert sx.substitute(parse("f(u)"), sx.f, parse("u^m")) == U ** M


def test_substitute_criterion_on_solution():
    Q3 = jc.VectorField(T, X / 6, 0)
    crit = jc.criterion(Q3)
    assert normalize(crit) != 0
    assert normalize(jc.on_solution(crit)) == 0


# --- eval_numeric ----------------------------------------------------------------

def test_eval_power():
    assert sx.eval_numeric(parse("u^m"), {"u": 2}, {"m": 3}) == 8.0


def test_eval_log():
    v = sx.eval_numeric(parse("ln(x^6/(144*(t0 - t)))"), {"x": 1, "t": 0}, {"t0": 1})
    assert v == pytest.approx(math.log(1 / 144), rel=1e-14)
    assert v == pytest.approx(-4.969813, abs=1e-6)


def test_eval_opaque_binding():
    assert sx.eval_numeric(parse("df1(u)"), {"u": 0}, {"lambda": 1}, f_binding=parse("e^(lambda*u)")) == 1.0


def test_eval_errors():
    with pytest.raises(sx.EvaluationError):
        sx.eval_numeric(parse("1/(x - 1)"), {"x": 1})
    with pytest.raises(sx.EvaluationError):
        sx.eval_numeric(parse("ln(t - 2)"), {"t": 1})
    with pytest.raises(sx.EvaluationError):
        sx.eval_numeric(parse("u + m"), {"u": 1})


# --- parameters ------------------------------------------------------------------

def test_parameter_table_admissibility():
    table = sx.ParameterTable()
    for name in ("m", "lambda", "eps4", "eps5", "eps6"):
        with pytest.raises(ValueError):
            table.bind(name, 0)
    bound = table.bind("m", "3/2").bind("alpha", 1)
    assert bound.as_subs()[M] == sp.Rational(3, 2)
    assert bound.floats()["m"] == 1.5


def test_probably_zero_detects_nonzero(rng):
    ok, worst = sx.probably_zero(parse("u^m - u^(m+1)"), rng)
    assert not ok and worst > 1e-3
