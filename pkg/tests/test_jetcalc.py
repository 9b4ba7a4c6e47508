from __future__ import annotations

import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st

from thinfilm import jetcalc as jc
from thinfilm import liesym as ls
from thinfilm import symexpr as sx
from thinfilm.symexpr import normalize, parse

T, X, U = jc.T, jc.X, jc.U


@pytest.fixture(scope="module")
def determining():
    return jc.extract_determining_system()


# --- jets and total derivatives ------------------------------------------------------

def test_jetvar_order_cap():
    with pytest.raises(jc.JetOrderError):
        jc.JetVar(3, 10)
    assert jc.JetVar(1, 2).name == "u_txx"
    assert jc.JetVar.from_symbol(sx.sym("u_xxx")) == jc.JetVar(0, 3)


def test_total_derivative_of_flux():
    d = jc.total_derivative(parse("f(u)*u_xxxxx"), "x")
    assert normalize(d - parse("df1(u)*u_x*u_xxxxx + f(u)*u_xxxxxx")) == 0


def test_total_derivative_trivial():
    assert jc.total_derivative(X, "t") == 0
    assert normalize(jc.total_derivative(U ** 2, "x") - 2 * U * jc.ux(1)) == 0


def test_total_derivative_bad_direction():
    with pytest.raises(ValueError):
        jc.total_derivative(U, "y")


_corpus = st.sampled_from([
    "f(u)*u_xxxxx", "u^2*u_x", "t*x*u_xx", "e^(lambda*u)*u_x^2", "u^m*u_t", "x^2*ln(t)*u_xxx", "f(u)*u_tx",
])


@given(_corpus)
def test_total_derivatives_commute(text):
    e = parse(text)
    a = jc.total_derivative(jc.total_derivative(e, "x"), "t")
    b = jc.total_derivative(jc.total_derivative(e, "t"), "x")
    assert normalize(a - b) == 0


# --- prolongation -----------------------------------------------------------------

def test_prolong_translation_is_zero():
    pr = jc.prolong(jc.VectorField(0, 1, 0))
    assert all(normalize(v) == 0 for v in pr.values())


def test_prolong_scaling_x():
    pr = jc.prolong(jc.VectorField(0, X, 0))
    assert normalize(pr[jc.JetVar(0, 1)] + jc.ux(1)) == 0


def test_prolong_case1_q3():
    pr = jc.prolong(jc.VectorField(T, X / 6, 0))
    assert normalize(pr[jc.JetVar(0, 1)] + jc.ux(1) / 6) == 0
    assert normalize(pr[jc.JetVar(1, 0)] + jc.JetVar(1, 0).symbol) == 0


def test_prolong_order_limit():
    with pytest.raises(jc.JetOrderError):
        jc.prolong(jc.VectorField(1, 0, 0), 7)


_coeff = st.sampled_from(["0", "1", "t", "x", "u", "t*x", "u^2", "x*u", "e^t", "ln(x)"])


@given(_coeff, _coeff, _coeff, _coeff, _coeff, _coeff)
def test_prolong_linear(a1, b1, c1, a2, b2, c2):
    A = jc.VectorField(parse(a1), parse(b1), parse(c1))
    B = jc.VectorField(parse(a2), parse(b2), parse(c2))
    pa, pb, ps = jc.prolong(A, 3), jc.prolong(B, 3), jc.prolong(A + B, 3)
    for key in ps:
        assert normalize(ps[key] - pa[key] - pb[key]) == 0


# --- invariance criterion -------------------------------------------------------------

def test_time_translation_symmetry():
    assert jc.invariance_residual(jc.VectorField(1, 0, 0)) == 0


def test_case1_scaling_symmetry():
    assert jc.invariance_residual(jc.VectorField(T, X / 6, 0)) == 0


def test_du_not_a_symmetry():
    r = jc.invariance_residual(jc.VectorField(0, 0, 1))
    assert r != 0 and r.has(sx.df1(U))


@pytest.mark.parametrize("case_id", ["arbitrary", "exponential", "power"])
def test_all_listed_generators(case_id):
    case = ls.standard_cases()[case_id]
    for Q in case.generators:
        assert jc.invariance_residual(Q, case.family) == 0, Q.label


@pytest.mark.parametrize("Q,family", ls.NON_SYMMETRIES)
def test_documented_non_symmetries(Q, family):
    assert jc.invariance_residual(Q, family) != 0


# --- determining system ---------------------------------------------------------------

def test_display_contains_classifying_and_third_line(determining):
    eqs = determining.leading + determining.reduced
    assert any(jc.equations_equivalent(e, parse("(tau_t - 6*xi_x)*f(u) + phi*df1(u)")) for e in eqs)
    assert any(jc.equations_equivalent(e, parse("3*phi_xxu - 4*xi_xxx")) for e in eqs)


def test_display_set_reproduced(determining):
    found, leftover = jc.match_display(determining.leading + determining.reduced, jc.display_equations())
    assert found == list(range(len(jc.display_equations())))
    extra = [(determining.leading + determining.reduced)[j] for j in leftover]
    assert all(jc.equations_equivalent(e, jc.classifying_derivative()) for e in extra)


def test_reduces_to_system_7(determining):
    steps = jc.reduce_determining_system(determining.reduced)
    final = steps[-1].remaining
    imposed = {n for s in steps for n in s.imposed} | {s.name for s in determining.leading}
    assert {"tau_x", "tau_u", "xi_u", "phi_uu", "xi_xx", "phi_x", "phi_t", "xi_t"} <= imposed
    cls = parse(jc.CLASSIFYING)
    assert any(jc.equations_equivalent(e, cls) for e in final)
    assert all(jc.equations_equivalent(e, cls) or jc.equations_equivalent(e, jc.classifying_derivative())
               for e in final)


def test_linear_ansatz_leaves_classifying(determining):
    res = jc.linear_ansatz_residuals(determining.raw)
    P = sx.PARAMETERS
    target = (P["c"] - 6 * P["a"]) * sx.f(U) + (P["p"] * U + P["q"]) * sx.df1(U)
    assert any(jc.equations_equivalent(r, target) for r in res)
    deriv = normalize(sp.diff(target, U))
    assert all(jc.equations_equivalent(r, target) or jc.equations_equivalent(r, deriv) for r in res)
