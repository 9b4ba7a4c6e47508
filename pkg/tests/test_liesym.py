from __future__ import annotations

import json

import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st

from thinfilm import jetcalc as jc
from thinfilm import liesym as ls
from thinfilm import symexpr as sx
from thinfilm.symexpr import normalize, parse

T, X, U = jc.T, jc.X, jc.U
LAM, M, ALPHA = ls.LAMBDA, ls.M, ls.ALPHA


@pytest.fixture(scope="module")
def cases():
    return ls.standard_cases()


# --- families -----------------------------------------------------------------

def test_family_admissibility():
    with pytest.raises(ls.InadmissibleFamily):
        ls.NonlinearityFamily("exponential", param=0)
    with pytest.raises(ls.InadmissibleFamily):
        ls.NonlinearityFamily("power", param=0)
    with pytest.raises(ls.InadmissibleFamily):
        ls.NonlinearityFamily("explicit", expr=parse("x + 1"))
    with pytest.raises(ls.InadmissibleFamily):
        ls.parse_family("cubic:m=2")


def test_parse_family_round_trip():
    for spec in ("arbitrary", "exp:lambda=2", "power:m=3", "power:m=1/2,C=4", "explicit:u*e^(-u)"):
        fam = ls.parse_family(spec)
        assert ls.families_equal(fam, ls.parse_family(fam.describe()))


# --- classification -------------------------------------------------------------

def test_arbitrary_generators(cases):
    gens = cases["arbitrary"].generators
    assert [g.coefficients for g in gens] == [(1, 0, 0), (0, 1, 0), (T, X / 6, 0)]


def test_exponential_q1(cases):
    Q1 = cases["exponential"].generators[0]
    assert (Q1.tau, Q1.xi, normalize(Q1.phi - 1 / LAM)) == (-T, 0, 0)


def test_power_generators(cases):
    Q1, Q2, Q3, Q4 = cases["power"].generators
    assert normalize(Q1.phi - U / M) == 0 and Q1.tau == -T
    assert normalize(Q3.phi + 6 * U / M) == 0 and Q3.xi == -X


@pytest.mark.parametrize("spec,count", [("power:m=3", 4), ("exp:lambda=2", 4), ("arbitrary", 3),
                                        ("explicit:u*e^(-u)", 3), ("explicit:(u+1)^3", 4),
                                        ("explicit:e^(2*u)", 4)])
def test_classify_counts_and_residuals(spec, count):
    fam = ls.parse_family(spec)
    case = ls.classify(fam)
    assert len(case.generators) == count
    for Q in case.generators:
        assert jc.invariance_residual(Q, fam) == 0


def test_linear_ansatz_nullspace_rejects_parameters():
    with pytest.raises(ls.InadmissibleFamily):
        ls.linear_ansatz_nullspace(parse("u^m"))


# --- commutators ----------------------------------------------------------------

def test_translations_commute():
    assert ls.commutator(jc.VectorField(1, 0, 0), jc.VectorField(0, 1, 0)).is_zero()


def test_case1_table(cases):
    c = cases["arbitrary"]
    Q1, Q2, Q3 = c.generators
    assert (ls.commutator(Q1, Q3) - Q1).is_zero()
    assert (ls.commutator(Q2, Q3) - Q2.scale(sp.Rational(1, 6))).is_zero()
    assert ls.commutator(Q1, Q2).is_zero()
    assert c.commutator_table[1][2] == (0, sp.Rational(1, 6), 0)


def test_case2_eq16(cases):
    Q1, Q2, Q3, Q4 = cases["exponential"].generators
    assert (ls.commutator(Q1, Q2) - Q2).is_zero()
    assert (ls.commutator(Q3, Q4) - Q4).is_zero()


def test_cases_2_and_3_share_table(cases):
    assert cases["exponential"].commutator_table == cases["power"].commutator_table


@pytest.mark.parametrize("case_id", ["arbitrary", "exponential", "power"])
def test_jacobi(cases, case_id):
    assert ls.jacobi_holds(cases[case_id].generators)


def test_structure_constants_rebuild_brackets(cases):
    c = cases["power"]
    for i in range(1, 5):
        for j in range(1, 5):
            assert (c.bracket(i, j) - ls.commutator(c.generators[i - 1], c.generators[j - 1])).is_zero()


# --- optimal systems -------------------------------------------------------------

def test_optimal_system_sizes(cases):
    assert len(ls.optimal_system(cases["arbitrary"])) == 4
    assert ls.optimal_system(cases["arbitrary"])[-1].label == "Q1+alpha*Q2"
    assert len(ls.optimal_system(cases["exponential"])) == 7
    assert len(ls.optimal_system(cases["power"])) == 7


@pytest.mark.parametrize("case_id", ["arbitrary", "exponential", "power"])
def test_optimal_system_elements_are_symmetries(cases, case_id):
    case = cases[case_id]
    for V in ls.optimal_system(case):
        assert jc.invariance_residual(V, case.family) == 0, V.label


# --- equivalence ------------------------------------------------------------------

def test_equivalence_algebra_contents():
    ops = {op.label: op for op in ls.equivalence_algebra()}
    assert len(ops) == 6
    assert normalize(ops["t d_t - f d_f"].psi + jc.F_SYM) == 0
    assert normalize(ops["x d_x + 6 f d_f"].psi - 6 * jc.F_SYM) == 0


@pytest.mark.parametrize("op", ls.equivalence_algebra(), ids=lambda o: o.label)
def test_extended_criterion(op):
    assert all(r == 0 for r in jc.extended_residual(op))


def test_identity_transform():
    for fam in (ls.NonlinearityFamily("power"), ls.NonlinearityFamily("exponential"),
                ls.parse_family("explicit:u*e^(-u)")):
        assert ls.families_equal(ls.apply_equivalence(ls.EquivalenceTransform(), fam), fam)


def test_power_scaling_example():
    # eps5 = 2 with eps1 = eps2 = eps3 = 0 and eps4 = eps6 = 1
    out = ls.apply_equivalence(ls.EquivalenceTransform(eps5=2), ls.NonlinearityFamily("power"))
    assert out.kind == "power" and out.param == M and out.coeff == 64


def test_power_rejects_u_translation():
    with pytest.raises(ls.FormBreakingTransform):
        ls.apply_equivalence(ls.EquivalenceTransform(eps3=1), ls.NonlinearityFamily("power", param=2))


def test_transform_rejects_zero_scales():
    for key in ("eps4", "eps5", "eps6"):
        with pytest.raises(ValueError):
            ls.EquivalenceTransform(**{key: 0})


def test_pde_form_preserved_symbolically():
    e = ls.EPS
    pos6 = sp.Symbol("eps6", positive=True)
    T_sym = ls.EquivalenceTransform(*e)
    assert ls.transformed_pde_residual(T_sym, ls.NonlinearityFamily("arbitrary")) == 0
    T_pow = ls.EquivalenceTransform(e[0], e[1], 0, e[3], e[4], pos6)
    assert ls.transformed_pde_residual(T_pow, ls.NonlinearityFamily("power")) == 0
    assert ls.transformed_pde_residual(T_sym, ls.parse_family("explicit:u*e^(-u)")) == 0
    T_num = ls.EquivalenceTransform(1, -2, sp.Rational(1, 3), 2, sp.Rational(1, 2), 3)
    assert ls.transformed_pde_residual(T_num, ls.NonlinearityFamily("exponential")) == 0


_eps = st.fractions(min_value=-3, max_value=3, max_denominator=5)
_nz = _eps.filter(lambda q: q != 0)
_pos = st.fractions(min_value="1/5", max_value=3, max_denominator=5)


@given(_eps, _eps, _nz, _nz, _pos, _eps, _eps, _nz, _nz, _pos)
def test_group_action(a1, a2, a4, a5, a6, b1, b2, b4, b5, b6):
    A = ls.EquivalenceTransform(a1, a2, 0, a4, a5, a6)
    B = ls.EquivalenceTransform(b1, b2, 0, b4, b5, b6)
    fam = ls.NonlinearityFamily("power", param=sp.Rational(3, 2))
    lhs = ls.apply_equivalence(B, ls.apply_equivalence(A, fam))
    rhs = ls.apply_equivalence(B.compose(A), fam)
    assert ls.families_equal(lhs, rhs)
    pt = (sp.Rational(1, 3), 2, 5, 7)
    assert B.apply_point(*A.apply_point(*pt)) == B.compose(A).apply_point(*pt)
    ident = A.compose(A.inverse())
    assert ident.params == (0, 0, 0, 1, 1, 1)


def test_catalog_json_deterministic():
    a, b = ls.catalog_json(), ls.catalog_json()
    assert a == b
    data = json.loads(a)
    assert set(data) == {"arbitrary", "exponential", "power"}
    assert data["arbitrary"]["algebra"] == "A_{3,5}^{1/6}"
