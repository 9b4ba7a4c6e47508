"""Symmetry catalog for u_t = (f(u) u_xxxxx)_x.

Nonlinearity families, their symmetry algebras, commutator tables, the
equivalence algebra with its finite transformations, and the optimal systems
of one-dimensional subalgebras used for reductions.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import mpmath
import sympy as sp

from . import jetcalc as jc
from . import symexpr as sx
from .jetcalc import VectorField
from .symexpr import normalize

T, X, U = jc.T, jc.X, jc.U
LAMBDA = sx.PARAMETERS["lambda"]
M = sx.PARAMETERS["m"]
ALPHA = sx.PARAMETERS["alpha"]

KINDS = ("arbitrary", "exponential", "power", "explicit")


class InadmissibleFamily(ValueError):
    pass


class FormBreakingTransform(ValueError):
    pass


@dataclass(frozen=True)
class NonlinearityFamily:
    """f(u) of a given kind.

    ``param`` is lambda for the exponential kind and m for the power kind
    (symbolic by default); ``coeff`` multiplies the exponential and power
    forms; ``expr`` holds the explicit f as an expression in u.
    """

    kind: str = "arbitrary"
    param: sp.Expr | None = None
    expr: sp.Expr | None = None
    coeff: sp.Expr = sp.S.One

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InadmissibleFamily(f"unknown family kind {self.kind!r}")
        object.__setattr__(self, "coeff", sp.sympify(self.coeff))
        if self.coeff == 0:
            raise InadmissibleFamily("multiplicative constant must be nonzero")
        if self.kind == "exponential":
            p = LAMBDA if self.param is None else sp.sympify(self.param)
            if p == 0:
                raise InadmissibleFamily("exponential family requires lambda != 0")
            object.__setattr__(self, "param", p)
        elif self.kind == "power":
            p = M if self.param is None else sp.sympify(self.param)
            if p == 0:
                raise InadmissibleFamily("power family requires m != 0 (otherwise the equation is linear)")
            object.__setattr__(self, "param", p)
        elif self.kind == "explicit":
            if self.expr is None:
                raise InadmissibleFamily("explicit family needs an expression in u")
            e = sx.parse(self.expr) if isinstance(self.expr, str) else sp.sympify(self.expr)
            if U not in e.free_symbols or normalize(sp.diff(e, U)) == 0:
                raise InadmissibleFamily("explicit f must satisfy f_u != 0")
            object.__setattr__(self, "expr", e)

    @property
    def f(self) -> sp.Expr:
        if self.kind == "arbitrary":
            return sx.f(U)
        if self.kind == "exponential":
            return self.coeff * sp.exp(self.param * U)
        if self.kind == "power":
            return self.coeff * U ** self.param
        return self.expr

    def describe(self) -> str:
        if self.kind == "arbitrary":
            return "arbitrary"
        if self.kind == "explicit":
            return f"explicit:{sx.to_string(self.expr)}"
        name = "lambda" if self.kind == "exponential" else "m"
        tag = "exp" if self.kind == "exponential" else "power"
        s = f"{tag}:{name}={sx.to_string(self.param)}"
        if self.coeff != 1:
            s += f",C={sx.to_string(self.coeff)}"
        return s


def parse_family(spec: str) -> NonlinearityFamily:
    """Parse 'arbitrary', 'exp:lambda=2', 'power:m=3' or 'explicit:u*e^(-u)'."""
    head, _, rest = spec.strip().partition(":")
    head = head.lower()
    if head == "arbitrary":
        return NonlinearityFamily("arbitrary")
    if head == "explicit":
        return NonlinearityFamily("explicit", expr=sx.parse(rest))
    kind = {"exp": "exponential", "exponential": "exponential", "power": "power"}.get(head)
    if kind is None:
        raise InadmissibleFamily(f"unknown family spec {spec!r}")
    param, coeff = None, sp.S.One
    for item in filter(None, (s.strip() for s in rest.split(","))):
        key, _, val = item.partition("=")
        if key in ("lambda", "m"):
            param = sx.parse(val)
        elif key == "C":
            coeff = sx.parse(val)
        else:
            raise InadmissibleFamily(f"unknown family parameter {key!r}")
    return NonlinearityFamily(kind, param=param, coeff=coeff)


# --- commutators ----------------------------------------------------------------

def commutator(A: VectorField, B: VectorField) -> VectorField:
    """[A, B] with components A(B_i) - B(A_i)."""
    fvar = jc.F_SYM if (A.psi is not None or B.psi is not None) else None
    a = A.coefficients if fvar is None else (A.tau, A.xi, A.phi, A.psi or 0)
    b = B.coefficients if fvar is None else (B.tau, B.xi, B.phi, B.psi or 0)
    comps = [normalize(A(bi, fvar) - B(ai, fvar)) for ai, bi in zip(a, b)]
    psi = comps[3] if fvar is not None else None
    return VectorField(comps[0], comps[1], comps[2], psi)


def decompose(V: VectorField, basis: list[VectorField]) -> tuple[sp.Expr, ...]:
    """Constant coefficients c with V = sum c_i basis_i; ValueError if V is not in the span."""
    cs = sp.symbols(f"c_0:{len(basis)}")
    with_psi = V.psi is not None or any(B.psi is not None for B in basis)
    n = 4 if with_psi else 3
    gens = [T, X, U] + ([jc.F_SYM] if with_psi else [])
    eqs = []
    for i in range(n):
        comp = lambda W: ((W.tau, W.xi, W.phi, W.psi or 0)[i])
        expr = sp.expand(sum(c * comp(B) for c, B in zip(cs, basis)) - comp(V))
        if expr == 0:
            continue
        expr = sp.expand(sp.together(expr))
        num = sp.numer(sp.together(expr))
        eqs.extend(sp.Poly(num, *gens).coeffs())
    sol = sp.linsolve(eqs, cs)
    if not sol:
        raise ValueError(f"{V.pretty()} is not in the span of the basis")
    (vals,) = sol
    vals = tuple(sp.simplify(v) for v in vals)
    if any(v.free_symbols & set(cs) for v in vals):
        raise ValueError("basis is linearly dependent")
    return vals


def structure_constants(gens: list[VectorField]) -> list[list[tuple[sp.Expr, ...]]]:
    """C[i][j] = coefficients of [Q_i, Q_j] in the basis gens."""
    n = len(gens)
    table = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            if j < i:
                table[i][j] = tuple(-c for c in table[j][i])
            else:
                table[i][j] = decompose(commutator(gens[i], gens[j]), gens)
    return table


def jacobi_holds(gens: list[VectorField]) -> bool:
    for A, B, C in itertools.combinations(gens, 3):
        cyc = (commutator(commutator(A, B), C) + commutator(commutator(B, C), A)
               + commutator(commutator(C, A), B))
        if not cyc.is_zero():
            return False
    return True


# --- classification -----------------------------------------------------------

def _vf(tau=0, xi=0, phi=0, label="") -> VectorField:
    return VectorField(sp.sympify(tau), sp.sympify(xi), sp.sympify(phi), label=label)


@dataclass
class ClassificationCase:
    family: NonlinearityFamily
    generators: list[VectorField]
    algebra_name: str
    commutator_table: list[list[tuple[sp.Expr, ...]]] = field(default_factory=list)
    case_id: str = ""

    def __post_init__(self):
        if not self.commutator_table:
            self.commutator_table = structure_constants(self.generators)

    def bracket(self, i: int, j: int) -> VectorField:
        """[Q_i, Q_j] rebuilt from the table (1-based indices)."""
        coeffs = self.commutator_table[i - 1][j - 1]
        out = _vf()
        for c, Q in zip(coeffs, self.generators):
            if c != 0:
                out = out + c * Q
        return out.normalized()

    def to_dict(self) -> dict:
        return {
            "case": self.case_id,
            "family": self.family.describe(),
            "algebra": self.algebra_name,
            "generators": [{"label": Q.label, **Q.to_strings()} for Q in self.generators],
            "commutators": [[[sx.to_string(c) for c in row_ij] for row_ij in row] for row in self.commutator_table],
        }


def _case_generators(kind: str, param=None) -> list[VectorField]:
    if kind == "arbitrary":
        return [_vf(tau=1, label="Q1"), _vf(xi=1, label="Q2"),
                _vf(tau=T, xi=X / 6, label="Q3")]
    if kind == "exponential":
        lam = param
        return [_vf(tau=-T, phi=1 / lam, label="Q1"), _vf(tau=1, label="Q2"),
                _vf(xi=-X, phi=-6 / lam, label="Q3"), _vf(xi=1, label="Q4")]
    m = param
    return [_vf(tau=-T, phi=U / m, label="Q1"), _vf(tau=1, label="Q2"),
            _vf(xi=-X, phi=-6 * U / m, label="Q3"), _vf(xi=1, label="Q4")]


def linear_ansatz_nullspace(fexpr: sp.Expr, n_samples: int = 12) -> list[tuple[sp.Expr, sp.Expr, sp.Expr]]:
    """Constant vectors (kappa, p, q) with kappa f + (p u + q) f' = 0 identically.

    kappa = c - 6a in the linear solution tau = c t + d, xi = a x + b, phi = p u + q.
    The null space is found from high-precision samples, rounded to exact
    numbers and then confirmed symbolically.
    """
    extra = {s for s in fexpr.free_symbols if s != U}
    if extra:
        raise InadmissibleFamily(f"bind all parameters of f first, found {sorted(map(str, extra))}")
    f1 = sp.diff(fexpr, U)
    funcs = [sp.lambdify(U, g, "mpmath") for g in (fexpr, U * f1, f1)]
    with mpmath.workdps(50):
        pts = [mpmath.mpf(3) / 10 + mpmath.mpf(k) / 5 for k in range(n_samples)]
        A = mpmath.matrix([[fn(p) for fn in funcs] for p in pts])
        _, S, V = mpmath.svd_r(A)
        smax = max(abs(s) for s in S)
        null = [V[i, :] for i in range(3) if i >= len(S) or abs(S[i]) < mpmath.mpf(10) ** -30 * smax]
    out = []
    for row in null:
        vec = [sp.nsimplify(float(row[j]), rational=False, tolerance=1e-12) for j in range(3)]
        piv = next(c for c in vec if c != 0)
        vec = [sp.nsimplify(c / piv) for c in vec]
        kappa, p, q = vec
        if normalize(kappa * fexpr + (p * U + q) * f1) != 0:
            raise ArithmeticError("numeric null vector failed symbolic confirmation")
        out.append((kappa, p, q))
    return out


def classify(family: NonlinearityFamily) -> ClassificationCase:
    """Symmetry algebra of u_t = (f u_xxxxx)_x for the given family."""
    if family.kind == "arbitrary":
        return ClassificationCase(family, _case_generators("arbitrary"), "A_{3,5}^{1/6}", case_id="arbitrary")
    if family.kind in ("exponential", "power"):
        return ClassificationCase(family, _case_generators(family.kind, family.param), "2A_2",
                                  case_id=family.kind)
    gens = _case_generators("arbitrary")
    for kappa, p, q in linear_ansatz_nullspace(family.f):
        if p == 0 and q == 0:
            continue
        gens.append(_vf(tau=kappa * T, phi=p * U + q, label=f"Q{len(gens) + 1}"))
    name = "A_{3,5}^{1/6}" if len(gens) == 3 else f"{len(gens)}-dimensional"
    return ClassificationCase(family, gens, name, case_id="explicit")


def standard_cases() -> dict[str, ClassificationCase]:
    return {
        "arbitrary": classify(NonlinearityFamily("arbitrary")),
        "exponential": classify(NonlinearityFamily("exponential")),
        "power": classify(NonlinearityFamily("power")),
    }


NON_SYMMETRIES = (
    (_vf(phi=1, label="d_u"), NonlinearityFamily("arbitrary")),
    (_vf(xi=X, label="x d_x"), NonlinearityFamily("power")),
    (_vf(tau=T, label="t d_t"), NonlinearityFamily("exponential")),
)


# --- optimal systems ------------------------------------------------------------

def optimal_system(case: ClassificationCase, alpha=ALPHA) -> list[VectorField]:
    """One-dimensional optimal system as listed for the case (alpha symbolic by default)."""
    Q = case.generators
    if case.case_id == "arbitrary":
        out = [Q[0], Q[1], Q[2], Q[0] + alpha * Q[1]]
        labels = ["Q1", "Q2", "Q3", "Q1+alpha*Q2"]
    elif case.case_id in ("exponential", "power"):
        out = [Q[1], Q[2], Q[3], Q[0] + alpha * Q[2], Q[0] + alpha * Q[3],
               Q[1] + alpha * Q[3], Q[1] + alpha * Q[2]]
        labels = ["Q2", "Q3", "Q4", "Q1+alpha*Q3", "Q1+alpha*Q4", "Q2+alpha*Q4", "Q2+alpha*Q3"]
    else:
        raise ValueError("optimal systems are listed only for the three classified cases")
    return [VectorField(V.tau, V.xi, V.phi, label=lab).normalized() for V, lab in zip(out, labels)]


# --- equivalence algebra and transformations -------------------------------------

def equivalence_algebra() -> list[VectorField]:
    Fs = jc.F_SYM
    z = sp.S.Zero
    return [
        VectorField(1, 0, 0, z, label="d_t"),
        VectorField(0, 1, 0, z, label="d_x"),
        VectorField(0, 0, 1, z, label="d_u"),
        VectorField(T, 0, 0, -Fs, label="t d_t - f d_f"),
        VectorField(0, X, 0, 6 * Fs, label="x d_x + 6 f d_f"),
        VectorField(0, 0, U, z, label="u d_u"),
    ]


EPS = tuple(sx.PARAMETERS[f"eps{i}"] for i in range(1, 7))


@dataclass(frozen=True)
class EquivalenceTransform:
    """t~ = e4 t + e1, x~ = e5 x + e2, u~ = e6 u + e3, f~ = f e5^6 / e4."""

    eps1: sp.Expr = sp.S.Zero
    eps2: sp.Expr = sp.S.Zero
    eps3: sp.Expr = sp.S.Zero
    eps4: sp.Expr = sp.S.One
    eps5: sp.Expr = sp.S.One
    eps6: sp.Expr = sp.S.One

    def __post_init__(self):
        for name in ("eps1", "eps2", "eps3", "eps4", "eps5", "eps6"):
            object.__setattr__(self, name, sp.nsimplify(sp.sympify(getattr(self, name))))
        for name in ("eps4", "eps5", "eps6"):
            if getattr(self, name) == 0:
                raise ValueError(f"{name} must be nonzero")

    @classmethod
    def symbolic(cls) -> "EquivalenceTransform":
        return cls(*EPS)

    @property
    def params(self) -> tuple[sp.Expr, ...]:
        return (self.eps1, self.eps2, self.eps3, self.eps4, self.eps5, self.eps6)

    @property
    def f_factor(self) -> sp.Expr:
        return self.eps5 ** 6 / self.eps4

    def apply_point(self, t, x, u, fval):
        return (self.eps4 * t + self.eps1, self.eps5 * x + self.eps2,
                self.eps6 * u + self.eps3, fval * self.f_factor)

    def compose(self, first: "EquivalenceTransform") -> "EquivalenceTransform":
        """self after first."""
        return EquivalenceTransform(
            self.eps4 * first.eps1 + self.eps1,
            self.eps5 * first.eps2 + self.eps2,
            self.eps6 * first.eps3 + self.eps3,
            self.eps4 * first.eps4,
            self.eps5 * first.eps5,
            self.eps6 * first.eps6,
        )

    def inverse(self) -> "EquivalenceTransform":
        e1, e2, e3, e4, e5, e6 = self.params
        return EquivalenceTransform(-e1 / e4, -e2 / e5, -e3 / e6, 1 / e4, 1 / e5, 1 / e6)


def apply_equivalence(T_: EquivalenceTransform, family: NonlinearityFamily) -> NonlinearityFamily:
    """Family of f~(u~) = f(u) e5^6/e4 with u = (u~ - e3)/e6."""
    k = T_.f_factor
    if family.kind == "arbitrary":
        return family
    if family.kind == "exponential":
        lam = family.param
        coeff = normalize(family.coeff * k * sp.exp(-lam * T_.eps3 / T_.eps6))
        return NonlinearityFamily("exponential", param=normalize(lam / T_.eps6), coeff=coeff)
    if family.kind == "power":
        if T_.eps3 != 0:
            raise FormBreakingTransform("a translation in u (eps3 != 0) does not preserve f = C u^m")
        m = family.param
        e6 = T_.eps6
        if not (e6.is_positive or (m.is_integer)):
            raise FormBreakingTransform("eps6 must be positive for a non-integer power m")
        return NonlinearityFamily("power", param=m, coeff=normalize(family.coeff * k * e6 ** (-m)))
    g = family.expr.xreplace({U: (U - T_.eps3) / T_.eps6})
    return NonlinearityFamily("explicit", expr=normalize(g * k))


def _u_of(tt, xx):
    return sp.Function("U")(tt, xx)


def transformed_pde_residual(T_: EquivalenceTransform, family: NonlinearityFamily) -> sp.Expr:
    """Residual of u~_t~ - (f~(u~) u~_x~x~x~x~x~)_x~ for u~ = e6 u + e3 pulled back to (t, x).

    f~ comes from apply_equivalence; u is a generic solution, so after the
    chain rule and u_t elimination the result must normalize to zero.
    """
    new = apply_equivalence(T_, family)
    tt, xx = sp.symbols("tt xx", real=True)
    e1, e2, e3, e4, e5, e6 = T_.params
    Uf = sp.Function("U")
    uu = e6 * Uf((tt - e1) / e4, (xx - e2) / e5) + e3
    ft = new.f.xreplace({U: uu}) if new.kind != "arbitrary" else k_arbitrary(T_, uu)
    res = sp.diff(uu, tt) - sp.diff(ft * sp.diff(uu, xx, 5), xx)
    res = sp.expand(res.subs({tt: e4 * T + e1, xx: e5 * X + e2})).doit()
    # map U and its derivatives to jet symbols
    reps = {}
    for d in res.atoms(sp.Derivative):
        counts = dict(d.variable_count)
        reps[d] = jc.JetVar(int(counts.get(T, 0)), int(counts.get(X, 0))).symbol
    res = res.xreplace(reps).xreplace({Uf(T, X): U})
    return normalize(jc.on_solution(sp.expand(res), family.f))


def k_arbitrary(T_: EquivalenceTransform, uu) -> sp.Expr:
    # f~(w) = f((w - e3)/e6) e5^6/e4 for an opaque f
    return sx.f(sp.expand((uu - T_.eps3) / T_.eps6)) * T_.f_factor


def families_equal(a: NonlinearityFamily, b: NonlinearityFamily) -> bool:
    if a.kind != b.kind:
        return False
    return normalize(a.f - b.f) == 0


# --- serialization --------------------------------------------------------------

def catalog_json(cases: dict[str, ClassificationCase] | None = None) -> str:
    cases = cases or standard_cases()
    return json.dumps({k: c.to_dict() for k, c in cases.items()}, indent=2, sort_keys=True)
