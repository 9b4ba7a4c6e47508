"""Jet-space calculus for u_t = (f(u) u_xxxxx)_x.

Derivative coordinates are plain symbols named ``u_`` followed by the
differentiation letters, time first (``u_t``, ``u_xx``, ``u_txx``). Total
derivatives act on expressions in ``t, x, u``, jet symbols and the opaque
``f``; on the solution manifold every ``u_t x^j`` is replaced by
``D_x^j`` of the flux derivative.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import sympy as sp
from sympy import QQ
from sympy.polys.rings import ring

from . import symexpr as sx
from .symexpr import normalize

T, X, U = sx.VARIABLES["t"], sx.VARIABLES["x"], sx.VARIABLES["u"]

# General symmetry coefficients tau(t,x,u) etc. substituted into the criterion
# produce u_{x^11} after u_t elimination, so the cap sits above the order-7
# needed for point fields with tau = tau(t).
MAX_JET_ORDER = 12
MAX_PROLONGATION = 6


class JetOrderError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class JetVar:
    t_order: int = 0
    x_order: int = 0
    dependent: str = "u"

    def __post_init__(self):
        if self.t_order < 0 or self.x_order < 0:
            raise ValueError("jet orders must be non-negative")
        if self.t_order + self.x_order > MAX_JET_ORDER:
            raise JetOrderError(f"jet order {self.t_order + self.x_order} exceeds {MAX_JET_ORDER}")

    @property
    def order(self) -> int:
        return self.t_order + self.x_order

    @property
    def name(self) -> str:
        if self.order == 0:
            return self.dependent
        return f"{self.dependent}_" + "t" * self.t_order + "x" * self.x_order

    @property
    def symbol(self) -> sp.Symbol:
        if self.order == 0:
            return U
        return sx.jet_symbol(self.name)

    def shifted(self, direction: str) -> "JetVar":
        if direction == "t":
            return JetVar(self.t_order + 1, self.x_order, self.dependent)
        if direction == "x":
            return JetVar(self.t_order, self.x_order + 1, self.dependent)
        raise ValueError(f"unknown direction {direction!r}")

    @classmethod
    def from_symbol(cls, s: sp.Symbol) -> "JetVar | None":
        if s == U:
            return cls(0, 0)
        head, _, tail = s.name.partition("_")
        if head != "u" or not tail or set(tail) - {"t", "x"}:
            return None
        if tail != "t" * tail.count("t") + "x" * tail.count("x"):
            return None
        return cls(tail.count("t"), tail.count("x"))


def ux(k: int) -> sp.Symbol:
    """Symbol for the k-th x-derivative of u (``ux(0)`` is u itself)."""
    return JetVar(0, k).symbol


def jets_in(e: sp.Basic) -> dict[sp.Symbol, JetVar]:
    out = {}
    for s in sp.sympify(e).free_symbols:
        jv = JetVar.from_symbol(s)
        if jv is not None:
            out[s] = jv
    return out


@dataclass(frozen=True)
class VectorField:
    """tau d_t + xi d_x + phi d_u (+ psi d_f for equivalence operators)."""

    tau: sp.Expr = sp.S.Zero
    xi: sp.Expr = sp.S.Zero
    phi: sp.Expr = sp.S.Zero
    psi: sp.Expr | None = None
    label: str = field(default="", compare=False)

    def __post_init__(self):
        for name in ("tau", "xi", "phi"):
            val = sp.sympify(getattr(self, name))
            object.__setattr__(self, name, val)
            bad = [s for s, jv in jets_in(val).items() if jv.order > 0]
            if bad:
                raise ValueError(f"{name} contains jet symbols {bad}")
        if self.psi is not None:
            object.__setattr__(self, "psi", sp.sympify(self.psi))

    @property
    def coefficients(self) -> tuple[sp.Expr, ...]:
        base = (self.tau, self.xi, self.phi)
        return base if self.psi is None else base + (self.psi,)

    def __add__(self, other: "VectorField") -> "VectorField":
        psi = None
        if self.psi is not None or other.psi is not None:
            psi = (self.psi or 0) + (other.psi or 0)
        return VectorField(self.tau + other.tau, self.xi + other.xi, self.phi + other.phi, psi)

    def __neg__(self) -> "VectorField":
        return self.scale(-1)

    def __sub__(self, other: "VectorField") -> "VectorField":
        return self + (-other)

    def scale(self, c) -> "VectorField":
        c = sp.sympify(c)
        psi = None if self.psi is None else c * self.psi
        return VectorField(c * self.tau, c * self.xi, c * self.phi, psi, self.label)

    def __rmul__(self, c) -> "VectorField":
        return self.scale(c)

    def normalized(self) -> "VectorField":
        psi = None if self.psi is None else normalize(self.psi)
        return VectorField(normalize(self.tau), normalize(self.xi), normalize(self.phi), psi, self.label)

    def is_zero(self) -> bool:
        return all(normalize(c) == 0 for c in self.coefficients)

    def __call__(self, g: sp.Expr, fvar: sp.Symbol | None = None) -> sp.Expr:
        """Action on a function of (t, x, u[, f])."""
        out = self.tau * sp.diff(g, T) + self.xi * sp.diff(g, X) + self.phi * sp.diff(g, U)
        if self.psi is not None and fvar is not None:
            out += self.psi * sp.diff(g, fvar)
        return out

    def to_strings(self) -> dict[str, str]:
        d = {"tau": sx.to_string(self.tau), "xi": sx.to_string(self.xi), "phi": sx.to_string(self.phi)}
        if self.psi is not None:
            d["psi"] = sx.to_string(self.psi)
        return d

    def pretty(self) -> str:
        parts = []
        for coeff, dname in zip(self.coefficients, ("d_t", "d_x", "d_u", "d_f")):
            c = normalize(coeff)
            if c == 0:
                continue
            s = sx.to_string(c)
            parts.append(dname if c == 1 else f"({s})*{dname}")
        return " + ".join(parts) if parts else "0"


# --- total derivatives --------------------------------------------------------

def total_derivative(e, direction: str) -> sp.Expr:
    """D_t or D_x of an expression in (t, x, u, jets)."""
    e = sp.sympify(e)
    var = {"t": T, "x": X}.get(direction)
    if var is None:
        raise ValueError(f"direction must be 't' or 'x', got {direction!r}")
    out = sp.diff(e, var)
    for s, jv in jets_in(e).items():
        c = sp.diff(e, s)
        if c != 0:
            out += c * jv.shifted(direction).symbol
    return out


def total_derivative_n(e, direction: str, n: int) -> sp.Expr:
    for _ in range(n):
        e = sp.expand(total_derivative(e, direction))
    return e


def prolong(Q: VectorField, order: int = MAX_PROLONGATION) -> dict[JetVar, sp.Expr]:
    """Prolongation coefficients phi^J for J = t and J = x^k, k = 1..order."""
    if Q.psi is not None:
        raise ValueError("prolong expects a point vector field without psi")
    if order > MAX_PROLONGATION or order < 1:
        raise JetOrderError(f"prolongation order must be in 1..{MAX_PROLONGATION}")
    ut = JetVar(1, 0).symbol
    characteristic = Q.phi - Q.tau * ut - Q.xi * ux(1)
    out = {JetVar(1, 0): sp.expand(total_derivative(characteristic, "t") + Q.tau * JetVar(2, 0).symbol
                                   + Q.xi * JetVar(1, 1).symbol)}
    cur = characteristic
    for k in range(1, order + 1):
        cur = sp.expand(total_derivative(cur, "x"))
        out[JetVar(0, k)] = sp.expand(cur + Q.tau * JetVar(1, k).symbol + Q.xi * ux(k + 1))
    return out


def f_of(family) -> sp.Expr:
    """The nonlinearity as an expression in u (opaque f(u) if unspecified)."""
    if family is None:
        return sx.f(U)
    if isinstance(family, sp.Basic):
        return family
    return family.f


def evolution_rhs(fexpr=None) -> sp.Expr:
    """(f(u) u_xxxxx)_x as an expression in jet symbols."""
    return sp.expand(total_derivative(f_of(fexpr) * ux(5), "x"))


def on_solution(e, fexpr=None) -> sp.Expr:
    """Replace u_t and its x-derivatives by the right-hand side of the PDE."""
    e = sp.sympify(e)
    rhs = evolution_rhs(fexpr)
    reps = {}
    for s, jv in jets_in(e).items():
        if jv.t_order == 0:
            continue
        if jv.t_order > 1:
            raise JetOrderError(f"{s} has time order > 1; not reachable from a point prolongation")
        reps[s] = total_derivative_n(rhs, "x", jv.x_order)
    return e.xreplace(reps)


def criterion(Q: VectorField, fexpr=None) -> sp.Expr:
    """Expanded invariance criterion phi^t - [...] before u_t elimination."""
    fx = f_of(fexpr)
    f1 = sp.diff(fx, U)
    f2 = sp.diff(f1, U)
    pr = prolong(Q, 6)
    rhs = (Q.phi * f2 * ux(1) * ux(5) + f1 * ux(5) * pr[JetVar(0, 1)] + f1 * ux(1) * pr[JetVar(0, 5)]
           + Q.phi * f1 * ux(6) + fx * pr[JetVar(0, 6)])
    return pr[JetVar(1, 0)] - rhs


def invariance_residual(Q: VectorField, family=None) -> sp.Expr:
    """Normalized criterion on the solution manifold; zero iff Q is a symmetry."""
    return normalize(on_solution(criterion(Q, f_of(family)), f_of(family)))


# --- equivalence criterion on the augmented system ---------------------------

F_SYM = sp.Symbol("f")
FU_SYM = sp.Symbol("f_u")


def extended_residual(op: VectorField) -> list[sp.Expr]:
    """Residuals of the infinitesimal criterion for the augmented system
    u_t = f_u u_x u_xxxxx + f u_xxxxxx, f_t = 0, f_x = 0 with f a dependent
    variable on (t, x, u). Coefficients tau, xi, phi depend on (t, x, u),
    psi on (t, x, u, f)."""
    psi = op.psi if op.psi is not None else sp.S.Zero
    point = VectorField(op.tau, op.xi, op.phi)
    pr = prolong(point, 6)
    # prolongation of psi to f_t, f_x, f_u on f_t = f_x = 0
    psi_t = sp.diff(psi, T) - FU_SYM * sp.diff(op.phi, T)
    psi_x = sp.diff(psi, X) - FU_SYM * sp.diff(op.phi, X)
    psi_u = sp.diff(psi, U) + FU_SYM * sp.diff(psi, F_SYM) - FU_SYM * sp.diff(op.phi, U)
    main = pr[JetVar(1, 0)] - (ux(1) * ux(5) * psi_u + FU_SYM * ux(5) * pr[JetVar(0, 1)]
                               + FU_SYM * ux(1) * pr[JetVar(0, 5)] + ux(6) * psi + F_SYM * pr[JetVar(0, 6)])
    rhs = FU_SYM * ux(1) * ux(5) + F_SYM * ux(6)
    main = sp.expand(main)
    mixed = [s for s, jv in jets_in(main).items() if jv.t_order and (jv.x_order or jv.t_order > 1)]
    if mixed:
        raise NotImplementedError(f"augmented criterion with mixed jets {mixed} (tau must depend on t only)")
    main = main.xreplace({JetVar(1, 0).symbol: rhs})
    return [normalize(main), normalize(psi_t), normalize(psi_x)]


# --- determining equations ----------------------------------------------------

_COEFFS = ("tau", "xi", "phi")
_MAXD = 7       # derivative order of the coefficient atoms
_MAXF = 8       # f derivatives generated by D_x^5 of the substituted u_t
_MAXT = 6


def atom_name(g: str, i: int, j: int, k: int) -> str:
    tail = "t" * i + "x" * j + "u" * k
    return g if not tail else f"{g}_{tail}"


def atom_symbol(g: str, i: int, j: int, k: int) -> sp.Symbol:
    return sx.jet_symbol(atom_name(g, i, j, k))


@lru_cache(maxsize=1)
def _jet_ring():
    names = [f"U{k}" for k in range(1, MAX_JET_ORDER + 1)] + [f"T{k}" for k in range(_MAXT + 1)]
    atoms = [(g, i, j, k) for g in _COEFFS for i in range(_MAXD + 1)
             for j in range(_MAXD + 1 - i) for k in range(_MAXD + 1 - i - j)]
    names += [f"{g}_{i}{j}{k}" for g, i, j, k in atoms]
    names += [f"F{k}" for k in range(_MAXF + 1)]
    R, *gens = ring(names, QQ)
    return R, dict(zip(names, gens)), names, atoms


class _Derivation:
    """Total derivatives on the polynomial ring of jets and coefficient atoms."""

    def __init__(self):
        self.R, self.G, self.names, self.atoms = _jet_ring()
        self.gens = [self.G[n] for n in self.names]
        self._img = {"x": {}, "t": {}}
        G = self.G
        for n in self.names:
            kind = n[0]
            if kind == "U":
                k = int(n[1:])
                self._img["x"][n] = G.get(f"U{k + 1}")
                self._img["t"][n] = G.get(f"T{k}")
            elif kind == "T":
                k = int(n[1:])
                self._img["x"][n] = G.get(f"T{k + 1}")
                self._img["t"][n] = None
            elif kind == "F":
                k = int(n[1:])
                nxt = G.get(f"F{k + 1}")
                self._img["x"][n] = None if nxt is None else G["U1"] * nxt
                self._img["t"][n] = None if nxt is None else G["T0"] * nxt
            else:
                g, ijk = n.split("_")
                i, j, k = map(int, ijk)
                up_x, up_u, up_t = (G.get(f"{g}_{i}{j + 1}{k}"), G.get(f"{g}_{i}{j}{k + 1}"),
                                    G.get(f"{g}_{i + 1}{j}{k}"))
                self._img["x"][n] = None if up_x is None or up_u is None else up_x + G["U1"] * up_u
                self._img["t"][n] = None if up_t is None or up_u is None else up_t + G["T0"] * up_u

    def __call__(self, p, direction: str):
        out = self.R.zero
        img = self._img[direction]
        for n, g in zip(self.names, self.gens):
            dp = p.diff(g)
            if not dp:
                continue
            target = img[n]
            if target is None:
                raise JetOrderError(f"total derivative of {n} leaves the truncated jet ring")
            out += dp * target
        return out


def _general_criterion():
    D = _Derivation()
    G = D.G
    tau, xi, phi = G["tau_000"], G["xi_000"], G["phi_000"]
    U1 = G["U1"]
    characteristic = phi - tau * G["T0"] - xi * U1

    def phi_x(k):
        p = characteristic
        for _ in range(k):
            p = D(p, "x")
        return p + tau * G[f"T{k}"] + xi * G[f"U{k + 1}"]

    phi_t = D(phi, "t") - G["T0"] * D(tau, "t") - U1 * D(xi, "t")
    F0, F1, F2 = G["F0"], G["F1"], G["F2"]
    crit = phi_t - (phi * F2 * U1 * G["U5"] + F1 * G["U5"] * phi_x(1) + F1 * U1 * phi_x(5)
                    + phi * F1 * G["U6"] + F0 * phi_x(6))
    subs = [F1 * U1 * G["U5"] + F0 * G["U6"]]
    for _ in range(_MAXT):
        subs.append(D(subs[-1], "x"))
    for j in range(_MAXT, -1, -1):
        crit = crit.compose(G[f"T{j}"], subs[j])
    return D, crit


def _split_by_jets(D: _Derivation, p) -> dict[tuple, object]:
    jet_idx = [D.names.index(f"U{k}") for k in range(1, MAX_JET_ORDER + 1)]
    out: dict[tuple, object] = {}
    for mon, c in p.terms():
        key = tuple(mon[i] for i in jet_idx)
        rest = list(mon)
        for i in jet_idx:
            rest[i] = 0
        out[key] = out.get(key, D.R.zero) + D.R({tuple(rest): c})
    return {k: v for k, v in out.items() if v}


def _ring_to_expr(D: _Derivation, p) -> sp.Expr:
    fs = {0: sx.f(U), 1: sx.df1(U), 2: sx.df2(U)}
    reps = {}
    for n in D.names:
        if n[0] == "F":
            k = int(n[1:])
            reps[n] = fs.get(k, sx.jet_symbol("f_" + "u" * k))
        elif n[0] == "U":
            reps[n] = ux(int(n[1:]))
        elif n[0] == "T":
            reps[n] = JetVar(1, int(n[1:])).symbol
        else:
            g, ijk = n.split("_")
            reps[n] = atom_symbol(g, *map(int, ijk))
    expr = sp.S.Zero
    for mon, c in p.terms():
        term = sp.Rational(c.numerator, c.denominator)
        for n, e in zip(D.names, mon):
            if e:
                term *= reps[n] ** e
        expr += term
    return expr


def _primitive(p):
    """Scale a ring element so that equal equations compare equal."""
    return p.monic() if p else p


@dataclass
class DeterminingSystem:
    """Coefficients of independent jet monomials in the invariance criterion.

    ``raw`` comes from fully general tau, xi, phi(t, x, u). ``leading`` holds
    the single-atom equations found by iterated elimination (the first
    display line), and ``reduced`` the coefficient list once those are imposed.
    """

    raw: list[sp.Expr]
    leading: list[sp.Expr]
    reduced: list[sp.Expr]
    eliminated: list[sp.Symbol]
    _ring: object = field(repr=False, default=None)


def _zero_closure(D: _Derivation, g: str, i: int, j: int, k: int) -> list[str]:
    """The atom g_ijk and every derivative of it present in the ring."""
    return [f"{gg}_{a}{b}{c}" for gg, a, b, c in D.atoms
            if gg == g and a >= i and b >= j and c >= k]


def _single_atom(D: _Derivation, p) -> tuple | None:
    """If p = (atom) * (product of F_k and constants), return the atom."""
    found = None
    for mon, _ in p.terms():
        atoms_here = [(n, e) for n, e in zip(D.names, mon) if e and n[0] not in "F"]
        if len(atoms_here) != 1 or atoms_here[0][1] != 1:
            return None
        if found is None:
            found = atoms_here[0][0]
        elif found != atoms_here[0][0]:
            return None
    if found is None:
        return None
    g, ijk = found.split("_")
    return (g, *map(int, ijk))


def _minimal(atoms: set[tuple]) -> list[tuple]:
    out = []
    for a in atoms:
        if not any(b != a and b[0] == a[0] and all(b[n] <= a[n] for n in (1, 2, 3)) for b in atoms):
            out.append(a)
    return sorted(out)


def extract_determining_system(max_rounds: int = 5) -> DeterminingSystem:
    """Collect the determining equations for general tau, xi, phi(t, x, u).

    Single-atom coefficients (an atom times powers of f and its derivatives)
    are imposed round by round, together with all their derivatives, until
    no new ones appear.
    """
    D, crit = _general_criterion()
    raw_polys = _split_by_jets(D, crit)
    raw = sorted({_primitive(p) for p in raw_polys.values()}, key=lambda p: (len(p), str(p)))
    eliminated: list[tuple] = []
    current = crit
    for _ in range(max_rounds):
        coeffs = {_primitive(p) for p in _split_by_jets(D, current).values()}
        singles = {a for a in (_single_atom(D, p) for p in coeffs) if a is not None}
        new = [a for a in _minimal(singles) if a not in eliminated]
        if not new:
            break
        for a in new:
            eliminated.append(a)
            for n in _zero_closure(D, *a):
                current = current.compose(D.G[n], D.R.zero)
    reduced = sorted({_primitive(p) for p in _split_by_jets(D, current).values()},
                     key=lambda p: (len(p), str(p)))
    elim_syms = [atom_symbol(*a) for a in eliminated]
    return DeterminingSystem(
        raw=[_ring_to_expr(D, p) for p in raw],
        leading=[s for s in elim_syms],
        reduced=[_ring_to_expr(D, p) for p in reduced],
        eliminated=elim_syms,
        _ring=(D, raw_polys, current),
    )


def coefficient_atoms(e: sp.Expr) -> set[sp.Symbol]:
    names = {atom_name(g, i, j, k) for g in _COEFFS for i in range(_MAXD + 1)
             for j in range(_MAXD + 1) for k in range(_MAXD + 1)}
    return {s for s in sp.sympify(e).free_symbols if s.name in names}


def evaluate_atoms(e: sp.Expr, tau, xi, phi) -> sp.Expr:
    """Substitute concrete tau, xi, phi (in t, x, u) into formal derivative atoms."""
    coeffs = {"tau": sp.sympify(tau), "xi": sp.sympify(xi), "phi": sp.sympify(phi)}
    reps = {}
    for s in coefficient_atoms(e):
        g, _, tail = s.name.partition("_")
        val = coeffs[g]
        for letter in tail:
            val = sp.diff(val, {"t": T, "x": X, "u": U}[letter])
        reps[s] = val
    return e.xreplace(reps)


def equations_equivalent(a: sp.Expr, b: sp.Expr) -> bool:
    """True if a = c * f(u)^n * b for a nonzero rational c and integer n.

    Powers of f may be cancelled because f does not vanish on the class.
    """
    a, b = normalize(a), normalize(b)
    if a == 0 or b == 0:
        return a == b
    ratio = normalize(sp.cancel(sp.together(a / b)))
    c, rest = ratio.as_coeff_Mul()
    if not c.is_Rational or c == 0:
        return False
    if rest == 1:
        return True
    fu = sx.f(U)
    base, ex = rest.as_base_exp()
    return base == fu and ex.is_Integer


def match_display(extracted: list[sp.Expr], display: list[sp.Expr]) -> tuple[list[int], list[int]]:
    """Indices of display equations found (up to a constant) and of extracted
    equations left unmatched."""
    found, used = [], set()
    for i, d in enumerate(display):
        for j, e in enumerate(extracted):
            if equations_equivalent(d, e):
                found.append(i)
                used.add(j)
                break
    leftover = [j for j in range(len(extracted)) if j not in used]
    return found, leftover


def jet_monomials(e: sp.Expr) -> dict[tuple, sp.Expr]:
    """Coefficients of e as a polynomial in u_x, ..., u_{x^12}."""
    e = sp.expand(sp.sympify(e))
    gens = [ux(k) for k in range(1, MAX_JET_ORDER + 1) if e.has(ux(k))]
    if not gens:
        return {(): e} if e != 0 else {}
    poly = sp.Poly(e, *gens)
    return {mon: c for mon, c in poly.terms()}



# --- reduction of the determining system -------------------------------------

DISPLAY_SYSTEM = (
    "tau_x", "tau_u", "xi_u", "phi_uu",
    "3*(2*phi_xu - 5*xi_xx)*f(u) + phi_x*df1(u)",
    "(phi_xu - 2*xi_xx)*df1(u)",
    "3*phi_xxu - 4*xi_xxx",
    "(phi_xxu - xi_xxx)*df1(u)",
    "(tau_t - 6*xi_x)*f(u) + phi*df1(u)",
    "4*phi_xxxu - 3*xi_xxxx",
    "phi_xxxxxx*f(u) - phi_t",
    "phi_xxxxx*df1(u) + xi_t + 6*phi_xxxxxu*f(u) - xi_xxxxxx*f(u)",
    "5*phi_xxxxu - 2*xi_xxxxx",
    "(5*phi_xxxxu - xi_xxxxx)*df1(u)",
    "(2*phi_xxxu - xi_xxxx)*df1(u)",
)
"""The twelve-line determining system (first line split into four)."""

CLASSIFYING = "(tau_t - 6*xi_x)*f(u) + phi*df1(u)"

REDUCED_SYSTEM = ("tau_x", "tau_u", "xi_t", "xi_u", "xi_xx", "phi_t", "phi_x", "phi_uu", CLASSIFYING)


def display_equations() -> list[sp.Expr]:
    return [sx.parse(s) for s in DISPLAY_SYSTEM]


def _atom_parts(s: sp.Symbol) -> tuple[str, int, int, int]:
    g, _, tail = s.name.partition("_")
    return g, tail.count("t"), tail.count("x"), tail.count("u")


def _kill(eqs: list[sp.Expr], atoms: list[sp.Symbol]) -> list[sp.Expr]:
    parts = [_atom_parts(a) for a in atoms]
    out = []
    for e in eqs:
        reps = {}
        for s in coefficient_atoms(e):
            g, i, j, k = _atom_parts(s)
            if any(g == pg and i >= pi and j >= pj and k >= pk for pg, pi, pj, pk in parts):
                reps[s] = 0
        e = normalize(e.xreplace(reps))
        if e != 0:
            out.append(e)
    return out


def _single(e: sp.Expr) -> sp.Symbol | None:
    atoms = coefficient_atoms(e)
    if len(atoms) != 1:
        return None
    a = next(iter(atoms))
    if normalize(sp.diff(e, a, 2)) != 0 or normalize(e.xreplace({a: 0})) != 0:
        return None
    return a


def _split_arbitrary(e: sp.Expr) -> list[sp.Expr]:
    """Split an equation with phi linear in u under arbitrary f.

    phi_{..} is written A_{..} u + B_{..}; the functions u^i f^(k)(u) are then
    linearly independent over functions of (t, x).
    """
    reps = {}
    for s in coefficient_atoms(e):
        g, i, j, k = _atom_parts(s)
        if g != "phi":
            continue
        tail = "t" * i + "x" * j
        A = sp.Symbol("A_" + tail if tail else "A")
        B = sp.Symbol("B_" + tail if tail else "B")
        reps[s] = A * U + B if k == 0 else (A if k == 1 else 0)
    e = sp.expand(e.xreplace(reps))
    fs = [sx.f(U), sx.df1(U), sx.df2(U)]
    gens = [U] + [g for g in fs if e.has(g)]
    poly = sp.Poly(e, *gens)
    return [c for c in poly.coeffs() if c != 0]


def _consequence(eqs: list[sp.Expr], target: sp.Symbol) -> bool:
    """Is target = 0 a linear consequence of the (linear, homogeneous) eqs?"""
    syms = sorted(set().union(*[e.free_symbols for e in eqs]) | {target}, key=lambda s: s.name)
    M = sp.Matrix([[sp.diff(e, s) for s in syms] for e in eqs])
    row = sp.Matrix([[1 if s == target else 0 for s in syms]])
    return M.rank() == M.col_join(row).rank()


@dataclass
class ReductionStep:
    description: str
    imposed: list[str]
    remaining: list[sp.Expr]


def reduce_determining_system(reduced: list[sp.Expr]) -> list[ReductionStep]:
    """Replay the argument taking the determining system to system (7).

    1. The first three equations, split under arbitrary f with phi linear in
       u, force phi_xu = xi_xx = 0.
    2. Single-atom equations then give phi_x = 0, and after that phi_t = 0
       and xi_t = 0.
    What is left is the classifying equation and its u-derivative.
    """
    steps = []
    first_three = [sx.parse(s) for s in DISPLAY_SYSTEM[4:7]]
    split = [c for e in first_three for c in _split_arbitrary(e)]
    got = []
    for name, alias in (("phi_xu", "A_x"), ("xi_xx", "xi_xx")):
        if not _consequence(split, sx.sym(alias) if alias.startswith("xi") else sp.Symbol(alias)):
            raise AssertionError(f"{name} = 0 does not follow from the first three equations")
        got.append(name)
    eqs = _kill(reduced, [sx.sym(n) for n in got])
    steps.append(ReductionStep("first three equations (split in f) give", got, eqs))

    while True:
        singles = sorted({a.name for a in (_single(e) for e in eqs) if a is not None})
        if not singles:
            break
        eqs = _kill(eqs, [sx.sym(n) for n in singles])
        steps.append(ReductionStep("single-atom equations give", singles, eqs))
    return steps


def _partial_atoms(e: sp.Expr, letter: str) -> sp.Expr:
    """Partial derivative of an equation in formal atoms w.r.t. t, x or u."""
    out = sp.diff(e, {"t": T, "x": X, "u": U}[letter])
    for s in coefficient_atoms(e):
        g, i, j, k = _atom_parts(s)
        i, j, k = i + (letter == "t"), j + (letter == "x"), k + (letter == "u")
        out += sp.diff(e, s) * atom_symbol(g, i, j, k)
    return out


def classifying_derivative() -> sp.Expr:
    """u-derivative of the classifying equation, using tau_u = xi_u = 0."""
    d = _partial_atoms(sx.parse(CLASSIFYING), "u")
    return normalize(d.subs({sx.sym("tau_tu"): 0, sx.sym("xi_xu"): 0}))


def linear_ansatz_residuals(raw: list[sp.Expr]) -> list[sp.Expr]:
    """Raw coefficients evaluated at tau = ct+d, xi = ax+b, phi = pu+q; zeros dropped."""
    P = sx.PARAMETERS
    tau = P["c"] * T + P["d"]
    xi = P["a"] * X + P["b"]
    phi = P["p"] * U + P["q"]
    out = []
    for e in raw:
        r = normalize(evaluate_atoms(e, tau, xi, phi))
        if r != 0:
            out.append(r)
    return out
