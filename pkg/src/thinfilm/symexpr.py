"""Symbolic expression core.

Expressions are sympy trees restricted to a rational-exponential-logarithmic
class: rational constants, parameter and variable symbols, jet symbols such as
``u_xxxxx``, the opaque nonlinearity ``f`` with derivatives ``df1``/``df2``,
sums, products, powers with symbolic exponents, ``e^(.)`` and ``ln(.)``.

This module adds what sympy does not decide for us:

* a small text grammar (:func:`parse` / :func:`to_string`), documented in
  ``docs/grammar.md``;
* a canonical :func:`normalize` strong enough that identities in the class
  reduce to the literal ``0`` tree;
* a deterministic float evaluator (:func:`eval_numeric`) that walks the tree
  with :mod:`math` and is used as an independent zero test.

Variables ``t, x, u, y, v`` (and the chained ``x1, u1, x2, u2``) are declared
positive, parameters real. The positivity matches the sampling box used by
:func:`probably_zero` and is what lets ``(t**a)**b`` collapse to ``t**(a*b)``.
"""

from __future__ import annotations

import math
import random
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping

import sympy as sp

Expr = sp.Expr

__all__ = [
    "Expr", "ExprSyntaxError", "UnknownIdentifier", "UnsupportedExpression",
    "EvaluationError", "ParameterTable", "f", "df1", "df2", "parse",
    "to_string", "normalize", "diff", "substitute", "eval_numeric",
    "probably_zero", "is_zero", "sym", "jet_symbol", "VARIABLES", "PARAMETERS",
]


class ExprSyntaxError(ValueError):
    def __init__(self, message: str, position: int, text: str = ""):
        super().__init__(f"{message} at position {position}" + (f" in {text!r}" if text else ""))
        self.position = position


class UnknownIdentifier(ValueError):
    pass


class UnsupportedExpression(ValueError):
    """Construct outside the supported expression class."""


class EvaluationError(ArithmeticError):
    pass


# --- opaque nonlinearity -------------------------------------------------------

class _Opaque(sp.Function):
    nargs = 1
    order = 0

    @classmethod
    def eval(cls, arg):
        if arg.atoms(_Opaque):
            raise UnsupportedExpression(f"nested opaque application {cls.__name__}({arg})")
        return None


class df2(_Opaque):
    """f''(arg)."""
    order = 2

    def fdiff(self, argindex=1):
        raise UnsupportedExpression("derivatives of f beyond order 2 are not supported")


class df1(_Opaque):
    """f'(arg)."""
    order = 1

    def fdiff(self, argindex=1):
        return df2(self.args[0])


class f(_Opaque):
    """The arbitrary nonlinearity f(arg)."""
    order = 0

    def fdiff(self, argindex=1):
        return df1(self.args[0])


OPAQUE = {"f": f, "df1": df1, "df2": df2}

# --- symbols ------------------------------------------------------------------

_VAR_NAMES = ("t", "x", "u", "y", "v", "x1", "u1", "x2", "u2", "s")
_PARAM_NAMES = (
    "m", "lambda", "alpha", "k", "k1", "k2", "a", "b", "c", "d", "p", "q",
    "c0", "c1", "c2", "c3", "c4", "c5", "c6",
    "eps1", "eps2", "eps3", "eps4", "eps5", "eps6", "t0", "x0",
)

VARIABLES: dict[str, sp.Symbol] = {n: sp.Symbol(n, positive=True) for n in _VAR_NAMES}
PARAMETERS: dict[str, sp.Symbol] = {n: sp.Symbol(n, real=True) for n in _PARAM_NAMES}
_NONZERO = ("m", "lambda", "eps4", "eps5", "eps6")

_jet_cache: dict[str, sp.Symbol] = {}


def jet_symbol(name: str) -> sp.Symbol:
    """Symbol for a derivative coordinate, e.g. ``u_xxxxx`` or ``u_tx``."""
    if name not in _jet_cache:
        _jet_cache[name] = sp.Symbol(name)
    return _jet_cache[name]


def _is_jet_name(name: str) -> bool:
    head, _, tail = name.partition("_")
    if head in ("tau", "xi", "phi"):
        # formal partial derivatives of symmetry coefficients, e.g. phi_xxu
        return bool(re.fullmatch(r"t*x*u*", tail))
    if not tail or head not in ("u", "v", "u1", "u2"):
        return False
    if head == "u":
        return bool(re.fullmatch(r"t*x*", tail))
    if head == "v":
        return bool(re.fullmatch(r"y+", tail))
    # chained ODE unknowns: u1_x1x1, u2_x2x2x2
    var = "x1" if head == "u1" else "x2"
    return bool(re.fullmatch(f"({var})+", tail))


def sym(name: str) -> sp.Symbol:
    """Look up a declared variable, parameter or jet symbol by name."""
    if name in VARIABLES:
        return VARIABLES[name]
    if name in PARAMETERS:
        return PARAMETERS[name]
    if name in ("tau", "xi", "phi") or _is_jet_name(name):
        return jet_symbol(name)
    raise UnknownIdentifier(name)


# --- parameter table ----------------------------------------------------------

@dataclass
class ParameterTable:
    """Bindings of parameter symbols to exact rationals or floats."""

    bindings: dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        items = dict(self.bindings)
        self.bindings = {}
        for k, v in items.items():
            self.bind(k, v)

    def bind(self, name: str, value) -> "ParameterTable":
        if name not in PARAMETERS:
            raise UnknownIdentifier(name)
        if isinstance(value, str):
            value = Fraction(value)
        if name in _NONZERO and value == 0:
            raise ValueError(f"inadmissible binding: {name} must be nonzero")
        self.bindings[name] = value
        return self

    def as_subs(self) -> dict[sp.Symbol, sp.Expr]:
        out = {}
        for k, v in self.bindings.items():
            if isinstance(v, Fraction):
                out[PARAMETERS[k]] = sp.Rational(v.numerator, v.denominator)
            else:
                out[PARAMETERS[k]] = sp.sympify(v)
        return out

    def floats(self) -> dict[str, float]:
        return {k: float(v) for k, v in self.bindings.items()}


# --- parser -------------------------------------------------------------------
#
#   expr    := term (('+' | '-') term)*
#   term    := unary (('*' | '/') unary)*
#   unary   := ('+' | '-') unary | power
#   power   := primary ('^' unary)?
#   primary := NUMBER | IDENT | IDENT '(' expr ')' | '(' expr ')'

_TOKEN_RE = re.compile(r"\s*(?:(\d+(?:\.\d*)?(?:[eE][-+]?\d+)?)|([A-Za-z][A-Za-z0-9_]*)|(\S))")


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while text[pos:].strip():
        mt = _TOKEN_RE.match(text, pos)
        if mt is None or mt.end() == pos:
            break
        num, ident, op = mt.groups()
        start = mt.start(mt.lastindex) if mt.lastindex else pos
        if num is not None:
            tokens.append(("num", num, start))
        elif ident is not None:
            tokens.append(("id", ident, start))
        elif op is not None:
            if op not in "+-*/^(),":
                raise ExprSyntaxError(f"unexpected character {op!r}", start, text)
            tokens.append(("op", op, start))
        pos = mt.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, extra: Mapping[str, sp.Basic] | None):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.extra = dict(extra or {})

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, op):
        tok = self.take()
        if tok[1] != op:
            raise ExprSyntaxError(f"expected {op!r}, got {tok[1] or 'end of input'!r}", tok[2], self.text)

    def parse(self):
        e = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ExprSyntaxError(f"unexpected {tok[1]!r}", tok[2], self.text)
        return e

    def expr(self):
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            e = e + rhs if op == "+" else e - rhs
        return e

    def term(self):
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.unary()
            e = e * rhs if op == "*" else e / rhs
        return e

    def unary(self):
        tok = self.peek()
        if tok[0] == "op" and tok[1] in ("+", "-"):
            self.take()
            operand = self.unary()
            return -operand if tok[1] == "-" else operand
        return self.power()

    def power(self):
        base_tok = self.peek()
        base = self.primary()
        if self.peek()[1] == "^" and self.peek()[0] == "op":
            self.take()
            exponent = self.unary()
            if base_tok[0] == "id" and base_tok[1] == "e" and base is sp.E:
                return sp.exp(exponent)
            return sp.Pow(base, exponent)
        return base

    def primary(self):
        tok = self.take()
        kind, val, pos = tok
        if kind == "num":
            if "." in val or "e" in val.lower():
                return sp.Float(val)
            return sp.Integer(int(val))
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect(")")
            return e
        if kind == "id":
            if self.peek()[1] == "(":
                self.take()
                arg = self.expr()
                self.expect(")")
                return self.apply(val, arg, pos)
            if val == "e":
                return sp.E
            if val in self.extra:
                return self.extra[val]
            try:
                return sym(val)
            except UnknownIdentifier:
                raise UnknownIdentifier(f"unknown identifier {val!r} at position {pos}") from None
        raise ExprSyntaxError(f"unexpected {val or 'end of input'!r}", pos, self.text)

    def apply(self, name, arg, pos):
        if name in OPAQUE:
            return OPAQUE[name](arg)
        if name in ("ln", "log"):
            return sp.log(arg)
        if name == "exp":
            return sp.exp(arg)
        if name in self.extra and callable(self.extra[name]):
            return self.extra[name](arg)
        raise UnknownIdentifier(f"unknown function {name!r} at position {pos}")


def parse(text: str, extra: Mapping[str, sp.Basic] | None = None) -> sp.Expr:
    """Parse an expression string in the documented grammar.

    ``extra`` adds identifiers (symbols or callables) beyond the built-in
    variables, parameters and jet symbols.
    """
    return _Parser(text, extra).parse()


# --- printer ------------------------------------------------------------------

_PREC_ADD, _PREC_MUL, _PREC_NEG, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _num(r: sp.Rational) -> tuple[str, int]:
    if r.q == 1:
        return str(r.p), (_PREC_ATOM if r.p >= 0 else _PREC_NEG)
    s = f"{abs(r.p)}/{r.q}"
    return ("-" + s, _PREC_NEG) if r.p < 0 else (s, _PREC_MUL)


def _wrap(s: str, prec: int, need: int) -> str:
    return f"({s})" if prec < need else s


def _print(e: sp.Basic) -> tuple[str, int]:
    if isinstance(e, sp.Rational):
        return _num(e)
    if isinstance(e, sp.Float):
        s = repr(float(e))
        return s, (_PREC_NEG if s.startswith("-") else _PREC_ATOM)
    if e is sp.E:
        return "e", _PREC_ATOM
    if isinstance(e, sp.Symbol):
        return e.name, _PREC_ATOM
    if isinstance(e, _Opaque):
        return f"{type(e).__name__}({_print(e.args[0])[0]})", _PREC_ATOM
    if isinstance(e, sp.exp):
        return f"e^({_print(e.args[0])[0]})", _PREC_POW
    if isinstance(e, sp.log):
        return f"ln({_print(e.args[0])[0]})", _PREC_ATOM
    if isinstance(e, sp.Add):
        parts = []
        for i, term in enumerate(e.as_ordered_terms()):
            s, p = _print(term)
            if i == 0:
                parts.append(s)
            elif s.startswith("-") and p >= _PREC_NEG - 1:
                parts.append(" - " + s[1:])
            else:
                parts.append(" + " + _wrap(s, p, _PREC_ADD + 1))
        return "".join(parts), _PREC_ADD
    if isinstance(e, sp.Mul):
        coeff, rest = e.as_coeff_Mul()
        factors = sp.Mul.make_args(rest)
        num, den = [], []
        for fac in factors:
            b, ex = fac.as_base_exp()
            if isinstance(fac, sp.Pow) and ex.is_Rational and ex < 0:
                den.append(sp.Pow(b, -ex, evaluate=False) if ex != -1 else b)
            else:
                num.append(fac)
        strs = []
        if coeff == -1:
            prefix = "-"
        else:
            prefix = ""
            if coeff != 1:
                cs, _ = _num(coeff) if isinstance(coeff, sp.Rational) else _print(coeff)
                strs.append(cs)
        for fac in num:
            s, p = _print(fac)
            strs.append(_wrap(s, p, _PREC_POW))
        if not strs:
            strs.append("1")
        out = "*".join(strs)
        for fac in den:
            s, p = _print(fac)
            out += "/" + _wrap(s, p, _PREC_POW)
        if prefix:
            return "-" + out, _PREC_NEG
        return out, _PREC_MUL
    if isinstance(e, sp.Pow):
        b, ex = e.args
        if ex == -1:
            s, p = _print(b)
            return "1/" + _wrap(s, p, _PREC_POW), _PREC_MUL
        bs, bp = _print(b)
        es, ep = _print(ex)
        return f"{_wrap(bs, bp, _PREC_ATOM)}^{_wrap(es, ep, _PREC_ATOM)}", _PREC_POW
    raise UnsupportedExpression(f"cannot print {type(e).__name__}: {e}")


def to_string(e: sp.Basic) -> str:
    """Print ``e`` in the same grammar :func:`parse` reads."""
    return _print(sp.sympify(e))[0]


# --- normal form --------------------------------------------------------------

_SUPPORTED = (sp.Symbol, sp.Number, sp.Add, sp.Mul, sp.Pow, sp.exp, sp.log, _Opaque,
              sp.core.numbers.Exp1, sp.core.numbers.ImaginaryUnit)


def _check_class(e: sp.Basic) -> None:
    for node in sp.preorder_traversal(e):
        if not isinstance(node, _SUPPORTED):
            raise UnsupportedExpression(f"unsupported construct {type(node).__name__}: {node}")
        if isinstance(node, sp.core.numbers.ImaginaryUnit):
            raise UnsupportedExpression("complex constants are outside the expression class")


def _positive(b: sp.Expr) -> bool:
    return bool(b.is_positive)


def _canon(e: sp.Basic) -> sp.Basic:
    """Bottom-up rewrite of powers, exponentials and logarithms."""
    if not e.args or isinstance(e, (sp.Symbol, sp.Number)):
        return e
    args = [_canon(a) for a in e.args]
    if isinstance(e, sp.Pow):
        b, ex = args
        ex = sp.expand(ex)
        if isinstance(b, sp.Pow) and _positive(b.args[0]):
            return _canon(sp.Pow(b.args[0], sp.expand(b.args[1] * ex)))
        if isinstance(b, sp.exp):
            return _canon(sp.exp(sp.expand(b.args[0] * ex)))
        if isinstance(b, sp.Mul) and not ex.is_Integer:
            return sp.Mul(*[_canon(sp.Pow(fac, ex)) for fac in b.args])
        if b is sp.E:
            return _canon(sp.exp(ex))
        if isinstance(ex, sp.Add) and not ex.is_Integer:
            return sp.Mul(*[sp.Pow(b, term) for term in ex.args])
        return sp.Pow(b, ex)
    if isinstance(e, sp.exp):
        arg = sp.expand(args[0])
        factors = []
        for term in sp.Add.make_args(arg):
            logs = [fac for fac in sp.Mul.make_args(term) if isinstance(fac, sp.log)]
            if len(logs) == 1:
                coeff = sp.Mul(*[fac for fac in sp.Mul.make_args(term) if fac is not logs[0]])
                factors.append(_canon(sp.Pow(logs[0].args[0], coeff)))
            else:
                factors.append(sp.exp(term))
        return sp.Mul(*factors)
    if isinstance(e, sp.log):
        arg = args[0]
        if isinstance(arg, sp.exp):
            return sp.expand(arg.args[0])
        return sp.expand_log(sp.log(arg), force=True)
    return e.func(*args)


def _merge_term(term: sp.Expr) -> sp.Expr:
    term = sp.powsimp(term, combine="exp")
    # powsimp may re-create exp/pow nests; canonicalize exponents once more
    out = []
    for fac in sp.Mul.make_args(term):
        if isinstance(fac, sp.Pow):
            out.append(sp.Pow(fac.args[0], sp.expand(fac.args[1])))
        elif isinstance(fac, sp.exp):
            out.append(sp.exp(sp.expand(fac.args[0])))
        else:
            out.append(fac)
    return sp.Mul(*out)


def _expand(e: sp.Expr) -> sp.Expr:
    return sp.expand(e, power_base=False, power_exp=False, log=False)


def normalize(e) -> sp.Expr:
    """Canonical form: expanded numerator over expanded denominator.

    ``normalize(a - b)`` is the literal zero iff ``a`` and ``b`` agree in the
    supported class (with variables taken positive).
    """
    e = sp.sympify(e)
    _check_class(e)
    e = _canon(e)
    e = _expand(e)
    num, den = sp.fraction(sp.together(e))
    num = sp.Add(*[_merge_term(t) for t in sp.Add.make_args(_expand(_canon(num)))])
    if num == 0:
        return sp.S.Zero
    den = sp.Add(*[_merge_term(t) for t in sp.Add.make_args(_expand(_canon(den)))])
    if den == 1:
        return num
    if not isinstance(den, sp.Add):
        # monomial denominator: distribute so that like bases merge termwise
        return sp.Add(*[_merge_term(t / den) for t in sp.Add.make_args(num)])
    c, rest = den.as_coeff_Mul() if isinstance(den, sp.Mul) else (sp.S.One, den)
    if c != 1:
        num, den = _expand(num / c), rest
    return num / den


def is_zero(e) -> bool:
    return normalize(e) == 0


# --- differentiation and substitution -----------------------------------------

def diff(e, s: sp.Symbol) -> sp.Expr:
    """Partial derivative in ``s``; all other symbols (jets included) are independent."""
    if not isinstance(s, sp.Symbol):
        raise UnsupportedExpression(f"can only differentiate with respect to a symbol, got {s!r}")
    return sp.diff(sp.sympify(e), s)


def substitute(e, target, replacement, *, simplify: bool = True) -> sp.Expr:
    """Replace an atom by an expression and normalize.

    ``target`` may be a symbol or the opaque function class ``f``; in the
    latter case ``replacement`` is an expression in ``u`` and f', f'' follow
    by differentiation.
    """
    e = sp.sympify(e)
    if target is f or target == "f":
        u = VARIABLES["u"]
        g = sp.sympify(replacement)
        g1 = sp.diff(g, u)
        g2 = sp.diff(g1, u)
        out = e.replace(f, sp.Lambda(u, g)).replace(df1, sp.Lambda(u, g1)).replace(df2, sp.Lambda(u, g2))
    else:
        if isinstance(target, str):
            target = sym(target)
        out = e.xreplace({target: sp.sympify(replacement)})
    return normalize(out) if simplify else out


# --- numeric evaluation -------------------------------------------------------

def _as_float(v) -> float:
    if isinstance(v, Fraction):
        return v.numerator / v.denominator
    return float(v)


def _opaque_table(fexpr) -> dict[type, Callable[[float], float]]:
    u = VARIABLES["u"]
    g = sp.sympify(fexpr)
    derivs = [g, sp.diff(g, u), sp.diff(g, u, 2)]
    out = {}
    for cls, d in zip((f, df1, df2), derivs):
        out[cls] = (lambda d: (lambda z, env: _eval(d, {**env, u: z}, None)))(d)
    return out


def _eval(e: sp.Basic, env: Mapping[sp.Symbol, float], opaque) -> float:
    if isinstance(e, sp.Integer):
        return float(int(e))
    if isinstance(e, sp.Rational):
        return e.p / e.q
    if isinstance(e, sp.Float):
        return float(e)
    if e is sp.E:
        return math.e
    if isinstance(e, sp.Symbol):
        try:
            return env[e]
        except KeyError:
            raise EvaluationError(f"unbound symbol {e.name}") from None
    if isinstance(e, sp.Add):
        acc = 0.0
        for a in e.args:
            acc += _eval(a, env, opaque)
        return acc
    if isinstance(e, sp.Mul):
        acc = 1.0
        for a in e.args:
            acc *= _eval(a, env, opaque)
        return acc
    if isinstance(e, sp.Pow):
        b = _eval(e.args[0], env, opaque)
        ex = e.args[1]
        if ex.is_Integer:
            n = int(ex)
            if n < 0 and b == 0.0:
                raise EvaluationError("division by zero")
            return b ** n
        xv = _eval(ex, env, opaque)
        if b < 0:
            if ex.is_Rational and e.args[1].q % 2 == 1:
                return -((-b) ** xv) if e.args[1].p % 2 else (-b) ** xv
            raise EvaluationError(f"non-integer power of negative base {b}")
        if b == 0.0 and xv < 0:
            raise EvaluationError("division by zero")
        return b ** xv
    if isinstance(e, sp.exp):
        return math.exp(_eval(e.args[0], env, opaque))
    if isinstance(e, sp.log):
        a = _eval(e.args[0], env, opaque)
        if a <= 0:
            raise EvaluationError(f"log of non-positive argument {a}")
        return math.log(a)
    if isinstance(e, _Opaque):
        if opaque is None:
            raise EvaluationError(f"opaque {type(e).__name__} has no binding")
        return opaque[type(e)](_eval(e.args[0], env, opaque), env)
    raise EvaluationError(f"cannot evaluate {type(e).__name__}")


def eval_numeric(e, point: Mapping, params: ParameterTable | Mapping | None = None,
                 f_binding=None) -> float:
    """Evaluate ``e`` in IEEE doubles with a fixed operation order.

    ``point`` maps symbols (or names) to floats; ``params`` binds parameters;
    ``f_binding`` is an expression in ``u`` standing for f.
    """
    env: dict[sp.Symbol, float] = {}
    if params is not None:
        items = params.bindings.items() if isinstance(params, ParameterTable) else params.items()
        for k, v in items:
            env[sym(k) if isinstance(k, str) else k] = _as_float(v)
    for k, v in point.items():
        env[sym(k) if isinstance(k, str) else k] = _as_float(v)
    opaque = None
    if f_binding is not None:
        fb = sp.sympify(f_binding)
        if params is not None:
            fb = fb.xreplace({k: sp.Float(v) for k, v in env.items() if k.name in PARAMETERS})
        opaque = _opaque_table(fb)
    try:
        return _eval(sp.sympify(e), env, opaque)
    except ZeroDivisionError:
        raise EvaluationError("division by zero") from None
    except OverflowError as exc:
        raise EvaluationError(str(exc)) from None


# --- probabilistic zero test --------------------------------------------------

SAMPLE_LOW, SAMPLE_HIGH = 0.3, 2.7


def _sum_scale(e: sp.Expr, env, opaque) -> float:
    terms = sp.Add.make_args(sp.expand(e)) if len(sp.Add.make_args(e)) < 400 else sp.Add.make_args(e)
    return sum(abs(_eval(term, env, opaque)) for term in terms)


def probably_zero(e, rng: random.Random, *, n_points: int = 20, rtol: float = 1e-9,
                  fixed: Mapping | None = None, f_binding=None,
                  free: Iterable[sp.Symbol] | None = None) -> tuple[bool, float]:
    """Sampled zero test; returns (passed, max relative residual).

    Each free symbol not in ``fixed`` is drawn uniformly from [0.3, 2.7].
    The residual is relative to the sum of absolute values of its terms.
    """
    e = sp.sympify(e)
    fixed = {sym(k) if isinstance(k, str) else k: _as_float(v) for k, v in (fixed or {}).items()}
    symbols = sorted(set(free) if free is not None else e.free_symbols, key=lambda s: s.name)
    opaque = None
    if f_binding is not None:
        opaque = _opaque_table(sp.sympify(f_binding).xreplace({k: sp.Float(v) for k, v in fixed.items()}))
    worst = 0.0
    for _ in range(n_points):
        env = dict(fixed)
        for s in symbols:
            if s not in env:
                env[s] = rng.uniform(SAMPLE_LOW, SAMPLE_HIGH)
        val = _eval(e, env, opaque)
        scale = _sum_scale(e, env, opaque)
        rel = abs(val) / scale if scale > 0 else abs(val)
        worst = max(worst, rel)
    return worst < rtol, worst
