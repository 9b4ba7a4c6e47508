"""Adaptive Dormand-Prince 5(4) integration with dense output.

Used for the fifth-order reduced equations (first integrals of the
travelling-wave and source ODEs) and to feed the chained-reduction checks.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import sympy as sp

from . import symexpr as sx

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array(_A[6] + [0.0])
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# continuous extension (order 4)
_D = np.array([-12715105075 / 11282082432, 0.0, 87487479700 / 32700410799, -10690763975 / 1880347072,
               701980252875 / 199316789632, -1453857185 / 822651844, 69997945 / 29380423])

SAFETY = 0.9
FAC_MIN, FAC_MAX = 0.2, 5.0
_EXPO1, _BETA = 0.17, 0.04  # PI controller exponents (0.2 - 0.75*beta, beta)


class IntegrationError(RuntimeError):
    pass


class OutOfSpan(ValueError):
    pass


@dataclass
class OdeSystem:
    """First-order system state' = rhs(y, state)."""

    dimension: int
    rhs: Callable[[float, np.ndarray], np.ndarray]
    singular: Callable[[float, np.ndarray], bool] | None = None
    label: str = ""
    highest: sp.Expr | None = None
    leading: sp.Expr | None = None
    metadata: dict = field(default_factory=dict)

    def is_singular(self, y: float, state: np.ndarray) -> bool:
        if not np.all(np.isfinite(state)):
            return True
        return bool(self.singular(y, state)) if self.singular is not None else False


def _jet(var: str, indep: str, k: int) -> sp.Symbol:
    return sx.sym(var) if k == 0 else sx.sym(f"{var}_{indep * k}")


def _ode_order(ode: sp.Expr, var: str, indep: str) -> int:
    order = -1
    for s in ode.free_symbols:
        name = s.name
        if name == var:
            order = max(order, 0)
        elif name.startswith(var + "_"):
            tail = name[len(var) + 1:]
            if tail and tail == indep * (len(tail) // len(indep)):
                order = max(order, len(tail) // len(indep))
    return order


def to_first_order(ode, *, var: str = "v", indep: str = "y", params=None, positive: bool = False,
                   label: str = "") -> OdeSystem:
    """Solve ``ode = 0`` for its highest derivative and return the companion system.

    The state is (v, v_y, ..., v_{y^(n-1)}). The system is singular where the
    leading coefficient vanishes or is not finite, and where v <= 0 if
    ``positive`` is set.
    """
    ode = sx.parse(ode) if isinstance(ode, str) else sp.sympify(ode)
    if params:
        subs = params.as_subs() if isinstance(params, sx.ParameterTable) else {
            sx.sym(k) if isinstance(k, str) else k: sp.nsimplify(v) for k, v in params.items()}
        ode = ode.xreplace(subs)
    n = _ode_order(ode, var, indep)
    if n < 1:
        raise ValueError("ODE contains no derivative of the unknown")
    top = _jet(var, indep, n)
    lead = sp.expand(sp.diff(ode, top))
    if lead == 0 or sx.normalize(lead) == 0:
        raise ValueError("leading coefficient is identically zero")
    if sp.diff(lead, top) != 0:
        raise ValueError("ODE is not linear in its highest derivative")
    highest = sx.normalize(-(ode - lead * top) / lead)
    y = sx.sym(indep)
    state_syms = [_jet(var, indep, k) for k in range(n)]
    f_high = sp.lambdify([y, *state_syms], highest, modules="math")
    f_lead = sp.lambdify([y, *state_syms], lead, modules="math")

    def rhs(yv, s):
        out = np.empty(n)
        out[:-1] = s[1:]
        out[-1] = f_high(yv, *s)
        return out

    def singular(yv, s):
        if positive and s[0] <= 0:
            return True
        try:
            c = f_lead(yv, *s)
        except (ValueError, ZeroDivisionError, OverflowError):
            return True
        if isinstance(c, complex) or not math.isfinite(c) or c == 0:
            return True
        return False

    return OdeSystem(n, rhs, singular, label=label or sx.to_string(ode), highest=highest, leading=lead)


# --- trajectory ---------------------------------------------------------------

@dataclass
class Trajectory:
    ys: np.ndarray
    states: np.ndarray
    system: OdeSystem
    stop_reason: str = "completed"
    stats: dict = field(default_factory=dict)
    _dense: list = field(default_factory=list, repr=False)

    @property
    def ok(self) -> bool:
        return self.stop_reason == "completed"

    @property
    def span(self) -> tuple[float, float]:
        return (min(self.ys[0], self.ys[-1]), max(self.ys[0], self.ys[-1]))

    def _segment(self, y: float) -> int:
        lo, hi = self.span
        if not (lo - 1e-14 * max(1.0, abs(lo)) <= y <= hi + 1e-14 * max(1.0, abs(hi))):
            raise OutOfSpan(f"y={y} outside trajectory span [{lo}, {hi}]")
        direction = 1.0 if self.ys[-1] >= self.ys[0] else -1.0
        keys = direction * self.ys
        i = int(np.searchsorted(keys, direction * y, side="right")) - 1
        return min(max(i, 0), len(self.ys) - 2)

    def interpolate(self, y: float) -> np.ndarray:
        hit = np.nonzero(self.ys == y)[0]
        if hit.size:
            return self.states[hit[0]].copy()
        i = self._segment(y)
        y_old, h, r = self._dense[i]
        th = (y - y_old) / h
        th1 = 1.0 - th
        return r[0] + th * (r[1] + th1 * (r[2] + th * (r[3] + th1 * r[4])))

    def to_csv(self, path, names=None) -> None:
        names = names or [f"s{i}" for i in range(self.states.shape[1])]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["y", *names])
            for yv, s in zip(self.ys, self.states):
                w.writerow([repr(float(yv)), *(repr(float(c)) for c in s)])

    def stats_json(self) -> str:
        return json.dumps({**self.stats, "stop_reason": self.stop_reason}, sort_keys=True)


def dense_eval(traj: Trajectory, y: float, order: int = 0) -> np.ndarray:
    """State (order 0) or its derivative of order 1..3 at y.

    Order 1 is the right-hand side on the interpolated state; orders 2 and 3
    are central differences of that right-hand side along the dense output.
    """
    if order < 0 or order > 3:
        raise ValueError("derivative order must be 0..3")
    s = traj.interpolate(y)
    if order == 0:
        return s
    f = lambda yy: traj.system.rhs(yy, traj.interpolate(yy))
    if order == 1:
        return f(y)
    lo, hi = traj.span
    d = (np.finfo(float).eps ** (1.0 / (order + 2))) * max(hi - lo, 1e-300)
    # shift the stencil inward near the ends of the span
    c = min(max(y, lo + order * d), hi - order * d)
    if order == 2:
        return (f(c + d) - f(c - d)) / (2 * d)
    return (f(c + d) - 2 * f(c) + f(c - d)) / (d * d)


def _err_norm(err, y, ynew, rtol, atol) -> float:
    sc = atol + rtol * np.maximum(np.abs(y), np.abs(ynew))
    return float(np.sqrt(np.mean((err / sc) ** 2)))


def _initial_step(sys: OdeSystem, y0, s0, f0, direction, rtol, atol) -> float:
    sc = atol + rtol * np.abs(s0)
    d0 = np.sqrt(np.mean((s0 / sc) ** 2))
    d1 = np.sqrt(np.mean((f0 / sc) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    try:
        f1 = sys.rhs(y0 + direction * h0, s0 + direction * h0 * f0)
        d2 = np.sqrt(np.mean(((f1 - f0) / sc) ** 2)) / h0
    except (ValueError, ZeroDivisionError, OverflowError):
        return h0
    if not np.isfinite(d2):
        return h0
    h1 = max(1e-6, h0 * 1e-3) if max(d1, d2) <= 1e-15 else (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1)


def integrate(sys: OdeSystem, y0: float, state0, y_end: float, rtol: float = 1e-9, atol: float = 1e-12,
              *, h0: float | None = None, max_steps: int = 200_000, adaptive: bool = True) -> Trajectory:
    """DOPRI5 with PI step control from y0 to y_end (either direction).

    ``adaptive=False`` takes fixed steps of size ``h0`` (for order studies).
    """
    if rtol <= 0 or atol <= 0:
        raise ValueError("rtol and atol must be positive")
    if not adaptive and not h0:
        raise ValueError("fixed-step integration needs h0")
    s = np.array(state0, dtype=float)
    if s.shape != (sys.dimension,):
        raise ValueError(f"state0 must have length {sys.dimension}")
    if sys.is_singular(y0, s):
        raise IntegrationError(f"initial point y={y0} is singular")
    direction = 1.0 if y_end >= y0 else -1.0
    y = float(y0)
    ys, states, dense = [y], [s.copy()], []
    stats = {"steps": 0, "rejected": 0, "rhs_evaluations": 0}
    k = np.empty((7, sys.dimension))
    k[0] = sys.rhs(y, s)
    stats["rhs_evaluations"] += 1
    h = abs(h0) if h0 else _initial_step(sys, y, s, k[0], direction, rtol, atol)
    err_old = 1e-4
    reason = "completed"
    singular_hit = False
    span = abs(y_end - y0)
    while direction * (y_end - y) > 1e-15 * max(1.0, abs(y_end)):
        if stats["steps"] + stats["rejected"] >= max_steps:
            reason = "max_steps"
            break
        h = min(h, abs(y_end - y))
        if h < 1e-14 * max(1.0, abs(y), span):
            reason = "singular" if singular_hit else "step_underflow"
            break
        hs = direction * h
        singular_hit = False
        try:
            for i in range(1, 7):
                yi = s + hs * np.dot(_A[i], k[:i])
                if sys.is_singular(y + _C[i] * hs, yi):
                    raise ZeroDivisionError
                k[i] = sys.rhs(y + _C[i] * hs, yi)
            snew = yi  # stage 7 argument is the 5th-order solution
            stats["rhs_evaluations"] += 6
            if not np.all(np.isfinite(k)):
                raise ZeroDivisionError
        except (ValueError, ZeroDivisionError, OverflowError):
            singular_hit = True
            stats["rejected"] += 1
            h *= 0.25
            if h < 1e-14 * max(1.0, abs(y), span):
                reason = "singular"
                break
            continue
        err = _err_norm(hs * np.dot(_E, k), s, snew, rtol, atol)
        if err <= 1.0 or not adaptive:
            fac = SAFETY * err ** -_EXPO1 * err_old ** _BETA if err > 0 else FAC_MAX
            fac = min(FAC_MAX, max(FAC_MIN, fac))
            ydiff = snew - s
            bspl = hs * k[0] - ydiff
            r = np.array([s, ydiff, bspl, ydiff - hs * k[6] - bspl, hs * np.dot(_D, k)])
            dense.append((y, hs, r))
            y = y + hs if abs(y_end - (y + hs)) > 1e-15 * max(1.0, abs(y_end)) else y_end
            s = snew
            k[0] = k[6]
            ys.append(y)
            states.append(s.copy())
            stats["steps"] += 1
            err_old = max(err, 1e-4)
            h = h * fac if adaptive else abs(h0)
        else:
            stats["rejected"] += 1
            h = h * max(FAC_MIN, SAFETY * err ** -_EXPO1)
    return Trajectory(np.array(ys), np.array(states), sys, reason, stats, dense)
