"""Command-line front end: classify, verify, simulate, catalog, solution."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import sympy as sp

from . import __version__
from . import jetcalc as jc
from . import liesym as ls
from . import pdesim as ps
from . import reductions as rd
from . import symexpr as sx

DEFAULT_SEED = 42
CASES = ("arbitrary", "exponential", "power")


@dataclass
class Report:
    command: str
    inputs: dict
    outcome: str = "pass"
    details: dict = field(default_factory=dict)
    seed: int = DEFAULT_SEED
    version: str = __version__
    timestamp: str = ""

    @property
    def passed(self) -> bool:
        return self.outcome == "pass"

    def to_json(self) -> str:
        return json.dumps(_clean(asdict(self)), indent=2, sort_keys=True, default=_json_default, allow_nan=False)


def _clean(o):
    # NaN/inf are not valid JSON; report them as null
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, (float, np.floating)) and not np.isfinite(o):
        return None
    return o


def _json_default(o):
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, sp.Basic):
        return sx.to_string(o)
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def resolve_seed(arg: int | None) -> int:
    if arg is not None:
        return arg
    env = os.environ.get("THINFILM_SEED")
    return int(env) if env else DEFAULT_SEED


def _cases(case: str) -> list[str]:
    return list(CASES) if case == "all" else [case]


# --- classify -------------------------------------------------------------------

def cmd_classify(spec: str, *, seed: int = DEFAULT_SEED) -> Report:
    family = ls.parse_family(spec)
    case = ls.classify(family)
    names = [Q.label for Q in case.generators]
    table = {}
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            table[f"[{names[i]},{names[j]}]"] = case.bracket(i + 1, j + 1).pretty()
    residuals = {Q.label: sx.to_string(jc.invariance_residual(Q, family)) for Q in case.generators}
    ok = all(r == "0" for r in residuals.values())
    details = {
        "family": family.describe(),
        "algebra": case.algebra_name,
        "generators": {Q.label: Q.pretty() for Q in case.generators},
        "commutators": table,
        "invariance_residuals": residuals,
    }
    return Report("classify", {"family": spec}, "pass" if ok else "fail", details, seed)


def _print_classify(rep: Report) -> None:
    d = rep.details
    print(f"family: {d['family']}")
    print(f"algebra: {d['algebra']} ({len(d['generators'])} generators)")
    for k, v in d["generators"].items():
        print(f"  {k} = {v}")
    print("commutators:")
    for k, v in d["commutators"].items():
        print(f"  {k} = {v}")


# --- verify ---------------------------------------------------------------------

def _verify_symmetries(cases: list[str], tol) -> tuple[list[dict], list]:
    rows = []
    std = ls.standard_cases()
    for cid in cases:
        case = std[cid]
        for Q in case.generators:
            r = jc.invariance_residual(Q, case.family)
            rows.append({"id": f"{cid}:{Q.label}", "kind": "generator", "residual": sx.to_string(r), "pass": r == 0})
    if len(cases) == len(CASES):
        for Q, fam in ls.NON_SYMMETRIES:
            r = jc.invariance_residual(Q, fam)
            rows.append({"id": f"non-symmetry:{Q.label}:{fam.describe()}", "kind": "non-symmetry",
                         "residual": sx.to_string(r), "pass": r != 0})
        for op in ls.equivalence_algebra():
            res = jc.extended_residual(op)
            rows.append({"id": f"equivalence:{op.label}", "kind": "equivalence",
                         "residual": [sx.to_string(e) for e in res], "pass": all(e == 0 for e in res)})
    return rows, []


def _verify_reductions(cases, seed, tol):
    reports = []
    for cid in cases:
        for r in rd.catalog(cid):
            reports.append(rd.verify_row(r, seed=seed, rtol=tol or 1e-9))
    return [_report_row(r) for r in reports], reports


_SOLUTION_CASE = {"blowup_exp": "exponential", "waiting_time_power": "power", "rational_tw_m1": "power"}


def _verify_solutions(cases, seed, tol):
    reports = []
    for sid, sets in rd.SOLUTION_PARAM_SETS.items():
        if _SOLUTION_CASE[sid] not in cases:
            continue
        for p in sets:
            reports.append(rd.pde_residual(rd.closed_form(sid, p), 50, seed=seed, tol=tol or 1e-9))
    if "arbitrary" in cases:
        reports.append(rd.pde_residual(rd.closed_form("constant", {"c": 2}), 50, seed=seed, tol=tol or 1e-9))
        reports.append(rd.pde_residual(rd.closed_form("zero"), 50, seed=seed, tol=tol or 1e-9))
    return [_report_row(r) for r in reports], reports


def _verify_chains(cases, seed, tol):
    reports = []
    for c in rd.chained_reductions():
        if len(cases) < len(CASES) and c.family.split(":")[0] not in cases:
            continue
        reports.append(rd.verify_chain(c, tol=tol or 1e-6))
    if "power" in cases:
        worst = rd.rational_tw_fourth_residual()
        reports.append(rd.ResidualReport("tw-fourth-rational", "alpha=1,k=0", worst, 40, worst < (tol or 1e-8),
                                         "closed-form-chain"))
    rows = [_report_row(r) for r in reports]
    extra = {"linear_symmetry": rd.verify_linear_symmetry(), "case_split": rd.check_case_split()}
    rows.append({"id": "linear-symmetry-proportional", "pass": bool(extra["linear_symmetry"]["proportional"])})
    rows.extend({"id": f"case-split {k}", "pass": v} for k, v in extra["case_split"].items())
    return rows, reports


def _report_row(r: rd.ResidualReport) -> dict:
    row = {"id": r.id, "params": r.params, "max_residual": r.max_residual, "n_points": r.n_points,
           "pass": r.passed, "method": r.method}
    if "finding" in r.detail:
        row["finding"] = r.detail["finding"]
    return row


def cmd_verify(scope: str, case: str = "all", *, seed: int = DEFAULT_SEED, tol: float | None = None,
               csv_dir: str | None = None) -> Report:
    cases = _cases(case)
    runner = {"symmetries": lambda: _verify_symmetries(cases, tol),
              "reductions": lambda: _verify_reductions(cases, seed, tol),
              "solutions": lambda: _verify_solutions(cases, seed, tol),
              "chains": lambda: _verify_chains(cases, seed, tol)}[scope]
    rows, reports = runner()
    n_pass = sum(1 for r in rows if r["pass"])
    details = {"checks": rows, "summary": f"{n_pass}/{len(rows)} pass"}
    if csv_dir and reports:
        Path(csv_dir).mkdir(parents=True, exist_ok=True)
        path = Path(csv_dir) / f"verify_{scope}.csv"
        rd.write_reports_csv(reports, path)
        details["csv"] = str(path)
    outcome = "pass" if n_pass == len(rows) else "fail"
    return Report("verify", {"scope": scope, "case": case, "tol": tol}, outcome, details, seed)


# --- simulate -------------------------------------------------------------------

EXPECT_KEYS = ("order", "mass_drift_max", "l2_error_max", "linf_error_max", "relative_l2_max")


def cmd_simulate(config_path: str, *, seed: int = DEFAULT_SEED, csv_dir: str | None = None) -> Report:
    """Run a simulation config. Optional top-level keys next to the SimConfig fields:
    ``convergence`` (list of n for a refinement study) and ``expect`` (pass thresholds)."""
    with open(config_path) as fh:
        raw = json.load(fh)
    ns = raw.pop("convergence", None)
    expect = raw.pop("expect", {}) or {}
    bad = set(expect) - set(EXPECT_KEYS)
    if bad:
        raise ps.ConfigError(f"unknown expect fields: {sorted(bad)}")
    cfg = ps.SimConfig.from_dict(raw)
    details: dict = {"config": cfg.to_dict()}
    checks = {}
    if ns:
        study = ps.convergence_study(cfg, ns)
        details["convergence"] = study.to_dict()
        if "order" in expect:
            lo, hi = expect["order"]
            checks["order"] = all(lo <= p <= hi for p in study.orders)
    result = ps.run(cfg)
    summary = {"t_final": result.final.t, "L2_error": result.error_l2(), "Linf_error": result.error_linf(),
               "relative_L2": result.relative_error_l2(), "mass_drift": result.mass_drift(), **result.stats}
    details["summary"] = summary
    for key, name in (("mass_drift_max", "mass_drift"), ("l2_error_max", "L2_error"),
                      ("linf_error_max", "Linf_error"), ("relative_l2_max", "relative_L2")):
        if key in expect:
            checks[key] = bool(summary[name] < expect[key])
    details["checks"] = checks
    if csv_dir:
        d = Path(csv_dir)
        d.mkdir(parents=True, exist_ok=True)
        stem = Path(config_path).stem
        result.write_series_csv(d / f"{stem}_series.csv")
        result.write_final_csv(d / f"{stem}_final.csv")
        details["csv"] = [str(d / f"{stem}_series.csv"), str(d / f"{stem}_final.csv")]
    outcome = "pass" if all(checks.values()) else "fail"
    return Report("simulate", {"config": str(config_path)}, outcome, details, seed)


# --- catalog and solution -------------------------------------------------------

def cmd_catalog(kind: str = "reductions") -> str:
    if kind == "reductions":
        return rd.catalog_json()
    if kind == "symmetries":
        return ls.catalog_json()
    return json.dumps([c.to_dict() for c in rd.chained_reductions()], indent=2, sort_keys=True)


def _parse_params(items: list[str]) -> dict:
    out = {}
    for item in items or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise ValueError(f"parameter {item!r} must look like name=value")
        out[key] = val.split(";") if ";" in val else val
    return out


def cmd_solution(sid: str, params: dict, t: float, x_min: float, x_max: float, n: int, out) -> Report:
    sol = rd.closed_form(sid, params)
    xs = np.linspace(x_min, x_max, n)
    ev = ps.solution_evaluator(sol)
    us = ev(t, xs)
    inside = [bool(sol.zero_branch and sol.zero_branch(t, xv)) or sol.domain(t, float(xv)) for xv in xs]
    w = csv.writer(out)
    w.writerow(["x", "u", "in_domain"])
    for xv, uv, ok in zip(xs, us, inside):
        w.writerow([repr(float(xv)), repr(float(uv)), int(ok)])
    return Report("solution", {"id": sid, "params": {k: str(v) for k, v in params.items()}, "t": t,
                               "x_min": x_min, "x_max": x_max, "n": n},
                  "pass", {"value": sx.to_string(sol.value), "points_in_domain": sum(inside)})


# --- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="thinfilm", description=__doc__)
    p.add_argument("--version", action="version", version=f"thinfilm {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", metavar="PATH", help="write the JSON report to PATH ('-' for stdout)")
    common.add_argument("--seed", type=int, default=None,
                        help=f"sampling seed (default: $THINFILM_SEED or {DEFAULT_SEED})")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("classify", parents=[common], help="symmetry algebra of a nonlinearity")
    c.add_argument("family", help="arbitrary | exp:lambda=2 | power:m=3 | explicit:u*e^(-u)")

    v = sub.add_parser("verify", parents=[common], help="run a verification suite")
    v.add_argument("scope", choices=("symmetries", "reductions", "solutions", "chains"))
    v.add_argument("--case", default="all", choices=("all",) + CASES, help="case filter (default: all)")
    v.add_argument("--tol", type=float, default=None,
                   help="override the pass tolerance (defaults: 1e-9 rows/solutions, 1e-6 chains)")
    v.add_argument("--csv-dir", help="directory for residual CSV reports")

    s = sub.add_parser("simulate", parents=[common], help="run a PDE simulation config (JSON)")
    s.add_argument("config")
    s.add_argument("--csv-dir", help="directory for time-series and final-state CSVs")

    k = sub.add_parser("catalog", help="dump a catalog as JSON")
    k.add_argument("kind", nargs="?", default="reductions", choices=("reductions", "symmetries", "chains"))

    o = sub.add_parser("solution", parents=[common], help="evaluate a closed-form solution on a grid to CSV")
    o.add_argument("id", choices=("rational_tw_m1", "waiting_time_power", "blowup_exp", "constant", "zero"))
    o.add_argument("--param", action="append", default=[], help="name=value; c=2;0;0;0;0 for lists")
    o.add_argument("--t", type=float, default=0.0)
    o.add_argument("--x-min", type=float, default=0.1)
    o.add_argument("--x-max", type=float, default=1.0)
    o.add_argument("--n", type=int, default=101)
    o.add_argument("--csv", metavar="PATH", help="output file (default stdout)")
    return p


def _emit(rep: Report, json_path: str | None) -> None:
    rep.timestamp = time.strftime("%Y-%m-%dT%H:%M:%S")
    if json_path == "-":
        print(rep.to_json())
    elif json_path:
        Path(json_path).write_text(rep.to_json() + "\n")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "catalog":
        print(cmd_catalog(args.kind))
        return 0
    seed = resolve_seed(args.seed)
    try:
        if args.command == "classify":
            rep = cmd_classify(args.family, seed=seed)
            if args.json != "-":
                _print_classify(rep)
        elif args.command == "verify":
            rep = cmd_verify(args.scope, args.case, seed=seed, tol=args.tol, csv_dir=args.csv_dir)
            if args.json != "-":
                for row in rep.details["checks"]:
                    mark = "PASS" if row["pass"] else "FAIL"
                    res = row.get("max_residual", row.get("residual", ""))
                    print(f"{mark}  {row['id']}  {res}")
                    if "finding" in row:
                        print(f"      {row['finding']}")
                print(rep.details["summary"])
        elif args.command == "simulate":
            rep = cmd_simulate(args.config, seed=seed, csv_dir=args.csv_dir)
            if args.json != "-":
                for key, val in rep.details["summary"].items():
                    print(f"{key}: {val}")
                if "convergence" in rep.details:
                    print(f"observed order: {rep.details['convergence']['observed_order']}")
                for key, ok in rep.details["checks"].items():
                    print(f"{'PASS' if ok else 'FAIL'}  {key}")
        else:
            params = _parse_params(args.param)
            if args.csv:
                with open(args.csv, "w", newline="") as fh:
                    rep = cmd_solution(args.id, params, args.t, args.x_min, args.x_max, args.n, fh)
            else:
                rep = cmd_solution(args.id, params, args.t, args.x_min, args.x_max, args.n, sys.stdout)
    except (ValueError, sx.EvaluationError, ps.SimulationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    _emit(rep, args.json)
    return 0 if rep.passed else 1


if __name__ == "__main__":
    sys.exit(main())
