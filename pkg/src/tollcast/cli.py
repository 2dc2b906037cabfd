"""Command-line front end.

Results go to stdout (or ``--out``) as JSON with exact rational strings; a
short summary and all diagnostics go to stderr. Exit codes: 0 success,
1 internal error, 2 invalid input, 3 infeasible budget or scheme,
4 unsupported externality model.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from typing import Sequence

from .curve import curve_rows, curve_to_dict, trace_curve
from .equilibrium import solve_equilibrium
from .exact import Rational, decimal_string, format_rational, parse_rational
from .model import (
    FlowError,
    InstanceError,
    UnsupportedExternality,
    flow_from_dict,
    flow_to_dict,
    load_instance,
    potential,
    total_externality,
)
from .pricing import (
    InfeasibleBudget,
    check_implementable,
    implement_budget,
    kkt_residuals,
    market_price_interval,
    min_feasible_budget,
    min_price,
)

EXIT_OK, EXIT_INTERNAL, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_UNSUPPORTED = 0, 1, 2, 3, 4

f = format_rational


def _rat(text: str) -> Rational:
    try:
        return parse_rational(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not an exact rational: {text!r}") from None


def _class_value(text: str) -> tuple[str, Rational]:
    name, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected class=value, got {text!r}")
    return name, _rat(value)


def _class_values(text: str) -> dict:
    """``"co2=1/4,nox=1"``; a bare value is returned under the key ``None``."""
    if "=" not in text:
        return {None: _rat(text)}
    return dict(_class_value(part) for part in text.split(","))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tollcast", description="Exact traffic equilibria under externality prices.")
    p.add_argument("--out", help="write the JSON result here instead of stdout")
    p.add_argument("--decimal", type=int, metavar="N", help="also report decimal approximations with N digits")
    p.add_argument("-q", "--quiet", action="store_true", help="no summary on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", help="check an instance file")
    s.add_argument("instance")

    s = sub.add_parser("equilibrium", help="equilibrium at fixed prices")
    s.add_argument("--lambda", dest="lam", type=_rat, default=None, help="price for every class")
    s.add_argument("--lambda-j", dest="lam_j", type=_class_value, action="append", default=[], metavar="CLASS=R")
    s.add_argument("instance")

    s = sub.add_parser("curve", help="full price-to-equilibrium curve")
    s.add_argument("--grid", type=int, default=0, help="extra evenly spaced sample prices for the CSV")
    s.add_argument("--grid-max", type=_rat, default=None, help="right end of the grid (default: last breakpoint + 1)")
    s.add_argument("--csv")
    s.add_argument("--svg")
    s.add_argument("instance")

    s = sub.add_parser("min-price", help="smallest price meeting a budget")
    s.add_argument("--budget", type=_rat, required=True)
    s.add_argument("instance")

    s = sub.add_parser("implement-budget", help="prices implementing a per-class budget")
    s.add_argument("--budget", type=_class_values, required=True, metavar="CLASS=R[,CLASS=R...]")
    s.add_argument("instance")

    s = sub.add_parser("check-flow", help="is a given flow implementable by prices?")
    s.add_argument("--flow", required=True)
    s.add_argument("instance")

    s = sub.add_parser("min-budget", help="minimum feasible budget per class")
    s.add_argument("instance")

    s = sub.add_parser("credit-scheme", help="market-clearing price interval for tradable credits")
    s.add_argument("--credits", type=_rat, required=True)
    s.add_argument("instance")
    return p


def _flow_block(inst, flow) -> dict:
    d = flow_to_dict(flow)
    return {"flow": d["flow"], "edge_loads": d["edge_loads"], "G": d["G"], "Phi": d["Phi"]}


def _decimalize(obj, digits):
    if isinstance(obj, dict):
        return {k: _decimalize(v, digits) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decimalize(v, digits) for v in obj]
    if isinstance(obj, str):
        try:
            return decimal_string(parse_rational(obj), digits)
        except ValueError:
            return obj
    return obj


def _say(args, msg):
    if not args.quiet:
        print(msg, file=sys.stderr)


def cmd_validate(args, inst):
    _say(args, f"{args.instance}: ok")
    return {
        "valid": True,
        "nodes": len(inst.nodes),
        "edges": len(inst.edges),
        "commodities": len(inst.commodities),
        "externalities": list(inst.externality_names),
        "max_pieces": inst.max_pieces,
        "affine_externality": inst.has_affine_externality,
    }


def cmd_equilibrium(args, inst):
    lam = {}
    for name in inst.externality_names:
        lam[name] = args.lam if args.lam is not None else Rational(0)
    for name, v in args.lam_j:
        if name not in lam:
            raise InstanceError("--lambda-j", f"unknown externality class {name!r}")
        lam[name] = v
    res = solve_equilibrium(inst, lam)
    out = {"lambda": {k: f(v) for k, v in lam.items()}}
    out.update(_flow_block(inst, res.flow))
    out["Phi_lambda"] = f(potential(inst, res.flow, lam))
    out["min_path_cost"] = {str(i): f(res.min_path_cost(i)) for i in range(len(inst.commodities))}
    out["potentials"] = {str(i): {v: f(x) for v, x in phi.items()} for i, phi in enumerate(res.potentials)}
    out["edge_state"] = {
        "support": [[i, eid] for i, eid in sorted(res.edge_state.support)],
        "active_parts": {e.id: k for e, k in zip(inst.edges, res.edge_state.active_parts)},
    }
    out["perturbed"] = res.perturbed
    G = ", ".join(f"{k}={v}" for k, v in out["G"].items())
    _say(args, f"equilibrium at {out['lambda']}: G {G}" + (" (zero slopes: limit selection)" if res.perturbed else ""))
    return out


def _grid(curve, n, top):
    if n <= 0:
        return []
    if top is None:
        top = curve.terminal.lambda_start + 1
    if n == 1:
        return [Rational(0)]
    return [top * k / (n - 1) for k in range(n)]


def cmd_curve(args, inst):
    curve = trace_curve(inst)
    out = curve_to_dict(curve)
    if curve.perturbed:
        print("warning: zero-slope pieces; the curve follows one equilibrium selection", file=sys.stderr)
    rows = None
    if args.csv or args.svg:
        rows = curve_rows(curve, _grid(curve, args.grid, args.grid_max))
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lambda", *[e.id for e in inst.edges], "G", "Phi"])
            for r in rows:
                w.writerow([f(v) for v in r])
    if args.svg:
        _plot(inst, curve, rows, args.svg)
    _say(args, f"{len(curve.breakpoints)} breakpoints, terminal from lambda={f(curve.terminal.lambda_start)}")
    return out


def _plot(inst, curve, rows, path):
    try:
        import matplotlib
    except ImportError:
        raise RuntimeError("SVG export needs matplotlib (pip install 'artifact[plot]')") from None
    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "tollcast"
    import matplotlib.pyplot as plt

    lam = [float(r[0]) for r in rows]
    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(7, 6))
    ax1.plot(lam, [float(r[-2]) for r in rows], color="black")
    ax1.set_ylabel("total externality G")
    for k, e in enumerate(inst.edges):
        ax2.plot(lam, [float(r[1 + k]) for r in rows], label=e.id)
    ax2.set_xlabel("price")
    ax2.set_ylabel("edge load")
    ax2.legend(fontsize="small")
    for b in curve.breakpoint_lambdas:
        for ax in (ax1, ax2):
            ax.axvline(float(b), color="grey", lw=0.6, ls=":")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_min_price(args, inst):
    rep = min_price(inst, args.budget)
    out = {"lambda": f(rep.lambda_star)}
    out.update(_flow_block(inst, rep.flow))
    out["iterations"] = rep.iterations
    out["bound"] = rep.iteration_bound
    _say(args, f"minimal price {rep.lambda_star} ({rep.iterations} bisection steps, bound {rep.iteration_bound})")
    return out


def cmd_implement_budget(args, inst):
    budget = args.budget
    if None in budget:
        if len(inst.externality_names) != 1:
            raise InstanceError("--budget", "give class=value pairs for a multi-class instance")
        budget = {inst.externality_names[0]: budget[None]}
    res = implement_budget(inst, budget)
    out = {"lambda": {k: f(v) for k, v in res.prices.items()}}
    out.update(_flow_block(inst, res.flow))
    out["kkt"] = {k: f(v) for k, v in kkt_residuals(inst, res.flow, res.prices, budget).items()}
    _say(args, "prices " + ", ".join(f"{k}={v}" for k, v in out["lambda"].items()))
    return out


def cmd_check_flow(args, inst):
    with open(args.flow) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FlowError(f"invalid flow JSON: {exc}") from None
    flow = flow_from_dict(inst, data)
    res = check_implementable(inst, flow)
    out = {
        "implementable": res.implementable,
        "lambda": None if res.prices is None else {k: f(v) for k, v in res.prices.items()},
        "gap": f(res.gap),
        "optimum": f(res.optimum),
    }
    _say(args, "implementable" if res.implementable else f"not implementable (travel-time gap {res.gap})")
    return out


def cmd_min_budget(args, inst):
    res = min_feasible_budget(inst)
    _say(args, "minimum feasible budget " + ", ".join(f"{k}={v}" for k, v in res.items()))
    return {"B_min": {k: f(v) for k, v in res.items()}}


def cmd_credit_scheme(args, inst):
    m = market_price_interval(inst, args.credits)
    out = {
        "lambda_lo": f(m.lambda_lo),
        "lambda_hi": None if m.lambda_hi is None else f(m.lambda_hi),
        "bounded": m.lambda_hi is not None,
        "witness_lo": _flow_block(inst, m.flow_lo),
        "witness_hi": None if m.flow_hi is None else _flow_block(inst, m.flow_hi),
        "iterations": m.iterations,
    }
    hi = "inf)" if m.lambda_hi is None else f"{m.lambda_hi}]"
    _say(args, f"market prices [{m.lambda_lo}, {hi}")
    return out


COMMANDS = {
    "validate": cmd_validate,
    "equilibrium": cmd_equilibrium,
    "curve": cmd_curve,
    "min-price": cmd_min_price,
    "implement-budget": cmd_implement_budget,
    "check-flow": cmd_check_flow,
    "min-budget": cmd_min_budget,
    "credit-scheme": cmd_credit_scheme,
}


def run(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if os.environ.get("TOLLCAST_VERBOSE", "") not in ("", "0"):
        logging.basicConfig(level=logging.DEBUG, stream=sys.stderr, format="%(name)s: %(message)s")
    try:
        inst = load_instance(args.instance)
        out = COMMANDS[args.command](args, inst)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except InstanceError as exc:
        print(f"invalid instance: {exc.path}: {exc.message}", file=sys.stderr)
        return EXIT_INVALID
    except (FlowError, ValueError) as exc:
        if isinstance(exc, InfeasibleBudget):
            print(f"infeasible: {exc}", file=sys.stderr)
            if exc.certificate:
                cert = ", ".join(f"{k}: {v}" for k, v in exc.certificate.items())
                print(f"certificate: {cert}", file=sys.stderr)
            return EXIT_INFEASIBLE
        if isinstance(exc, UnsupportedExternality):
            print(f"unsupported: {exc}", file=sys.stderr)
            return EXIT_UNSUPPORTED
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    if args.decimal is not None:
        out["decimal"] = _decimalize({k: v for k, v in out.items()}, args.decimal)
    text = json.dumps(out, indent=2) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def main():
    sys.exit(run())
