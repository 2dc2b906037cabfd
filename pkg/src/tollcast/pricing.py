"""Prices that meet externality budgets.

* :func:`min_price` -- smallest single price whose equilibrium meets a budget.
* :func:`market_price_interval` -- all clearing prices of a credit market.
* :func:`implement_budget` -- one price per class from the multipliers of the
  budget-constrained potential minimization.
* :func:`check_implementable` -- whether some prices make a given flow an
  equilibrium, decided by a linear program with frozen edge coefficients.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

from .curve import CurveError, compute_interval, lambda_max
from .equilibrium import expand, solve_equilibrium, collapse_flow, solve_expanded_qp, shortest_distances
from .exact import ONE, ZERO, Rational, ceil_log2, hadamard_bit_bound, lcm_of_denominators, rational
from .lp import EQ, LE, Infeasible, LinearProgram, Optimal, solve_lp
from .model import Flow, Instance, UnsupportedExternality, edge_costs, total_externality

log = logging.getLogger(__name__)


class InfeasibleBudget(ValueError):
    """No feasible flow meets the budget.

    ``certificate`` maps row labels of the feasibility program to Farkas
    multipliers; ``minima`` holds the smallest reachable total per class.
    """

    def __init__(self, message: str, certificate: dict | None = None, minima: dict | None = None):
        super().__init__(message)
        self.certificate = certificate or {}
        self.minima = minima or {}


class SearchFailure(RuntimeError):
    """The price search exceeded its proven iteration bound (internal error)."""


# ---------------------------------------------------------------------------
# edge-based flow programs


@dataclass
class _FlowLp:
    lp: LinearProgram
    x: dict          # (commodity, edge index) -> variable
    labels: list     # one label per row


def _flow_lp(instance: Instance, cost: Sequence[Rational]) -> _FlowLp:
    lp = LinearProgram()
    xs = {}
    labels = []
    for i, c in enumerate(instance.commodities):
        nodes, edges = instance.relevant(i)
        for k in edges:
            xs[(i, k)] = lp.add_variable(cost[k], 0, None, f"x[{i},{instance.edges[k].id}]")
        eset = set(edges)
        for v in nodes:
            row = {}
            for k in instance.out_edges[v]:
                if k in eset:
                    row[xs[(i, k)]] = ONE
            for k in instance.in_edges[v]:
                if k in eset:
                    row[xs[(i, k)]] = row.get(xs[(i, k)], ZERO) - ONE
            rhs = c.demand if v == c.source else (-c.demand if v == c.target else ZERO)
            lp.add_row(row, EQ, rhs)
            labels.append(f"conservation[{i},{v}]")
    return _FlowLp(lp, xs, labels)


def _load_row(flp: _FlowLp, coeff: Sequence[Rational]) -> dict:
    return {var: coeff[k] for (i, k), var in flp.x.items() if coeff[k]}


def _flow_of(instance: Instance, flp: _FlowLp, x) -> Flow:
    rows = [[ZERO] * len(instance.edges) for _ in instance.commodities]
    for (i, k), var in flp.x.items():
        rows[i][k] = x[var]
    return Flow(instance, tuple(tuple(r) for r in rows))


def _require_constant(instance: Instance):
    if instance.has_affine_externality:
        raise UnsupportedExternality("flow-dependent (affine) externalities are not supported here")


def min_feasible_budget(instance: Instance) -> dict[str, Rational]:
    """Smallest total externality of any feasible flow, separately per class."""
    _require_constant(instance)
    out = {}
    for j, name in enumerate(instance.externality_names):
        res = solve_lp(_flow_lp(instance, instance.constant_g(j)).lp)
        assert isinstance(res, Optimal)
        out[name] = res.objective
    return out


def _budget_vector(instance: Instance, budget) -> tuple[Rational, ...]:
    J = instance.externality_names
    if isinstance(budget, Mapping):
        unknown = set(budget) - set(J)
        if unknown:
            raise ValueError(f"unknown externality classes: {sorted(unknown)}")
        missing = [j for j in J if j not in budget]
        if missing:
            raise ValueError(f"budget missing for classes {missing}")
        out = tuple(rational(budget[j]) for j in J)
    elif isinstance(budget, (list, tuple)):
        if len(budget) != len(J):
            raise ValueError(f"expected {len(J)} budget values")
        out = tuple(rational(b) for b in budget)
    else:
        if len(J) != 1:
            raise ValueError("a scalar budget needs a single externality class")
        out = (rational(budget),)
    if any(b < 0 for b in out):
        raise ValueError("budgets must be nonnegative")
    return out


def _feasible_flow(instance: Instance, B: Sequence[Rational]) -> Flow:
    """A feasible flow within budget, or :class:`InfeasibleBudget` with a certificate."""
    flp = _flow_lp(instance, [ZERO] * len(instance.edges))
    for j, name in enumerate(instance.externality_names):
        flp.lp.add_row(_load_row(flp, instance.constant_g(j)), LE, B[j])
        flp.labels.append(f"budget[{name}]")
    res = solve_lp(flp.lp)
    if isinstance(res, Infeasible):
        minima = min_feasible_budget(instance)
        cert = {lab: y for lab, y in zip(flp.labels, res.certificate) if y}
        short = [f"{n} needs >= {minima[n]}" for n, b in zip(instance.externality_names, B) if minima[n] > b]
        msg = "budget is infeasible" + (": " + ", ".join(short) if short else " (classes conflict jointly)")
        raise InfeasibleBudget(msg, cert, minima)
    return _flow_of(instance, flp, res.x)


# ---------------------------------------------------------------------------
# single price search


@dataclass
class PriceSearchReport:
    lambda_star: Rational
    flow: Flow
    iterations: int
    iteration_bound: int
    segment: tuple | None = None    # state interval containing lambda_star, if searched


def search_bound(instance: Instance, lam_hat: Rational) -> int:
    """Iteration bound ``ceil(log2((lam_hat + 1) (eta mu)^(2 eta)))`` of the bisection."""
    nI, nV, nE = len(instance.commodities), len(instance.nodes), len(instance.edges)
    eta = nI * nV + nI * nE + 1
    coeffs = [ZERO, ONE]
    for e in instance.edges:
        for p in e.pieces:
            coeffs += [p.slope, p.offset]
        coeffs += [x.g for x in e.externality.values()]
    s = lcm_of_denominators(coeffs)
    mu = max(max(abs(c) * s for c in coeffs), ONE)
    return ceil_log2((lam_hat + 1) / hadamard_bit_bound(mu, eta))


def _g_total(instance: Instance, flow: Flow) -> Rational:
    return total_externality(instance, flow)[instance.externality_names[0]]


def _interval_at(instance, lam, warm):
    res = solve_equilibrium(instance, lam, warm=warm)
    iv = compute_interval(instance, res.edge_state)
    g_lo = _g_total(instance, iv.flow_lo)
    g_hi = g_lo if iv.lambda_hi is None else _g_total(instance, iv.flow_hi)
    return res, iv, g_lo, g_hi


def min_price(instance: Instance, budget) -> PriceSearchReport:
    """Smallest price whose equilibrium keeps the total externality within ``budget``."""
    instance.require_constant_single_class()
    (B,) = _budget_vector(instance, budget)
    _feasible_flow(instance, (B,))
    lam_hat = lambda_max(instance)
    bound = search_bound(instance, lam_hat)
    base = solve_equilibrium(instance, ZERO)
    if _g_total(instance, base.flow) <= B:
        return PriceSearchReport(ZERO, base.flow, 0, bound)
    lo, hi = ZERO, lam_hat + 1
    right = solve_equilibrium(instance, hi, warm=base.warm)
    hi_flow = right.flow
    if _g_total(instance, hi_flow) > B:
        raise SearchFailure("budget is feasible but not met beyond the last breakpoint")
    warm = right.warm
    it = 0
    while lo < hi:
        it += 1
        if it > bound:
            raise SearchFailure(f"price search needed more than {bound} iterations")
        mid = (lo + hi) / 2
        res, iv, g_lo, g_hi = _interval_at(instance, mid, warm)
        warm = res.warm
        log.debug("min_price: mid=%s interval=[%s, %s] G=[%s, %s]", mid, iv.lambda_lo, iv.lambda_hi, g_lo, g_hi)
        if g_lo > B >= g_hi and iv.lambda_hi is not None and iv.lambda_hi > iv.lambda_lo:
            lam = iv.lambda_lo + (g_lo - B) * (iv.lambda_hi - iv.lambda_lo) / (g_lo - g_hi)
            return PriceSearchReport(lam, iv.flow_at(lam), it, bound, (iv.lambda_lo, iv.lambda_hi))
        if g_lo <= B:
            hi, hi_flow = iv.lambda_lo, iv.flow_lo
        elif g_hi > B:
            if iv.lambda_hi is None:
                raise SearchFailure("externality stays above the budget for all prices")
            lo = iv.lambda_hi
        else:
            # single-point interval whose equilibria straddle the budget
            hi, hi_flow = iv.lambda_hi, iv.flow_hi
    return PriceSearchReport(hi, hi_flow, it, bound)


@dataclass
class MarketInterval:
    lambda_lo: Rational
    lambda_hi: Rational | None      # None means unbounded
    flow_lo: Flow
    flow_hi: Flow | None
    iterations: int = 0


def market_price_interval(instance: Instance, credits) -> MarketInterval:
    """All prices at which a credit market with ``credits`` units clears."""
    instance.require_constant_single_class()
    (B,) = _budget_vector(instance, credits)
    name = instance.externality_names[0]
    b_min = min_feasible_budget(instance)[name]
    low = min_price(instance, B)
    base = solve_equilibrium(instance, ZERO)
    if _g_total(instance, base.flow) < B:
        return MarketInterval(ZERO, ZERO, base.flow, base.flow, low.iterations)
    if B == b_min:
        return MarketInterval(low.lambda_star, None, low.flow, None, low.iterations)
    lam_hat = lambda_max(instance)
    bound = search_bound(instance, lam_hat)
    lo, lo_flow = low.lambda_star, low.flow
    hi = lam_hat + 1
    warm = base.warm
    it = 0
    while lo < hi:
        it += 1
        if it > bound:
            raise SearchFailure(f"price search needed more than {bound} iterations")
        mid = (lo + hi) / 2
        res, iv, g_lo, g_hi = _interval_at(instance, mid, warm)
        warm = res.warm
        if g_lo >= B > g_hi and iv.lambda_hi is not None:
            lam = iv.lambda_lo + (g_lo - B) * (iv.lambda_hi - iv.lambda_lo) / (g_lo - g_hi)
            return MarketInterval(low.lambda_star, lam, low.flow, iv.flow_at(lam), low.iterations + it)
        if g_hi >= B:
            if iv.lambda_hi is None:
                raise CurveError("externality never drops below the credits although they exceed the minimum")
            lo, lo_flow = iv.lambda_hi, iv.flow_hi
        else:
            hi = iv.lambda_lo
    return MarketInterval(low.lambda_star, lo, low.flow, lo_flow, low.iterations + it)


# ---------------------------------------------------------------------------
# several classes


@dataclass
class BudgetImplementation:
    prices: dict[str, Rational]
    flow: Flow
    totals: dict[str, Rational]


def implement_budget(instance: Instance, budget) -> BudgetImplementation:
    """Prices implementing ``budget``, from the budget rows' multipliers.

    The flow minimizes the travel-time potential among feasible flows within
    budget; with those multipliers as prices it is an equilibrium.
    """
    _require_constant(instance)
    B = _budget_vector(instance, budget)
    start = _feasible_flow(instance, B)
    net = expand(instance, [ZERO] * len(B))
    rows = [(instance.constant_g(j), B[j]) for j in range(len(B))]
    sol = solve_expanded_qp(net, extra_le=rows, start_flow=start.values)
    flow = collapse_flow(sol)
    prices = dict(zip(instance.externality_names, sol.row_multipliers))
    return BudgetImplementation(prices, flow, total_externality(instance, flow))


def kkt_residuals(instance: Instance, flow: Flow, prices, budget) -> dict[str, Rational]:
    """Exact residuals of the budget program's optimality conditions (all zero at a solution)."""
    lam = instance.prices(prices)
    B = _budget_vector(instance, budget)
    costs = edge_costs(instance, flow.loads, lam)
    stat = ZERO
    for i in range(len(instance.commodities)):
        phi = shortest_distances(instance, i, costs)
        for k, x in enumerate(flow.values[i]):
            if x:
                e = instance.edges[k]
                stat += x * (costs[k] - (phi[e.head] - phi[e.tail]))
    G = total_externality(instance, flow)
    gaps = [G[n] - b for n, b in zip(instance.externality_names, B)]
    return {
        "stationarity": stat,
        "primal": sum((g for g in gaps if g > 0), ZERO),
        "dual": sum((-p for p in lam if p < 0), ZERO),
        "complementarity": sum((abs(p * g) for p, g in zip(lam, gaps)), ZERO),
    }


@dataclass
class Implementability:
    implementable: bool
    prices: dict[str, Rational] | None
    gap: Rational
    optimum: Rational


def check_implementable(instance: Instance, flow: Flow) -> Implementability:
    """Decide whether some prices make ``flow`` an equilibrium.

    Travel times and externality rates are frozen at the flow's loads; the
    flow is implementable exactly when it minimizes total travel time among
    flows whose frozen externalities do not exceed its own, and then the
    multipliers of those rows are implementing prices.
    """
    u = flow.loads
    tau = [e.travel_time(x) for e, x in zip(instance.edges, u)]
    flp = _flow_lp(instance, tau)
    rows = []
    for name in instance.externality_names:
        coeff = [e.ext(name).g + e.ext(name).gamma * x for e, x in zip(instance.edges, u)]
        rhs = sum((c * x for c, x in zip(coeff, u)), ZERO)
        rows.append(flp.lp.add_row(_load_row(flp, coeff), LE, rhs))
    res = solve_lp(flp.lp)
    assert isinstance(res, Optimal)
    own = sum((t * x for t, x in zip(tau, u)), ZERO)
    gap = own - res.objective
    if gap:
        return Implementability(False, None, gap, res.objective)
    prices = {name: -res.dual[r] for name, r in zip(instance.externality_names, rows)}
    return Implementability(True, prices, gap, res.objective)
