"""The equilibrium curve ``lambda -> x(lambda)`` for a single constant externality.

For a fixed edge state (support and active pieces) the pairs ``(x, lambda)``
that are equilibria with that state form a polyhedron, described by the
linear program built in :func:`state_lp`. Minimizing and maximizing
``lambda`` over it gives the state's price interval together with one
equilibrium at each end, and every point of the interval is reached by
interpolating between the two. The tracer solves the equilibrium at a few
prices, takes the state intervals there, and bisects the remaining gaps until
the intervals cover ``[0, inf)``.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

from .equilibrium import EdgeState, WarmStart, solve_equilibrium
from .exact import ONE, ZERO, Rational, lcm_of_denominators, rational
from .lp import EQ, GE, LE, Infeasible, LinearProgram, LpOutcome, Optimal, Unbounded, solve_lp
from .model import Flow, Instance, potential, total_externality

log = logging.getLogger(__name__)


class CurveError(RuntimeError):
    """Internal inconsistency while tracing (a state without equilibria, runaway recursion)."""


@dataclass
class StateLp:
    lp: LinearProgram
    x: dict            # (commodity, edge index) -> variable
    pi: dict           # (commodity, node) -> variable
    lam: int


def state_lp(instance: Instance, state: EdgeState, sense: str = "max") -> StateLp:
    """Linear program over (x, pi, lambda) for the given edge state."""
    instance.require_constant_single_class()
    if sense not in ("min", "max"):
        raise ValueError("sense must be 'min' or 'max'")
    g = instance.constant_g()
    lp = LinearProgram(maximize=(sense == "max"))
    xs, pis = {}, {}
    relevant = [instance.relevant(i) for i in range(len(instance.commodities))]
    for i, (nodes, edges) in enumerate(relevant):
        for k in edges:
            on = (i, instance.edges[k].id) in state.support
            xs[(i, k)] = lp.add_variable(0, 0, None if on else 0, f"x[{i},{instance.edges[k].id}]")
        for v in nodes:
            pis[(i, v)] = lp.add_variable(0, None, None, f"pi[{i},{v}]")
    lam = lp.add_variable(1, 0, None, "lambda")
    users: dict[int, list[int]] = {}
    for (i, k), var in xs.items():
        users.setdefault(k, []).append(var)
    for i, (nodes, edges) in enumerate(relevant):
        c = instance.commodities[i]
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
        for k in edges:
            e = instance.edges[k]
            piece = e.pieces[state.active_parts[k]]
            row = {pis[(i, e.head)]: ONE, pis[(i, e.tail)]: -ONE}
            for var in users[k]:
                row[var] = row.get(var, ZERO) - piece.slope
            if g[k]:
                row[lam] = -g[k]
            lp.add_row(row, EQ if (i, e.id) in state.support else LE, piece.offset)
    for k, e in enumerate(instance.edges):
        part = state.active_parts[k]
        row = {var: ONE for var in users.get(k, [])}
        lo = e.pieces[part].breakpoint
        if lo or not row:
            lp.add_row(row, GE, lo)
        if part + 1 < len(e.pieces):
            lp.add_row(row, LE, e.pieces[part + 1].breakpoint)
    return StateLp(lp, xs, pis, lam)


def state_interval(instance: Instance, state: EdgeState, sense: str = "max") -> LpOutcome:
    """Solve the state program; ``Infeasible`` means no price has this state."""
    return solve_lp(state_lp(instance, state, sense).lp)


def _flow_from(instance: Instance, slp: StateLp, point: Sequence) -> Flow:
    rows = [[ZERO] * len(instance.edges) for _ in instance.commodities]
    for (i, k), var in slp.x.items():
        rows[i][k] = point[var]
    return Flow(instance, tuple(tuple(r) for r in rows))


@dataclass
class StateInterval:
    state: EdgeState
    lambda_lo: Rational
    lambda_hi: Rational | None          # None means +inf
    flow_lo: Flow
    flow_hi: Flow | None
    ray: tuple | None = None            # d x / d lambda when unbounded

    def flow_at(self, lam) -> Flow:
        lam = rational(lam)
        if lam < self.lambda_lo or (self.lambda_hi is not None and lam > self.lambda_hi):
            raise ValueError(f"{lam} is outside [{self.lambda_lo}, {self.lambda_hi}]")
        if lam == self.lambda_lo:
            return self.flow_lo
        if self.lambda_hi is None:
            return _along(self.flow_lo, self.ray, lam - self.lambda_lo)
        if lam == self.lambda_hi:
            return self.flow_hi
        w = (lam - self.lambda_lo) / (self.lambda_hi - self.lambda_lo)
        return self.flow_lo.combine(self.flow_hi, w)


def _along(base: Flow, ray, t) -> Flow:
    if not any(any(r) for r in ray):
        return base
    rows = tuple(tuple(b + t * d for b, d in zip(rb, rd)) for rb, rd in zip(base.values, ray))
    return Flow(base.instance, rows)


def compute_interval(instance: Instance, state: EdgeState) -> StateInterval:
    lo_lp = state_lp(instance, state, "min")
    lo = solve_lp(lo_lp.lp)
    if not isinstance(lo, Optimal):
        raise CurveError(f"state has no equilibrium price ({lo.status})")
    flow_lo = _flow_from(instance, lo_lp, lo.x)
    hi_lp = state_lp(instance, state, "max")
    hi = solve_lp(hi_lp.lp)
    if isinstance(hi, Unbounded):
        dl = hi.ray[hi_lp.lam]
        ray = [[ZERO] * len(instance.edges) for _ in instance.commodities]
        for (i, k), var in hi_lp.x.items():
            ray[i][k] = hi.ray[var] / dl
        return StateInterval(state, lo.objective, None, flow_lo, None, tuple(tuple(r) for r in ray))
    if not isinstance(hi, Optimal):
        raise CurveError("state program became infeasible when maximizing")
    return StateInterval(state, lo.objective, hi.objective, flow_lo, _flow_from(instance, hi_lp, hi.x))


# ---------------------------------------------------------------------------


def _same_g_on_all_paths(instance: Instance, i: int, g) -> bool:
    nodes, edges = instance.relevant(i)
    pot = {instance.commodities[i].source: ZERO}
    adj: dict[str, list[int]] = {v: [] for v in nodes}
    for k in edges:
        adj[instance.edges[k].tail].append(k)
        adj[instance.edges[k].head].append(k)
    queue = deque([instance.commodities[i].source])
    while queue:
        v = queue.popleft()
        for k in adj[v]:
            e = instance.edges[k]
            other, val = (e.head, pot[v] + g[k]) if e.tail == v else (e.tail, pot[v] - g[k])
            if other not in pot:
                pot[other] = val
                queue.append(other)
            elif pot[other] != val:
                return False
    return True


def lambda_max(instance: Instance) -> Rational:
    """A price beyond which the equilibrium no longer changes.

    ``s * sum_e max(c_e(D), b_{e,K} + a_{e,K} D) + 1`` where ``D`` is the
    total demand and ``1/s`` the granularity of the externality values; zero
    when every commodity sees the same externality on all of its paths.
    """
    instance.require_constant_single_class()
    g = instance.constant_g()
    if all(_same_g_on_all_paths(instance, i, g) for i in range(len(instance.commodities))):
        return ZERO
    s = lcm_of_denominators(g)
    D = instance.total_demand
    total = ZERO
    for e in instance.edges:
        last = e.pieces[-1]
        total += max(e.travel_time(D), last.slope * D + last.offset)
    return s * total + 1


@dataclass
class Segment:
    lambda_lo: Rational
    lambda_hi: Rational
    flow_lo: Flow
    flow_hi: Flow
    state: EdgeState

    def at(self, lam) -> Flow:
        w = (lam - self.lambda_lo) / (self.lambda_hi - self.lambda_lo)
        return self.flow_lo.combine(self.flow_hi, w)


@dataclass
class Terminal:
    lambda_start: Rational
    base: Flow
    ray: tuple
    state: EdgeState


@dataclass
class EquilibriumCurve:
    instance: Instance
    breakpoints: list[tuple[Rational, Flow]]
    segments: list[Segment]
    terminal: Terminal
    intervals: list[StateInterval] = field(default_factory=list)
    perturbed: bool = False
    solves: int = 0

    @property
    def breakpoint_lambdas(self) -> list[Rational]:
        return [lam for lam, _ in self.breakpoints]

    def evaluate(self, lam) -> Flow:
        lam = rational(lam)
        if lam < 0:
            raise ValueError("lambda must be nonnegative")
        if lam == self.terminal.lambda_start:
            return self.breakpoints[-1][1]
        if lam > self.terminal.lambda_start:
            return _along(self.terminal.base, self.terminal.ray, lam - self.terminal.lambda_start)
        lo, hi = 0, len(self.segments) - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if self.segments[mid].lambda_hi < lam:
                lo = mid + 1
            else:
                hi = mid
        seg = self.segments[lo]
        if lam == seg.lambda_lo:
            return self.breakpoints[lo][1]
        if lam == seg.lambda_hi:
            return self.breakpoints[lo + 1][1]
        return seg.at(lam)


def state_count_bound(instance: Instance) -> int:
    nI, nE = len(instance.commodities), len(instance.edges)
    return 2 ** (nI * nE) * instance.max_pieces ** nE


def trace_curve(instance: Instance) -> EquilibriumCurve:
    """All breakpoints of the equilibrium curve plus its terminal ray.

    With zero-slope pieces the curve follows the perturbed equilibrium
    selection at each solve and ``perturbed`` is set; every evaluated point is
    still an equilibrium.
    """
    instance.require_constant_single_class()
    cap = state_count_bound(instance) + 2
    warm: list[WarmStart | None] = [None]
    solves = [0]
    perturbed = [False]

    def interval_at(lam) -> StateInterval:
        res = solve_equilibrium(instance, lam, warm=warm[0])
        warm[0] = res.warm
        solves[0] += 1
        perturbed[0] |= res.perturbed
        if solves[0] > cap:
            raise CurveError("more solves than the state-count bound allows")
        iv = compute_interval(instance, res.edge_state)
        if not (iv.lambda_lo <= lam and (iv.lambda_hi is None or lam <= iv.lambda_hi)):
            raise CurveError(f"state found at {lam} has interval [{iv.lambda_lo}, {iv.lambda_hi}]")
        log.debug("lambda=%s: state interval [%s, %s]", lam, iv.lambda_lo, iv.lambda_hi)
        return iv

    intervals = [interval_at(ZERO)]
    if intervals[0].lambda_hi is not None:
        lam_r = lambda_max(instance) + 1
        while True:
            iv = interval_at(lam_r)
            intervals.append(iv)
            if iv.lambda_hi is None:
                break
            log.warning("price %s is not beyond the last breakpoint; moving right", lam_r)
            lam_r = iv.lambda_hi + 1

    def key(iv):
        return (iv.lambda_lo, iv.lambda_hi is None, iv.lambda_hi or ZERO)

    intervals.sort(key=key)
    while True:
        gap = None
        reach = intervals[0].lambda_hi
        for iv in intervals[1:]:
            if reach is None:
                break
            if reach < iv.lambda_lo:
                gap = (reach, iv.lambda_lo)
                break
            if iv.lambda_hi is None or iv.lambda_hi > reach:
                reach = iv.lambda_hi
        if gap is None:
            break
        intervals.append(interval_at((gap[0] + gap[1]) / 2))
        intervals.sort(key=key)

    breakpoints: list[tuple[Rational, Flow]] = []
    segments: list[Segment] = []
    cur = ZERO
    terminal = None
    for iv in intervals:
        if iv.lambda_hi is not None and iv.lambda_hi <= cur and not (cur == 0 and not breakpoints):
            continue
        start_flow = iv.flow_at(cur)
        if not breakpoints:
            breakpoints.append((cur, start_flow))
        if iv.lambda_hi is None:
            terminal = Terminal(cur, start_flow, iv.ray, iv.state)
            break
        if iv.lambda_hi == cur:
            continue
        segments.append(Segment(cur, iv.lambda_hi, start_flow, iv.flow_hi, iv.state))
        breakpoints.append((iv.lambda_hi, iv.flow_hi))
        cur = iv.lambda_hi
    if terminal is None:
        raise CurveError("no unbounded state interval found")
    return EquilibriumCurve(instance, breakpoints, segments, terminal, intervals, perturbed[0], solves[0])


def curve_to_dict(curve: EquilibriumCurve) -> dict:
    from .exact import format_rational as f
    from .model import flow_to_dict

    inst = curve.instance
    out = []
    for lam, flow in curve.breakpoints:
        d = flow_to_dict(flow)
        out.append({"lambda": f(lam), "flow": d["flow"], "edge_loads": d["edge_loads"], "G": d["G"], "Phi": d["Phi"]})
    t = curve.terminal
    ray = {str(i): {e.id: f(v) for e, v in zip(inst.edges, row) if v} for i, row in enumerate(t.ray)}
    return {
        "breakpoints": out,
        "terminal": {"lambda_start": f(t.lambda_start), "base": flow_to_dict(t.base)["flow"], "ray": ray},
        "perturbed": curve.perturbed,
    }


def curve_rows(curve: EquilibriumCurve, grid: Sequence = ()) -> list[tuple]:
    """(lambda, edge loads..., G, Phi) at every breakpoint and grid price, sorted by lambda."""
    inst = curve.instance
    name = inst.externality_names[0]
    lams = sorted(set(curve.breakpoint_lambdas) | {rational(x) for x in grid})
    rows = []
    for lam in lams:
        fl = curve.evaluate(lam)
        rows.append((lam, *fl.loads, total_externality(inst, fl)[name], potential(inst, fl)))
    return rows
