"""Wardrop equilibria at fixed prices.

Every edge is replaced by one parallel copy per travel-time piece. Copy ``k``
has the affine cost ``a_k * y + c(sigma_k)`` and capacity
``sigma_{k+1} - sigma_k`` (the last copy is uncapacitated). The equilibrium is
the minimizer of the quadratic potential of that network, found exactly by
:mod:`tollcast.qp`, and collapsing the copies gives the flow on the original
edges.

Copies with zero effective slope make the potential only weakly convex. They
are treated as having slope ``0 + eps`` for an infinitesimal ``eps > 0``; the
reported flow is the limit of the perturbed equilibria as ``eps -> 0``, which
is found by minimizing the ``eps``-part of the potential over the set of
unperturbed minimizers.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Sequence

from .exact import ZERO, Rational, rational
from .model import Flow, Instance, edge_cost, edge_costs
from .qp import QpResult, QuadraticProgram, solve_qp


class FillOrderError(RuntimeError):
    """Copies of an edge were not filled in piece order (internal error)."""


@dataclass(frozen=True)
class Copy:
    edge: int
    piece: int
    slope: Rational
    intercept: Rational
    capacity: Rational | None
    start: Rational


@dataclass(frozen=True)
class ExpandedNetwork:
    instance: Instance
    prices: tuple[Rational, ...]
    copies: tuple[Copy, ...]
    by_edge: tuple[tuple[int, ...], ...]

    @property
    def perturbed(self) -> bool:
        return any(c.slope == 0 for c in self.copies)


def expand(instance: Instance, lam) -> ExpandedNetwork:
    prices = instance.prices(lam)
    copies: list[Copy] = []
    by_edge = []
    for k, e in enumerate(instance.edges):
        extra = sum((p * e.ext(n).gamma for p, n in zip(prices, instance.externality_names)), ZERO)
        idx = []
        for q, piece in enumerate(e.pieces):
            last = q + 1 == len(e.pieces)
            cap = None if last else e.pieces[q + 1].breakpoint - piece.breakpoint
            idx.append(len(copies))
            copies.append(Copy(k, q, piece.slope + extra, edge_cost(instance, e, piece.breakpoint, prices), cap, piece.breakpoint))
        by_edge.append(tuple(idx))
    return ExpandedNetwork(instance, prices, tuple(copies), tuple(by_edge))


@dataclass(frozen=True)
class WarmStart:
    instance: Instance
    z: tuple
    free: tuple[int, ...]
    active_rows: tuple[int, ...]


@dataclass
class ExpandedSolution:
    network: ExpandedNetwork
    flows: tuple[tuple[Rational, ...], ...]      # commodity x copy
    duals: tuple[dict, ...]                      # commodity -> {node: pi}, pi at source = 0
    row_multipliers: tuple[Rational, ...]        # one per extra <= row
    warm: WarmStart
    perturbed: bool


class _Layout:
    """Variable numbering for (commodity, copy) pairs over relevant edges."""

    def __init__(self, net: ExpandedNetwork, order_seed: int | None = None):
        inst = net.instance
        self.vars: list[tuple[int, int]] = []
        self.node_rows: list[tuple[int, str]] = []
        self.relevant = []
        for i, c in enumerate(inst.commodities):
            nodes, edges = inst.relevant(i)
            self.relevant.append((nodes, edges))
            order = list(edges)
            if order_seed is not None:
                random.Random(order_seed + i).shuffle(order)
            for k in order:
                for cp in net.by_edge[k]:
                    self.vars.append((i, cp))
            for v in nodes:
                if v != c.target:
                    self.node_rows.append((i, v))
        self.index = {v: j for j, v in enumerate(self.vars)}


def _build_qp(net: ExpandedNetwork, layout: _Layout, extra_le: Sequence[tuple[Sequence, Rational]] = ()):
    inst = net.instance
    ncopy = len(net.copies)
    group = [cp for _, cp in layout.vars]
    h = [c.slope for c in net.copies]
    q = [net.copies[cp].intercept for _, cp in layout.vars]
    row_of = {key: r for r, key in enumerate(layout.node_rows)}
    eq_rows = [dict() for _ in layout.node_rows]
    eq_rhs = [ZERO] * len(layout.node_rows)
    for r, (i, v) in enumerate(layout.node_rows):
        if v == inst.commodities[i].source:
            eq_rhs[r] = inst.commodities[i].demand
    for j, (i, cp) in enumerate(layout.vars):
        e = inst.edges[net.copies[cp].edge]
        r = row_of.get((i, e.tail))
        if r is not None:
            eq_rows[r][j] = eq_rows[r].get(j, ZERO) + 1
        r = row_of.get((i, e.head))
        if r is not None:
            eq_rows[r][j] = eq_rows[r].get(j, ZERO) - 1
    eq_rows = [{j: v for j, v in row.items() if v} for row in eq_rows]
    le_rows, le_rhs = [], []
    cap_rows = {}
    for cp, c in enumerate(net.copies):
        if c.capacity is not None:
            row = {j: rational(1) for j, (_, cc) in enumerate(layout.vars) if cc == cp}
            if row:
                cap_rows[cp] = len(le_rows)
                le_rows.append(row)
                le_rhs.append(c.capacity)
    for coeff, rhs in extra_le:
        row = {}
        for j, (_, cp) in enumerate(layout.vars):
            a = coeff[net.copies[cp].edge]
            if a:
                row[j] = rational(a)
        le_rows.append(row)
        le_rhs.append(rational(rhs))
    del ncopy
    return QuadraticProgram(group, h, q, eq_rows, eq_rhs, le_rows, le_rhs), len(le_rows) - len(extra_le)


def _initial_point(net: ExpandedNetwork, layout: _Layout) -> list:
    """Route each commodity along a BFS path over uncapacitated last copies."""
    inst = net.instance
    z = [ZERO] * len(layout.vars)
    for i, c in enumerate(inst.commodities):
        _, edges = layout.relevant[i]
        allowed = set(edges)
        parent = {c.source: None}
        frontier = [c.source]
        while frontier and c.target not in parent:
            nxt = []
            for v in frontier:
                for k in inst.out_edges[v]:
                    w = inst.edges[k].head
                    if k in allowed and w not in parent:
                        parent[w] = k
                        nxt.append(w)
            frontier = nxt
        v = c.target
        while parent[v] is not None:
            k = parent[v]
            z[layout.index[(i, net.by_edge[k][-1])]] = c.demand
            v = inst.edges[k].tail
    return z


def _from_edge_flow(net: ExpandedNetwork, layout: _Layout, flow_values) -> list:
    """Spread an edge flow over copies in piece order, commodity by commodity."""
    z = [ZERO] * len(layout.vars)
    room = [c.capacity for c in net.copies]
    for i, row in enumerate(flow_values):
        for k, x in enumerate(row):
            if not x or (i, net.by_edge[k][0]) not in layout.index:
                continue
            for cp in net.by_edge[k]:
                take = x if room[cp] is None else min(x, room[cp])
                if take:
                    z[layout.index[(i, cp)]] += take
                    if room[cp] is not None:
                        room[cp] -= take
                    x -= take
                if not x:
                    break
    return z


def _lexicographic_stage(qp: QuadraticProgram, res: QpResult, net: ExpandedNetwork, layout: _Layout):
    """Minimize the eps-part of the perturbed potential over the optimal face."""
    keep = [j for j in range(qp.n) if not res.eta[j] > 0]
    pos = {j: t for t, j in enumerate(keep)}

    def restrict(row):
        return {pos[j]: v for j, v in row.items() if j in pos}

    eq_rows = [restrict(r) for r in qp.eq_rows]
    eq_rhs = list(qp.eq_rhs)
    L = qp.loads(res.z)
    members: dict[int, list[int]] = {}
    for j in keep:
        members.setdefault(qp.group[j], []).append(pos[j])
    for g, js in members.items():
        if qp.h[g]:
            eq_rows.append({t: rational(1) for t in js})
            eq_rhs.append(L[g])
    eq_rows.append({pos[j]: qp.q[j] for j in keep if qp.q[j]})
    eq_rhs.append(sum((qp.q[j] * res.z[j] for j in keep), ZERO))
    stage2 = QuadraticProgram(
        [qp.group[j] for j in keep],
        [rational(1)] * len(qp.h),
        [net.copies[layout.vars[j][1]].start for j in keep],
        eq_rows,
        eq_rhs,
        [restrict(r) for r in qp.le_rows],
        list(qp.le_rhs),
    )
    res2 = solve_qp(stage2, [res.z[j] for j in keep])
    z = [ZERO] * qp.n
    for t, j in enumerate(keep):
        z[j] = res2.z[t]
    return z


def solve_expanded_qp(
    net: ExpandedNetwork,
    warm: WarmStart | None = None,
    extra_le: Sequence[tuple[Sequence, Rational]] = (),
    start_flow=None,
    order_seed: int | None = None,
) -> ExpandedSolution:
    """Exact minimizer of the copy-network potential, plus node duals.

    ``extra_le`` adds rows ``sum_e coeff_e * x_e <= rhs`` on edge loads;
    their multipliers come back in ``row_multipliers``. ``start_flow`` gives
    per-commodity edge values of a feasible starting flow.
    """
    inst = net.instance
    layout = _Layout(net, order_seed)
    qp, ncap = _build_qp(net, layout, extra_le)
    if warm is not None and warm.instance is inst and len(warm.z) == qp.n and order_seed is None:
        res = solve_qp(qp, list(warm.z), warm.free, warm.active_rows)
    else:
        if start_flow is not None:
            z0 = _from_edge_flow(net, layout, start_flow)
        else:
            z0 = _initial_point(net, layout)
        res = solve_qp(qp, z0)
    z = res.z
    perturbed = net.perturbed
    if perturbed:
        z = _lexicographic_stage(qp, res, net, layout)
    flows = [[ZERO] * len(net.copies) for _ in inst.commodities]
    for j, (i, cp) in enumerate(layout.vars):
        flows[i][cp] = z[j]
    duals = []
    row_of = {key: r for r, key in enumerate(layout.node_rows)}
    for i, c in enumerate(inst.commodities):
        nodes, _ = layout.relevant[i]
        nu = {v: (res.nu[row_of[(i, v)]] if (i, v) in row_of else ZERO) for v in nodes}
        base = nu[c.source]
        duals.append({v: base - nu[v] for v in nodes})
    warm_out = WarmStart(inst, tuple(res.z), tuple(res.free), tuple(res.active_rows))
    return ExpandedSolution(
        net,
        tuple(tuple(r) for r in flows),
        tuple(duals),
        tuple(res.rho[ncap:]),
        warm_out,
        perturbed,
    )


def collapse_flow(sol: ExpandedSolution) -> Flow:
    """Sum copy flows per edge after checking that copies fill in piece order."""
    net = sol.network
    inst = net.instance
    loads = [sum((row[cp] for row in sol.flows), ZERO) for cp in range(len(net.copies))]
    for k, cps in enumerate(net.by_edge):
        for a, b in zip(cps, cps[1:]):
            if loads[b] > 0 and loads[a] != net.copies[a].capacity:
                raise FillOrderError(f"edge {inst.edges[k].id!r}: piece {net.copies[b].piece} used before piece {net.copies[a].piece} is full")
    rows = tuple(tuple(sum((row[cp] for cp in cps), ZERO) for cps in net.by_edge) for row in sol.flows)
    return Flow(inst, rows)


# ---------------------------------------------------------------------------
# potentials and edge states


@dataclass(frozen=True)
class EdgeState:
    support: frozenset            # of (commodity index, edge id)
    active_parts: tuple[int, ...]  # piece index per edge, in instance order

    def sort_key(self):
        return (tuple(sorted(self.support)), self.active_parts)


def shortest_distances(instance: Instance, i: int, costs: Sequence[Rational]) -> dict:
    """Bellman-Ford distances from the source of commodity ``i`` over its relevant subgraph."""
    nodes, edges = instance.relevant(i)
    dist = {v: None for v in nodes}
    dist[instance.commodities[i].source] = ZERO
    for _ in range(len(nodes)):
        changed = False
        for k in edges:
            e = instance.edges[k]
            du = dist[e.tail]
            if du is None:
                continue
            cand = du + costs[k]
            if dist[e.head] is None or cand < dist[e.head]:
                dist[e.head] = cand
                changed = True
        if not changed:
            break
    else:
        raise ValueError("negative cycle in edge costs")
    return dist


def extract_edge_state(instance: Instance, flow: Flow, lam, potentials=None) -> EdgeState:
    costs = edge_costs(instance, flow.loads, lam)
    if potentials is None:
        potentials = [shortest_distances(instance, i, costs) for i in range(len(instance.commodities))]
    support = set()
    for i in range(len(instance.commodities)):
        phi = potentials[i]
        for k in instance.relevant(i)[1]:
            e = instance.edges[k]
            if phi[e.head] - phi[e.tail] == costs[k]:
                support.add((i, e.id))
    parts = tuple(e.piece_index(x) for e, x in zip(instance.edges, flow.loads))
    return EdgeState(frozenset(support), parts)


@dataclass
class EquilibriumResult:
    flow: Flow
    potentials: tuple[dict, ...]
    prices: tuple[Rational, ...]
    edge_state: EdgeState
    perturbed: bool
    warm: WarmStart | None = None

    def min_path_cost(self, i: int = 0) -> Rational:
        return self.potentials[i][self.flow.instance.commodities[i].target]


def solve_equilibrium(instance: Instance, lam, warm: WarmStart | None = None, order_seed: int | None = None) -> EquilibriumResult:
    """Equilibrium flow at prices ``lam`` with shortest-path potentials and edge state.

    Edge loads are unique when every effective copy slope is positive; with
    zero slopes the limit of the slope-perturbed equilibria is returned and
    ``perturbed`` is set.
    """
    net = expand(instance, lam)
    sol = solve_expanded_qp(net, warm=warm, order_seed=order_seed)
    flow = collapse_flow(sol)
    costs = edge_costs(instance, flow.loads, net.prices)
    pots = tuple(shortest_distances(instance, i, costs) for i in range(len(instance.commodities)))
    state = extract_edge_state(instance, flow, net.prices, pots)
    return EquilibriumResult(flow, pots, net.prices, state, sol.perturbed, sol.warm)
