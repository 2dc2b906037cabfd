"""Network instances, flows, and the quantities evaluated on them."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .exact import ONE, ZERO, Rational, format_rational, rational


class InstanceError(ValueError):
    """An instance violates the schema; ``path`` locates the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


class FlowError(ValueError):
    pass


class PathLimitExceeded(RuntimeError):
    pass


class UnsupportedExternality(ValueError):
    """The requested operation needs constant, single-class externalities."""


@dataclass(frozen=True)
class Piece:
    breakpoint: Rational
    slope: Rational
    offset: Rational

    def value(self, load) -> Rational:
        return self.slope * load + self.offset


@dataclass(frozen=True)
class Externality:
    g: Rational = ZERO
    gamma: Rational = ZERO


@dataclass(frozen=True, eq=False)
class Edge:
    id: str
    tail: str
    head: str
    pieces: tuple[Piece, ...]
    externality: Mapping[str, Externality] = field(default_factory=dict)

    def piece_index(self, load) -> int:
        """Index ``k`` with ``breakpoint_k <= load < breakpoint_{k+1}``."""
        k = 0
        for i, p in enumerate(self.pieces):
            if p.breakpoint <= load:
                k = i
            else:
                break
        return k

    def travel_time(self, load) -> Rational:
        return self.pieces[self.piece_index(load)].value(load)

    def travel_time_integral(self, load) -> Rational:
        total = ZERO
        for k, p in enumerate(self.pieces):
            lo = p.breakpoint
            if lo >= load:
                break
            hi = load
            if k + 1 < len(self.pieces):
                hi = min(hi, self.pieces[k + 1].breakpoint)
            total += p.slope * (hi * hi - lo * lo) / 2 + p.offset * (hi - lo)
        return total

    def ext(self, name: str) -> Externality:
        return self.externality.get(name, _NO_EXTERNALITY)


_NO_EXTERNALITY = Externality()


@dataclass(frozen=True)
class Commodity:
    source: str
    target: str
    demand: Rational


@dataclass(frozen=True, eq=False)
class Instance:
    nodes: tuple[str, ...]
    edges: tuple[Edge, ...]
    commodities: tuple[Commodity, ...]
    externality_names: tuple[str, ...] = ("default",)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))
        object.__setattr__(self, "commodities", tuple(self.commodities))
        object.__setattr__(self, "externality_names", tuple(self.externality_names))
        _validate(self)
        object.__setattr__(self, "_edge_index", {e.id: k for k, e in enumerate(self.edges)})
        out: dict[str, list[int]] = {v: [] for v in self.nodes}
        into: dict[str, list[int]] = {v: [] for v in self.nodes}
        for k, e in enumerate(self.edges):
            out[e.tail].append(k)
            into[e.head].append(k)
        object.__setattr__(self, "out_edges", out)
        object.__setattr__(self, "in_edges", into)

    def edge_index(self, edge_id: str) -> int:
        return self._edge_index[edge_id]

    def edge(self, edge_id: str) -> Edge:
        return self.edges[self._edge_index[edge_id]]

    @property
    def total_demand(self) -> Rational:
        return sum((c.demand for c in self.commodities), ZERO)

    @property
    def has_affine_externality(self) -> bool:
        return any(x.gamma != 0 for e in self.edges for x in e.externality.values())

    @property
    def max_pieces(self) -> int:
        return max((len(e.pieces) for e in self.edges), default=1)

    def prices(self, lam) -> tuple[Rational, ...]:
        """Normalize a price argument into a tuple aligned with the classes.

        ``lam`` may be a scalar (single class), a sequence, or a mapping from
        class name to price; missing classes are priced at zero.
        """
        J = self.externality_names
        if isinstance(lam, Mapping):
            unknown = set(lam) - set(J)
            if unknown:
                raise ValueError(f"unknown externality classes: {sorted(unknown)}")
            out = tuple(rational(lam.get(j, 0)) for j in J)
        elif isinstance(lam, (list, tuple)):
            if len(lam) != len(J):
                raise ValueError(f"expected {len(J)} prices, got {len(lam)}")
            out = tuple(rational(v) for v in lam)
        else:
            if len(J) != 1:
                raise ValueError("a scalar price needs a single externality class")
            out = (rational(lam),)
        if any(v < 0 for v in out):
            raise ValueError("prices must be nonnegative")
        return out

    def require_constant_single_class(self):
        if self.has_affine_externality:
            raise UnsupportedExternality("flow-dependent (affine) externalities are not supported here")
        if len(self.externality_names) != 1:
            raise UnsupportedExternality("this operation needs exactly one externality class")

    def constant_g(self, j: int = 0) -> tuple[Rational, ...]:
        name = self.externality_names[j]
        return tuple(e.ext(name).g for e in self.edges)

    def relevant(self, i: int) -> tuple[list[str], list[int]]:
        """Nodes and edge indices lying on some source-to-target walk of commodity ``i``."""
        c = self.commodities[i]
        fwd = _reach(c.source, self.out_edges, self.edges, "head")
        bwd = _reach(c.target, self.in_edges, self.edges, "tail")
        nodes = [v for v in self.nodes if v in fwd and v in bwd]
        keep = set(nodes)
        edges = [k for k, e in enumerate(self.edges) if e.tail in keep and e.head in keep]
        return nodes, edges


def _reach(start, adj, edges, attr):
    seen = {start}
    queue = deque([start])
    while queue:
        v = queue.popleft()
        for k in adj[v]:
            w = getattr(edges[k], attr)
            if w not in seen:
                seen.add(w)
                queue.append(w)
    return seen


def _validate(inst: Instance):
    if len(set(inst.nodes)) != len(inst.nodes):
        raise InstanceError("nodes", "duplicate node ids")
    if not inst.externality_names:
        raise InstanceError("externalities", "at least one externality class is required")
    if len(set(inst.externality_names)) != len(inst.externality_names):
        raise InstanceError("externalities", "duplicate class names")
    nodes = set(inst.nodes)
    ids = set()
    for k, e in enumerate(inst.edges):
        where = f"edges[{k}]"
        if e.id in ids:
            raise InstanceError(f"{where}.id", f"duplicate edge id {e.id!r}")
        ids.add(e.id)
        for attr in ("tail", "head"):
            if getattr(e, attr) not in nodes:
                raise InstanceError(f"{where}.{attr}", f"unknown node {getattr(e, attr)!r}")
        if not e.pieces:
            raise InstanceError(f"{where}.pieces", "at least one piece is required")
        if e.pieces[0].breakpoint != 0:
            raise InstanceError(f"{where}.pieces[0].breakpoint", "first breakpoint must be 0")
        if e.pieces[0].offset < 0:
            raise InstanceError(f"{where}.pieces[0].offset", "travel time at zero load must be >= 0")
        for q, p in enumerate(e.pieces):
            if p.slope < 0:
                raise InstanceError(f"{where}.pieces[{q}].slope", "slopes must be >= 0")
            if q:
                prev = e.pieces[q - 1]
                if p.breakpoint <= prev.breakpoint:
                    raise InstanceError(f"{where}.pieces[{q}].breakpoint", "breakpoints must be strictly increasing")
                if prev.value(p.breakpoint) != p.value(p.breakpoint):
                    raise InstanceError(f"{where}.pieces[{q}]", "travel time is discontinuous at this breakpoint")
        for name, x in e.externality.items():
            if name not in inst.externality_names:
                raise InstanceError(f"{where}.externality.{name}", "unknown externality class")
            if x.g < 0 or x.gamma < 0:
                raise InstanceError(f"{where}.externality.{name}", "externality coefficients must be >= 0")
    if not inst.commodities:
        raise InstanceError("commodities", "at least one commodity is required")
    for i, c in enumerate(inst.commodities):
        where = f"commodities[{i}]"
        for attr in ("source", "target"):
            if getattr(c, attr) not in nodes:
                raise InstanceError(f"{where}.{attr}", f"unknown node {getattr(c, attr)!r}")
        if c.source == c.target:
            raise InstanceError(where, "source and target must differ")
        if c.demand <= 0:
            raise InstanceError(f"{where}.demand", "demand must be positive")
        adj: dict[str, list[str]] = {v: [] for v in inst.nodes}
        for e in inst.edges:
            adj[e.tail].append(e.head)
        seen, stack = {c.source}, [c.source]
        while stack:
            v = stack.pop()
            for w in adj[v]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        if c.target not in seen:
            raise InstanceError(where, "target is unreachable from source")


# ---------------------------------------------------------------------------
# flows


@dataclass(frozen=True, eq=False)
class Flow:
    """Edge-based multi-commodity flow; ``values[i][k]`` is commodity ``i`` on edge ``k``."""

    instance: Instance
    values: tuple[tuple[Rational, ...], ...]

    def __post_init__(self):
        inst = self.instance
        vals = tuple(tuple(rational(v) for v in row) for row in self.values)
        object.__setattr__(self, "values", vals)
        if len(vals) != len(inst.commodities) or any(len(r) != len(inst.edges) for r in vals):
            raise FlowError("flow shape does not match the instance")
        for i, (c, row) in enumerate(zip(inst.commodities, vals)):
            if any(v < 0 for v in row):
                raise FlowError(f"commodity {i} has a negative edge flow")
            for v in inst.nodes:
                net = sum((row[k] for k in inst.out_edges[v]), ZERO) - sum((row[k] for k in inst.in_edges[v]), ZERO)
                want = c.demand if v == c.source else (-c.demand if v == c.target else ZERO)
                if net != want:
                    raise FlowError(f"commodity {i} violates conservation at node {v!r}: {net} != {want}")
        object.__setattr__(self, "loads", tuple(sum(col, ZERO) for col in zip(*vals)))

    @classmethod
    def from_mapping(cls, instance: Instance, data: Mapping) -> "Flow":
        """Build from ``{commodity index: {edge id: value}}``; missing entries are zero."""
        rows = [[ZERO] * len(instance.edges) for _ in instance.commodities]
        for i, per_edge in data.items():
            i = int(i)
            if not 0 <= i < len(rows):
                raise FlowError(f"unknown commodity index {i}")
            for eid, v in per_edge.items():
                if eid not in instance._edge_index:
                    raise FlowError(f"unknown edge id {eid!r}")
                rows[i][instance.edge_index(eid)] = rational(v)
        return cls(instance, tuple(tuple(r) for r in rows))

    def load(self, edge_id: str) -> Rational:
        return self.loads[self.instance.edge_index(edge_id)]

    def same_loads(self, other: "Flow") -> bool:
        return self.loads == other.loads

    def combine(self, other: "Flow", weight) -> "Flow":
        """``(1 - weight) * self + weight * other``."""
        w = rational(weight)
        rows = tuple(
            tuple(a + w * (b - a) for a, b in zip(r1, r2)) for r1, r2 in zip(self.values, other.values)
        )
        return Flow(self.instance, rows)


def edge_cost(instance: Instance, edge: Edge | str, load, lam) -> Rational:
    """Cost of one unit on ``edge`` at the given load and prices."""
    if isinstance(edge, str):
        edge = instance.edge(edge)
    load = rational(load)
    if load < 0:
        raise ValueError("load must be nonnegative")
    prices = instance.prices(lam)
    cost = edge.travel_time(load)
    for name, p in zip(instance.externality_names, prices):
        if p:
            x = edge.ext(name)
            cost += p * (x.g + x.gamma * load)
    return cost


def edge_costs(instance: Instance, loads: Sequence, lam) -> tuple[Rational, ...]:
    return tuple(edge_cost(instance, e, x, lam) for e, x in zip(instance.edges, loads))


def total_externality(instance: Instance, flow: Flow) -> dict[str, Rational]:
    out = {}
    for name in instance.externality_names:
        total = ZERO
        for e, x in zip(instance.edges, flow.loads):
            ext = e.ext(name)
            total += (ext.g + ext.gamma * x) * x
        out[name] = total
    return out


def externality_potential(instance: Instance, flow: Flow) -> dict[str, Rational]:
    out = {}
    for name in instance.externality_names:
        total = ZERO
        for e, x in zip(instance.edges, flow.loads):
            ext = e.ext(name)
            total += ext.g * x + ext.gamma * x * x / 2
        out[name] = total
    return out


def potential(instance: Instance, flow: Flow, lam=None) -> Rational:
    """Beckmann potential of the priced costs; ``lam=None`` means zero prices."""
    phi = sum((e.travel_time_integral(x) for e, x in zip(instance.edges, flow.loads)), ZERO)
    if lam is None:
        return phi
    prices = instance.prices(lam)
    psi = externality_potential(instance, flow)
    return phi + sum((p * psi[j] for p, j in zip(prices, instance.externality_names)), ZERO)


# ---------------------------------------------------------------------------
# path oracle


def enumerate_paths(instance: Instance, commodity: int | Commodity, cap: int = 10_000) -> list[tuple[str, ...]]:
    """All simple source-target paths as edge-id tuples, in lexicographic order."""
    c = instance.commodities[commodity] if isinstance(commodity, int) else commodity
    out_sorted = {v: sorted(instance.out_edges[v], key=lambda k: instance.edges[k].id) for v in instance.nodes}
    paths: list[tuple[str, ...]] = []
    visited = {c.source}
    stack: list[str] = []

    def walk(v):
        if v == c.target:
            paths.append(tuple(stack))
            if len(paths) > cap:
                raise PathLimitExceeded(f"more than {cap} paths")
            return
        for k in out_sorted[v]:
            e = instance.edges[k]
            if e.head in visited:
                continue
            visited.add(e.head)
            stack.append(e.id)
            walk(e.head)
            stack.pop()
            visited.discard(e.head)

    walk(c.source)
    return paths


@dataclass(frozen=True)
class WardropCheck:
    ok: bool
    commodity: int | None = None
    used_path: tuple[str, ...] | None = None
    used_cost: Rational | None = None
    better_path: tuple[str, ...] | None = None
    better_cost: Rational | None = None
    reason: str = ""

    def __bool__(self):
        return self.ok


def _decompose(instance: Instance, i: int, row: Sequence[Rational]):
    """Split one commodity's edge flow into source-target paths; None if it has a cycle."""
    c = instance.commodities[i]
    rem = list(row)
    paths = []
    while True:
        out_total = sum((rem[k] for k in instance.out_edges[c.source]), ZERO) - sum(
            (rem[k] for k in instance.in_edges[c.source]), ZERO
        )
        if out_total <= 0:
            break
        parent = {c.source: None}
        queue = deque([c.source])
        while queue and c.target not in parent:
            v = queue.popleft()
            for k in sorted(instance.out_edges[v], key=lambda k: instance.edges[k].id):
                w = instance.edges[k].head
                if rem[k] > 0 and w not in parent:
                    parent[w] = k
                    queue.append(w)
        if c.target not in parent:
            return None
        path, v = [], c.target
        while parent[v] is not None:
            path.append(parent[v])
            v = instance.edges[parent[v]].tail
        path.reverse()
        amount = min(rem[k] for k in path)
        for k in path:
            rem[k] -= amount
        paths.append((tuple(path), amount))
    if any(r != 0 for r in rem):
        return None
    return paths


def verify_wardrop(instance: Instance, flow: Flow, lam, cap: int = 10_000) -> WardropCheck:
    """Check the Wardrop condition by explicit path enumeration.

    The flow of every commodity is decomposed into simple paths; each of those
    must cost exactly the minimum over all enumerated paths of the commodity.
    Leftover circulation after the decomposition is rejected. Any cycle made
    of tight edges has zero cost, so with positive costs this never rejects an
    equilibrium.
    """
    costs = {e.id: edge_cost(instance, e, x, lam) for e, x in zip(instance.edges, flow.loads)}
    for i in range(len(instance.commodities)):
        paths = enumerate_paths(instance, i, cap)
        priced = [(sum((costs[eid] for eid in p), ZERO), p) for p in paths]
        best_cost, best_path = min(priced, key=lambda t: t[0])
        parts = _decompose(instance, i, flow.values[i])
        if parts is None:
            return WardropCheck(False, commodity=i, reason="flow contains a circulation")
        for ks, _ in parts:
            p = tuple(instance.edges[k].id for k in ks)
            cost = sum((costs[eid] for eid in p), ZERO)
            if cost != best_cost:
                return WardropCheck(False, i, p, cost, best_path, best_cost, "flow on a non-shortest path")
    return WardropCheck(True)


# ---------------------------------------------------------------------------
# JSON


def instance_from_dict(data: Mapping) -> Instance:
    def need(obj, key, where):
        if not isinstance(obj, Mapping) or key not in obj:
            raise InstanceError(where, f"missing key {key!r}")
        return obj[key]

    def num(v, where):
        if not isinstance(v, str):
            raise InstanceError(where, "numbers must be rational strings")
        try:
            return rational(v)
        except (ValueError, ZeroDivisionError) as exc:
            raise InstanceError(where, str(exc)) from None

    nodes = need(data, "nodes", "nodes")
    if not isinstance(nodes, list) or not all(isinstance(v, str) for v in nodes):
        raise InstanceError("nodes", "must be an array of strings")
    classes = data.get("externalities", ["default"])
    if not isinstance(classes, list) or not all(isinstance(v, str) for v in classes):
        raise InstanceError("externalities", "must be an array of strings")
    edges = []
    for k, raw in enumerate(need(data, "edges", "edges")):
        where = f"edges[{k}]"
        pieces = []
        for q, rp in enumerate(need(raw, "pieces", where)):
            pw = f"{where}.pieces[{q}]"
            pieces.append(
                Piece(
                    num(need(rp, "breakpoint", pw), f"{pw}.breakpoint"),
                    num(need(rp, "slope", pw), f"{pw}.slope"),
                    num(need(rp, "offset", pw), f"{pw}.offset"),
                )
            )
        ext = {}
        for name, rx in (raw.get("externality") or {}).items():
            xw = f"{where}.externality.{name}"
            ext[name] = Externality(num(need(rx, "g", xw), f"{xw}.g"), num(rx.get("gamma", "0"), f"{xw}.gamma"))
        edges.append(Edge(str(need(raw, "id", where)), need(raw, "tail", where), need(raw, "head", where), tuple(pieces), ext))
    commodities = []
    for i, rc in enumerate(need(data, "commodities", "commodities")):
        where = f"commodities[{i}]"
        commodities.append(
            Commodity(need(rc, "source", where), need(rc, "target", where), num(need(rc, "demand", where), f"{where}.demand"))
        )
    return Instance(tuple(nodes), tuple(edges), tuple(commodities), tuple(classes))


def load_instance(path: str | Path) -> Instance:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InstanceError("$", f"invalid JSON: {exc}") from None
    return instance_from_dict(data)


def instance_to_dict(instance: Instance) -> dict:
    f = format_rational
    return {
        "nodes": list(instance.nodes),
        "externalities": list(instance.externality_names),
        "edges": [
            {
                "id": e.id,
                "tail": e.tail,
                "head": e.head,
                "pieces": [{"breakpoint": f(p.breakpoint), "slope": f(p.slope), "offset": f(p.offset)} for p in e.pieces],
                "externality": {
                    n: ({"g": f(x.g), "gamma": f(x.gamma)} if x.gamma else {"g": f(x.g)}) for n, x in e.externality.items()
                },
            }
            for e in instance.edges
        ],
        "commodities": [
            {"source": c.source, "target": c.target, "demand": f(c.demand)} for c in instance.commodities
        ],
    }


def flow_to_dict(flow: Flow) -> dict:
    inst = flow.instance
    f = format_rational
    return {
        "flow": {
            str(i): {e.id: f(v) for e, v in zip(inst.edges, row) if v != 0} for i, row in enumerate(flow.values)
        },
        "edge_loads": {e.id: f(x) for e, x in zip(inst.edges, flow.loads)},
        "G": {k: f(v) for k, v in total_externality(inst, flow).items()},
        "Phi": f(potential(inst, flow)),
    }


def flow_from_dict(instance: Instance, data: Mapping) -> Flow:
    body = data.get("flow", data)
    return Flow.from_mapping(instance, body)


def single_edge_instance(slope=ONE, offset=ZERO, g=ZERO, demand=ONE) -> Instance:
    """Convenience builder: one edge ``s -> t`` with affine travel time."""
    return Instance(
        ("s", "t"),
        (Edge("e", "s", "t", (Piece(ZERO, rational(slope), rational(offset)),), {"default": Externality(rational(g))}),),
        (Commodity("s", "t", rational(demand)),),
    )
