import json
import random

import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st

from strategies import random_instance, random_path_flow
from tollcast.exact import rational as R
from tollcast.model import (
    Commodity,
    Edge,
    Externality,
    Flow,
    FlowError,
    Instance,
    InstanceError,
    PathLimitExceeded,
    Piece,
    edge_cost,
    enumerate_paths,
    instance_from_dict,
    instance_to_dict,
    flow_to_dict,
    flow_from_dict,
    potential,
    single_edge_instance,
    total_externality,
    verify_wardrop,
)


def two_piece_edge():
    # a=1, b=0 on [0,1); a=2, b=-1 from 1 on
    return Edge("e", "s", "t", (Piece(R(0), R(1), R(0)), Piece(R(1), R(2), R(-1))), {"default": Externality()})


def test_edge_cost_braess_affine_edge(fx):
    inst = fx("braess")
    assert edge_cost(inst, "sv", 2, 1) == 2


def test_edge_cost_direct_substitution():
    inst = single_edge_instance(slope=1, offset=0, g=1)
    assert edge_cost(inst, "e", R("1/2"), 1) == R("3/2")


def test_edge_cost_negative_load():
    inst = single_edge_instance()
    with pytest.raises(ValueError):
        edge_cost(inst, "e", -1, 0)


def test_edge_cost_continuous_at_breakpoints():
    e = two_piece_edge()
    for k in range(1, len(e.pieces)):
        s = e.pieces[k].breakpoint
        assert e.pieces[k - 1].value(s) == e.pieces[k].value(s)


def test_total_externality_braess(fx):
    inst = fx("braess")
    zig = Flow.from_mapping(inst, {0: {"sv": 2, "vw": 2, "wt": 2}})
    split = Flow.from_mapping(inst, {0: {"sv": 1, "vt": 1, "sw": 1, "wt": 1}})
    assert total_externality(inst, zig)["co2"] == 8
    assert total_externality(inst, split)["co2"] == 7


def test_total_externality_zero_on_clean_edge(fx):
    inst = fx("pigou")
    assert total_externality(inst, Flow.from_mapping(inst, {0: {"e2": 1}}))["co2"] == 0


def test_potential_single_edge():
    inst = single_edge_instance()
    assert potential(inst, Flow(inst, ((R(1),),)), 0) == R("1/2")


def test_potential_pigou(fx):
    inst = fx("pigou")
    x = Flow.from_mapping(inst, {0: {"e1": "1/2", "e2": "1/2"}})
    assert potential(inst, x) == R("3/4")
    assert potential(inst, x, 1) == R("5/4")


def test_potential_two_piece_against_sympy():
    e = two_piece_edge()
    y = sympy.Symbol("y")
    f = sympy.Piecewise((y, y < 1), (2 * y - 1, True))
    for load in ["1/2", "1", "2", "7/3"]:
        want = sympy.integrate(f, (y, 0, sympy.Rational(load)))
        assert e.travel_time_integral(R(load)) == R(str(want))
    assert e.travel_time_integral(R(2)) == R("5/2")


def test_enumerate_paths(fx):
    assert enumerate_paths(fx("braess"), 0) == [("sv", "vt"), ("sv", "vw", "wt"), ("sw", "wt")]
    assert enumerate_paths(single_edge_instance(), 0) == [("e",)]
    grid = Instance(
        ("s", "a", "b", "t"),
        tuple(Edge(f"{u}{v}", u, v, (Piece(R(0), R(1), R(0)),)) for u, v in [("s", "a"), ("s", "b"), ("a", "t"), ("b", "t")]),
        (Commodity("s", "t", R(1)),),
    )
    assert len(enumerate_paths(grid, 0)) == 2
    with pytest.raises(PathLimitExceeded):
        enumerate_paths(fx("braess"), 0, cap=2)


def test_verify_wardrop_braess(fx):
    inst = fx("braess")
    zig = Flow.from_mapping(inst, {0: {"sv": 2, "vw": 2, "wt": 2}})
    assert verify_wardrop(inst, zig, 1)
    w = verify_wardrop(inst, zig, R("1/10"))
    assert not w
    assert w.used_path == ("sv", "vw", "wt") and w.used_cost == R("13/20")
    assert w.better_path == ("sv", "vt") and w.better_cost == R("9/20")


def test_verify_wardrop_single_edge():
    inst = single_edge_instance(demand=3)
    assert verify_wardrop(inst, Flow(inst, ((R(3),),)), 0)


def test_flow_rejects_bad_conservation(fx):
    inst = fx("pigou")
    with pytest.raises(FlowError):
        Flow.from_mapping(inst, {0: {"e1": "1/2"}})
    with pytest.raises(FlowError):
        Flow.from_mapping(inst, {0: {"e1": "2", "e2": "-1"}})


def _edge_dict(**over):
    d = {"id": "e", "tail": "s", "head": "t", "pieces": [{"breakpoint": "0", "slope": "1", "offset": "0"}], "externality": {"co2": {"g": "1"}}}
    d.update(over)
    return d


def _inst(edges, **over):
    d = {"nodes": ["s", "t"], "externalities": ["co2"], "edges": edges, "commodities": [{"source": "s", "target": "t", "demand": "1"}]}
    d.update(over)
    return d


@pytest.mark.parametrize(
    "data,path",
    [
        (_inst([_edge_dict(pieces=[{"breakpoint": "0", "slope": "1", "offset": "0"}, {"breakpoint": "2", "slope": "2", "offset": "-2"}, {"breakpoint": "1", "slope": "3", "offset": "-4"}])]), "edges[0].pieces[2].breakpoint"),
        (_inst([_edge_dict(pieces=[{"breakpoint": "0", "slope": "1", "offset": "0"}, {"breakpoint": "1", "slope": "2", "offset": "0"}])]), "edges[0].pieces[1]"),
        (_inst([_edge_dict(pieces=[{"breakpoint": "1", "slope": "1", "offset": "0"}])]), "edges[0].pieces[0].breakpoint"),
        (_inst([_edge_dict(pieces=[{"breakpoint": "0", "slope": "-1", "offset": "0"}])]), "edges[0].pieces[0].slope"),
        (_inst([_edge_dict(externality={"co2": {"g": "-1"}})]), "edges[0].externality.co2"),
        (_inst([_edge_dict(externality={"nox": {"g": "1"}})]), "edges[0].externality.nox"),
        (_inst([_edge_dict(head="x")]), "edges[0].head"),
        (_inst([_edge_dict(tail="t", head="s")]), "commodities[0]"),
        (_inst([_edge_dict()], commodities=[{"source": "s", "target": "t", "demand": "0"}]), "commodities[0].demand"),
        (_inst([_edge_dict(pieces=[{"breakpoint": "0", "slope": 1, "offset": "0"}])]), "edges[0].pieces[0].slope"),
        (_inst([_edge_dict(), _edge_dict()]), "edges[1].id"),
    ],
)
def test_instance_validation_paths(data, path):
    with pytest.raises(InstanceError) as exc:
        instance_from_dict(data)
    assert exc.value.path == path


def test_decimal_inputs_are_exact():
    inst = instance_from_dict(_inst([_edge_dict(pieces=[{"breakpoint": "0", "slope": "0.1", "offset": "1.25"}])]))
    assert inst.edges[0].pieces[0].slope == R("1/10")
    assert inst.edges[0].pieces[0].offset == R("5/4")


def test_instance_json_round_trip(fx):
    for name in ["pigou", "braess", "two-class", "two-commodity"]:
        inst = fx(name)
        again = instance_from_dict(json.loads(json.dumps(instance_to_dict(inst))))
        assert instance_to_dict(again) == instance_to_dict(inst)


def test_flow_json_round_trip(fx):
    inst = fx("braess")
    x = Flow.from_mapping(inst, {0: {"sv": 1, "vt": 1, "sw": 1, "wt": 1}})
    d = json.loads(json.dumps(flow_to_dict(x)))
    assert d["G"] == {"co2": "7"}
    assert flow_from_dict(inst, d).values == x.values


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_path_decomposed_flows_validate(seed):
    rng = random.Random(seed)
    inst = random_instance(rng)
    x = random_path_flow(inst, rng)
    assert all(v >= 0 for row in x.values for v in row)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.fractions(0, 1, max_denominator=7))
def test_externality_is_linear_in_flow(seed, w):
    rng = random.Random(seed)
    inst = random_instance(rng)
    a, b = random_path_flow(inst, rng), random_path_flow(inst, rng)
    mix = a.combine(b, R(w))
    Ga, Gb, Gm = (total_externality(inst, f)["co2"] for f in (a, b, mix))
    assert Gm == (1 - R(w)) * Ga + R(w) * Gb
