"""Acceptance criteria, one test each.

Every comparison is exact rational equality or order; the only numeric
tolerances are the wall-clock limits below. Each test records its outcome so
the terminal summary prints one ``criterion N: PASS|FAIL`` line per criterion.
"""

import functools
import json
import random
import time

import pytest

from conftest import ACCEPTANCE
from strategies import random_instance, random_lp
from tollcast import fixture_path, load_fixture
from tollcast.cli import run
from tollcast.curve import lambda_max, state_count_bound, trace_curve
from tollcast.equilibrium import solve_equilibrium
from tollcast.exact import ceil_log2, lcm_of_denominators, rational as R
from tollcast.lp import Infeasible, Optimal, certifies_optimal, farkas_gap, is_improving_ray, solve_lp
from tollcast.model import Flow, potential, total_externality, verify_wardrop
from tollcast.pricing import (
    check_implementable,
    implement_budget,
    kkt_residuals,
    market_price_interval,
    min_feasible_budget,
    min_price,
)

BRAESS_SECONDS = 1.0
MONOTONE_SECONDS = 60.0


def criterion(n, title):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                ACCEPTANCE[n] = ("FAIL", title)
                print(f"criterion {n}: FAIL  {title}")
                raise
            ACCEPTANCE[n] = ("PASS", title)
            print(f"criterion {n}: PASS  {title}")

        return wrapper

    return deco


def G(inst, flow):
    return total_externality(inst, flow)[inst.externality_names[0]]


def _cli_json(capsys, *argv):
    t0 = time.perf_counter()
    code = run([str(a) for a in argv])
    elapsed = time.perf_counter() - t0
    out = capsys.readouterr().out
    assert code == 0
    return json.loads(out), elapsed


@criterion(1, "Braess fixture: lambda=1 zig-zag with cost 17/4 and G=8, lambda=1/10 split with G=7")
def test_c01_braess_cli(capsys):
    path = fixture_path("braess")
    out, t1 = _cli_json(capsys, "equilibrium", "--lambda", "1", path)
    assert out["flow"]["0"] == {"sv": "2", "vw": "2", "wt": "2"}
    assert out["min_path_cost"]["0"] == "17/4"
    assert out["G"]["co2"] == "8"
    out, t2 = _cli_json(capsys, "equilibrium", "--lambda", "1/10", path)
    assert out["flow"]["0"] == {"sv": "1", "vt": "1", "sw": "1", "wt": "1"}
    assert out["G"]["co2"] == "7"
    assert t1 < BRAESS_SECONDS and t2 < BRAESS_SECONDS


@criterion(2, "Braess: G at lambda=1/10 is strictly below G at lambda=1")
def test_c02_affine_non_monotone():
    inst = load_fixture("braess")
    low = solve_equilibrium(inst, R("1/10")).flow
    high = solve_equilibrium(inst, R(1)).flow
    assert G(inst, low) == 7 and G(inst, high) == 8
    assert G(inst, low) < G(inst, high)


@criterion(3, "200 random constant-g instances x 10 price pairs: G nonincreasing, Phi nondecreasing")
def test_c03_monotonicity_suite():
    rng = random.Random(3003)
    t0 = time.perf_counter()
    violations = 0
    for _ in range(200):
        inst = random_instance(rng, max_nodes=6, max_edges=10, max_commodities=2, max_pieces=3, positive=rng.random() < 0.5)
        for _ in range(10):
            a, b = sorted(R(rng.randint(0, 60)) / rng.choice([1, 2, 3, 4, 6]) for _ in range(2))
            xa = solve_equilibrium(inst, a).flow
            xb = solve_equilibrium(inst, b).flow
            if not (G(inst, xa) >= G(inst, xb) and potential(inst, xa) <= potential(inst, xb)):
                violations += 1
    elapsed = time.perf_counter() - t0
    assert violations == 0
    assert elapsed < MONOTONE_SECONDS, f"{elapsed:.1f}s"


@criterion(4, "50 random strictly increasing instances: curve equals solver at 128 prices; breakpoint bound")
def test_c04_curve_matches_solver():
    rng = random.Random(4004)
    for _ in range(50):
        inst = random_instance(rng, positive=True)
        curve = trace_curve(inst)
        assert len(curve.breakpoints) <= state_count_bound(inst)
        top = curve.terminal.lambda_start + 2
        grid = [top * k / 127 for k in range(128)]
        warm = None
        for lam in grid:
            res = solve_equilibrium(inst, lam, warm=warm)
            warm = res.warm
            assert curve.evaluate(lam).loads == res.flow.loads


def _producers(inst):
    """Every kind of equilibrium the library hands out, with its price."""
    single = len(inst.externality_names) == 1 and not inst.has_affine_externality
    for k in range(13):
        lam = {n: R(k) / 4 for n in inst.externality_names}
        yield lam, solve_equilibrium(inst, lam).flow
    if single:
        curve = trace_curve(inst)
        for k in range(17):
            lam = (curve.terminal.lambda_start + 1) * k / 16
            yield lam, curve.evaluate(lam)
        b_min = min_feasible_budget(inst)[inst.externality_names[0]]
        g0 = G(inst, solve_equilibrium(inst, 0).flow)
        for frac in (R(0), R(1) / 3, R(1) / 2, R(1)):
            B = b_min + (g0 - b_min) * frac
            rep = min_price(inst, B)
            yield rep.lambda_star, rep.flow
            m = market_price_interval(inst, B)
            yield m.lambda_lo, m.flow_lo
            if m.lambda_hi is not None:
                yield m.lambda_hi, m.flow_hi
    if not inst.has_affine_externality:
        # totals of a priced equilibrium are always a feasible budget
        one = {n: R(1) for n in inst.externality_names}
        B = total_externality(inst, solve_equilibrium(inst, one).flow)
        out = implement_budget(inst, B)
        yield out.prices, out.flow


@criterion(5, "every produced equilibrium passes the path-enumeration Wardrop check")
def test_c05_wardrop_everywhere():
    names = ["pigou", "fig1", "fig1-perturbed", "fig1-zero-g", "braess", "two-commodity", "single-edge", "two-class"]
    checked = 0
    for name in names:
        inst = load_fixture(name)
        for lam, flow in _producers(inst):
            w = verify_wardrop(inst, flow, lam)
            assert w, f"{name} at {lam}: {w.reason}"
            checked += 1
    rng = random.Random(5005)
    for _ in range(40):
        inst = random_instance(rng, positive=rng.random() < 0.5)
        for lam, flow in _producers(inst):
            assert verify_wardrop(inst, flow, lam)
            checked += 1
    assert checked > 1000


def _iteration_bound(inst):
    # recomputed here from the instance, independently of the library
    nI, nV, nE = len(inst.commodities), len(inst.nodes), len(inst.edges)
    eta = nI * nV + nI * nE + 1
    coeffs = [R(0), R(1)] + [v for e in inst.edges for p in e.pieces for v in (p.slope, p.offset)]
    coeffs += [x.g for e in inst.edges for x in e.externality.values()]
    s = lcm_of_denominators(coeffs)
    mu = max(abs(c) * s for c in coeffs)
    return ceil_log2((lambda_max(inst) + 1) * (eta * mu) ** (2 * eta))


@criterion(6, "min_price: Pigou B=1/2 gives 1, fig1-perturbed B=0 gives 101/100, iterations within bound")
def test_c06_min_price():
    pigou = load_fixture("pigou")
    rep = min_price(pigou, R("1/2"))
    assert rep.lambda_star == 1
    assert rep.iterations <= rep.iteration_bound == _iteration_bound(pigou)
    f1 = load_fixture("fig1-perturbed")
    rep = min_price(f1, R(0))
    assert rep.lambda_star == R("101/100")
    assert rep.iterations <= rep.iteration_bound == _iteration_bound(f1)
    rng = random.Random(6006)
    for _ in range(60):
        inst = random_instance(rng, positive=rng.random() < 0.7)
        b_min = min_feasible_budget(inst)["co2"]
        g0 = G(inst, solve_equilibrium(inst, 0).flow)
        B = b_min + (g0 - b_min) * R(rng.randint(0, 8)) / 8
        rep = min_price(inst, B)
        assert G(inst, rep.flow) <= B
        assert rep.iterations <= rep.iteration_bound == _iteration_bound(inst)


@criterion(7, "credit market on Pigou: [1,1] for B=1/2, [0,0] for B=1, [2,inf) for B=0; endpoint complementarity")
def test_c07_market_intervals():
    inst = load_fixture("pigou")
    for credits, want in [("1/2", (1, 1)), ("1", (0, 0)), ("0", (2, None))]:
        B = R(credits)
        m = market_price_interval(inst, B)
        assert (m.lambda_lo, m.lambda_hi) == want
        for lam, flow in [(m.lambda_lo, m.flow_lo), (m.lambda_hi, m.flow_hi)]:
            if lam is None:
                continue
            assert lam * (G(inst, flow) - B) == 0
            assert verify_wardrop(inst, flow, lam)


@criterion(8, "implement_budget on two classes: B=(1/4,1) gives prices (1/2,0), flow (1/4,3/4), zero KKT residuals")
def test_c08_implement_budget():
    inst = load_fixture("two-class")
    B = {"co2": R("1/4"), "nox": R(1)}
    out = implement_budget(inst, B)
    assert out.prices == {"co2": R("1/2"), "nox": R(0)}
    assert out.flow.loads == (R("1/4"), R("3/4"))
    assert set(kkt_residuals(inst, out.flow, out.prices, B).values()) == {0}
    again = solve_equilibrium(inst, out.prices)
    assert total_externality(inst, again.flow) == total_externality(inst, out.flow)


@criterion(9, "check_implementable: fig1 flow on e2 needs price 1; zero-g variant has gap 1")
def test_c09_check_implementable():
    inst = load_fixture("fig1")
    res = check_implementable(inst, Flow.from_mapping(inst, {0: {"e2": 1}}))
    assert res.implementable and res.prices == {"co2": 1} and res.gap == 0
    inst = load_fixture("fig1-zero-g")
    res = check_implementable(inst, Flow.from_mapping(inst, {0: {"e2": 1}}))
    assert not res.implementable and res.gap == 1


@criterion(10, "500 random LPs: every outcome carries a verified certificate")
def test_c10_lp_certificates():
    rng = random.Random(1010)
    seen = set()
    for _ in range(500):
        lp = random_lp(rng)
        out = solve_lp(lp)
        seen.add(out.status)
        if isinstance(out, Optimal):
            assert certifies_optimal(lp, out)
        elif isinstance(out, Infeasible):
            assert farkas_gap(lp, out.certificate) is not None
        else:
            assert is_improving_ray(lp, out.point, out.ray)
    assert seen == {"optimal", "infeasible", "unbounded"}


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
