"""
Two pollutants, two prices
==========================

Road e1 emits CO2, road e2 emits NOx, both have travel time x. We ask for
prices that keep CO2 at 1/4 and NOx at 1, then check the answer in reverse:
is a hand-picked flow implementable by *some* prices?
"""

from tollcast import load_fixture
from tollcast.exact import rational
from tollcast.model import Flow
from tollcast.pricing import InfeasibleBudget, check_implementable, implement_budget, kkt_residuals

net = load_fixture("two-class")
B = {"co2": rational("1/4"), "nox": rational(1)}
out = implement_budget(net, B)
print("prices:", {k: str(v) for k, v in out.prices.items()})
print("loads: ", [str(x) for x in out.flow.loads])
print("KKT residuals:", {k: str(v) for k, v in kkt_residuals(net, out.flow, out.prices, B).items()})

# the demand has to go somewhere, so both caps at zero cannot work
try:
    implement_budget(net, {"co2": 0, "nox": 0})
except InfeasibleBudget as exc:
    print("infeasible:", exc)
    print("  certificate:", {k: str(v) for k, v in exc.certificate.items()})

# Reverse question on a single-pollutant network: the clean road e2 costs
# one unit more than e1, so a CO2 price of exactly 1 makes it an equilibrium.
fig = load_fixture("fig1")
res = check_implementable(fig, Flow.from_mapping(fig, {0: {"e2": 1}}))
print("all on e2 implementable:", res.implementable, "with prices", {k: str(v) for k, v in res.prices.items()})
