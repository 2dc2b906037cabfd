"""
From an emissions budget to a price
===================================

Given a cap B on total CO2, find the smallest price whose equilibrium
respects it. Then look at a market of B tradable credits: which prices clear
it?
"""

from tollcast import load_fixture
from tollcast.exact import rational
from tollcast.pricing import market_price_interval, min_feasible_budget, min_price

net = load_fixture("pigou")
print("lowest reachable emissions:", min_feasible_budget(net)["co2"])

for B in ["1", "3/4", "1/2", "0"]:
    rep = min_price(net, rational(B))
    print(f"budget {B:>3}: price {rep.lambda_star} after {rep.iterations} bisection steps (bound {rep.iteration_bound})")

# A credit market clears on a closed interval of prices. With spare credits
# the price is zero; with exactly the minimum it can go arbitrarily high.
for B in ["1", "1/2", "0"]:
    m = market_price_interval(net, rational(B))
    hi = "inf)" if m.lambda_hi is None else f"{m.lambda_hi}]"
    print(f"{B:>3} credits: market prices [{m.lambda_lo}, {hi}")
