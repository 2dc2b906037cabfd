"""
Pricing an externality in the Braess network
============================================

Two units travel from s to t. The middle edge v->w is cheap and clean, but
the outer edges emit more the more they are used, so a price on emissions
can push drivers onto routes that emit *more* in total.
"""

from tollcast import load_fixture
from tollcast.equilibrium import solve_equilibrium
from tollcast.exact import rational
from tollcast.model import total_externality

net = load_fixture("braess")

# a small price leaves the two outer routes balanced
for lam in ["1/10", "1/2", "1"]:
    res = solve_equilibrium(net, rational(lam))
    used = {e.id: str(x) for e, x in zip(net.edges, res.flow.loads) if x}
    G = total_externality(net, res.flow)["co2"]
    print(f"price {lam:>5}: loads {used}  G = {G}  cheapest route costs {res.min_path_cost()}")

# Raising the price from 1/10 to 1 moved everybody onto the zig-zag route
# and total emissions went up from 7 to 8.
