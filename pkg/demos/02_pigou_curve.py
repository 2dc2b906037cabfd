"""
The whole price curve of a two-road network
===========================================

One road is fast but dirty (travel time x, one unit of CO2 per driver), the
other clean but slower (1 + x). We trace equilibrium flow as a function of
the CO2 price exactly, breakpoint by breakpoint.
"""

from tollcast import load_fixture
from tollcast.curve import trace_curve
from tollcast.exact import rational

net = load_fixture("pigou")
curve = trace_curve(net)

print("breakpoints:")
for lam, flow in curve.breakpoints:
    print(f"  price {lam}: loads {[str(x) for x in flow.loads]}")

# between breakpoints the flow moves linearly
for lam in ["1/4", "1", "3/2"]:
    print(f"price {lam}: dirty road carries {curve.evaluate(rational(lam)).loads[0]}")

# beyond the last breakpoint nothing changes any more
print("terminal ray:", [[str(d) for d in row] for row in curve.terminal.ray])

# Optional picture, needs matplotlib:
#   tollcast curve --grid 41 --svg pigou.svg <path to pigou.json>
