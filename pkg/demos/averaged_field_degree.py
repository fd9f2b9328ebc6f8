"""The averaged field w, its zeros, and the Brouwer degree that counts them.

Two scenarios side by side: a scalar field on an interval (nicexa) and a
tangent field on the unit circle, where the arc you pick decides the degree.
Writes averaged_field.png next to this file.
"""

import math
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from periorbit.average import Region, averaged_field, brouwer_degree, coordinate_field
from periorbit.linear import periodic_solution_linear
from periorbit.system import builtin_scenario

HERE = os.path.dirname(os.path.abspath(__file__))

sys1 = builtin_scenario("nicexa")
w1 = averaged_field(sys1, periodic_solution_linear(sys1, tol=1e-12))
interval = Region(((-2.0, 2.0),))
deg1 = brouwer_degree(w1, interval)
print(f"nicexa: w(q) averaged over {w1.nodes} nodes")
for z in deg1.zeros:
    print(f"  zero at q = {z.location[0]:+.9f}, sign {z.sign:+d}, "
          f"regularity margin {z.margin:.2f}")
print(f"  degree over [-2, 2] = {deg1.value} "
      f"(oracle: {deg1.oracle_method} -> {deg1.oracle_value})")

sys2 = builtin_scenario("circle")
xhat2 = periodic_solution_linear(sys2, tol=1e-12)
w2 = averaged_field(sys2, xhat2)
chart = sys2.charts[0]

# on the circle everything reads off the chart coordinate
W = coordinate_field(w2, Region(((0.0, 2 * math.pi),), chart))
thetas = np.linspace(0.0, 2 * math.pi, 400)
values = np.array([W(np.array([t]))[0] for t in thetas])

north = Region(((math.pi / 2 - 0.9, math.pi / 2 + 0.9),), chart)
south = Region(((3 * math.pi / 2 - 0.9, 3 * math.pi / 2 + 0.9),), chart)
full = Region(((0.0, 2 * math.pi),), chart)
print("circle: degree of w over ...")
print(f"  an arc around N = (0, 1):  {brouwer_degree(w2, north).value:+d}")
print(f"  an arc around S = (0,-1):  {brouwer_degree(w2, south).value:+d}")
print(f"  the whole circle:          {brouwer_degree(w2, full).value:+d}  "
      "(total degree on a compact manifold)")

fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4))
qs = np.linspace(-2.0, 2.0, 300)
ax1.plot(qs, [w1(np.array([q]))[0] for q in qs])
ax1.axhline(0.0, color="lightgray")
ax1.plot([deg1.zeros[0].location[0]], [0.0], "ro")
ax1.set_title("nicexa: averaged field on [-2, 2]")
ax1.set_xlabel("q")
ax1.set_ylabel("w(q)")

ax2.plot(thetas, values)
ax2.axhline(0.0, color="lightgray")
ax2.plot([math.pi / 2, 3 * math.pi / 2], [0.0, 0.0], "ro")
ax2.annotate("N", (math.pi / 2, 0.05))
ax2.annotate("S", (3 * math.pi / 2, 0.05))
ax2.set_title("circle: chart component of w")
ax2.set_xlabel("theta")

out = os.path.join(HERE, "averaged_field.png")
fig.savefig(out, dpi=120, bbox_inches="tight")
print(f"wrote {out}")
