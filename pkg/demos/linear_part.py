"""Walk through the linear stage: monodromy, resonance gap, periodic solution.

Run from anywhere; writes linear_part.png next to this file.
"""

import math
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from periorbit.linear import fundamental_matrix, periodic_solution_linear
from periorbit.system import builtin_scenario

HERE = os.path.dirname(os.path.abspath(__file__))


def main():
    sys = builtin_scenario("nicexa")
    print(f"scenario '{sys.name}': k = {sys.k}, s = {sys.s}, T = {sys.period:.6f}")

    m = fundamental_matrix(sys, tol=1e-12)
    print(f"Phi(T) = {m.phi_t}")
    print(f"|det(I - Phi(T))| = {abs(m.det_i_minus_phi_t):.6g}  (far from 0: no T-resonance)")
    print(f"Liouville check: det Phi(T) = {np.linalg.det(m.phi_t):.12g} "
          f"vs exp(int tr A) = {math.exp(-2 * math.pi):.12g}")

    xhat = periodic_solution_linear(sys, m, tol=1e-12)
    print(f"xhat(0) = {xhat.value0()[0]:.12f}  (closed form: 19/20 = 0.95)")

    ts = np.linspace(0.0, sys.period, 400)
    xs = np.array([xhat(t)[0] for t in ts])
    closed = (np.sin(ts) - np.cos(ts)) / 20.0 + 1.0
    print(f"sup |xhat - closed form| = {np.max(np.abs(xs - closed)):.3e}")

    # the delay-equation reduction has c = 0, so its periodic solution vanishes
    delay = builtin_scenario("delay")
    dhat = periodic_solution_linear(delay, tol=1e-12)
    print(f"'delay' scenario: sup |xhat| = "
          f"{max(abs(dhat(t)[0]) for t in ts):.3e}  (identically zero)")

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(ts, xs, label="computed xhat")
    ax.plot(ts, closed, "--", label="(sin t - cos t)/20 + 1")
    ax.set_xlabel("t")
    ax.set_ylabel("x")
    ax.set_title("T-periodic solution of the unperturbed linear part")
    ax.legend()
    out = os.path.join(HERE, "linear_part.png")
    fig.savefig(out, dpi=120, bbox_inches="tight")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
