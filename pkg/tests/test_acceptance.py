"""Acceptance battery: the six release criteria, one test and summary line each.

Reference values live next to the checks; tolerances are the shipped targets,
not what the code happens to achieve.  Run with -s (or -rA) to see the
summary lines.
"""

import json
import math

import numpy as np
import pytest

from periorbit import system as sysmod
from periorbit.average import Region, averaged_field, brouwer_degree, find_zeros
from periorbit.branch import (
    ContinuationOptions,
    continue_branch,
    point_vector,
    reverify_branch,
    seed_branches,
)
from periorbit.cli import main
from periorbit.linear import (
    ResonanceError,
    fundamental_matrix,
    periodic_solution_linear,
)
from periorbit.poincare import (
    DecoupledModel,
    _compress,
    _fd_map_jacobian,
    _model_tangent_basis,
    _variational_flow,
    enumerate_fixed_points,
    factor_index,
    index_formula_check,
    translation_index,
)

TWO_PI = 2 * math.pi


@pytest.fixture(scope="module")
def nicexa():
    sys = sysmod.builtin_scenario("nicexa")
    return sys, periodic_solution_linear(sys, tol=1e-12)


@pytest.fixture(scope="module")
def circle():
    sys = sysmod.builtin_scenario("circle")
    return sys, periodic_solution_linear(sys, tol=1e-12)


def test_acceptance_1_reference_values(nicexa, circle, tmp_path):
    """Closed-form targets on the shipped scenarios, and the resonance guard."""
    sys, xhat = nicexa
    assert abs(xhat.value0()[0] - 0.95) <= 1e-8
    ts = np.linspace(0.0, sys.period, 1000)
    sup = max(abs(xhat(t)[0] - ((math.sin(t) - math.cos(t)) / 20.0 + 1.0))
              for t in ts)
    assert sup < 1e-8
    w = averaged_field(sys, xhat)
    region = Region(((-2.0, 2.0),))
    zeros = find_zeros(w, region, tol=1e-12)
    assert len(zeros) == 1
    assert abs(zeros[0].location[0] + 0.55) <= 1e-8
    assert abs(brouwer_degree(w, region, tol=1e-12).value) == 1

    csys, cxhat = circle
    for t in np.linspace(0.0, csys.period, 50):
        assert abs(cxhat(t)[0] + math.cos(t)) <= 1e-8
    cw = averaged_field(csys, cxhat)
    rng = np.random.default_rng(5)
    for theta in rng.uniform(0.0, TWO_PI, 20):
        q = np.array([math.cos(theta), math.sin(theta)])
        want = np.array([q[1] * q[0], -q[0] ** 2])
        assert np.max(np.abs(cw(q) - want)) <= 1e-8
    chart = csys.charts[0]
    czeros = find_zeros(cw, Region(((0.0, TWO_PI),), chart), tol=1e-12)
    poles = sorted((np.array(z.location) for z in czeros), key=lambda a: a[1])
    assert len(poles) == 2
    assert np.max(np.abs(poles[0] - np.array([0.0, -1.0]))) <= 1e-8
    assert np.max(np.abs(poles[1] - np.array([0.0, 1.0]))) <= 1e-8
    arc_n = Region(((math.pi / 2 - 0.9, math.pi / 2 + 0.9),), chart)
    assert brouwer_degree(cw, arc_n, tol=1e-12).value == 1

    dsys = sysmod.builtin_scenario("delay")
    dhat = periodic_solution_linear(dsys, tol=1e-12)
    assert max(abs(dhat(t)[0]) for t in np.linspace(0.0, dsys.period, 200)) <= 1e-9

    guard = tmp_path / "resonant.json"
    guard.write_text(json.dumps({
        "name": "resonant-guard", "T": "2pi", "k": 2, "s": 1,
        "A": [["0", "1"], ["-1", "0"]], "c": ["0", "0"],
        "f1": ["0", "0"], "f2": ["0"],
    }))
    code = main(["linear", "--scenario", str(guard), "--out", str(tmp_path / "x.csv")])
    assert code == 2

    print("acceptance 1 (reference values, resonance guard): pass")


def test_acceptance_2_index_identity(nicexa):
    """|sum of fixed-point indices| equals the indicator-times-degree product."""
    sys, _ = nicexa
    V = Region(((-2.0, 2.0),))
    lams = [0.01, 0.05, 0.1]

    rep = index_formula_check(sys, [(0.0, 2.0)], V, lams)
    assert rep.indicator == 1 and abs(rep.degree) == 1
    for row in rep.rows:
        assert row.lhs_abs == 1 == row.rhs
        assert row.match

    rep0 = index_formula_check(sys, [(2.0, 3.0)], V, lams)
    assert rep0.indicator == 0
    for row in rep0.rows:
        assert row.index_sum == 0 == row.rhs
        assert row.match

    print("acceptance 2 (index identity, both boxes, three lambdas): pass")


def test_acceptance_3_index_factors(nicexa, circle):
    """Translation index on random boxes, exact product law, factor identity."""
    sys, xhat = nicexa
    p_star = 0.95
    rng = np.random.default_rng(23)
    tested = 0
    while tested < 10:
        lo = rng.uniform(-3.0, 2.5)
        hi = lo + rng.uniform(0.2, 2.5)
        if min(abs(lo - p_star), abs(hi - p_star)) < 1e-3:
            continue
        idx, found = translation_index(sys, [(lo, hi)])
        assert idx == (1 if lo < p_star < hi else 0)
        assert abs(found[0] - p_star) < 1e-9
        tested += 1

    V = Region(((-2.0, 2.0),))
    U = [(0.0, 2.0)]
    model = DecoupledModel(sys, xhat)
    total = sum(f.index for f in enumerate_fixed_points(model, 0.05, U, V))
    t_idx, _ = translation_index(sys, U)
    f_idx, _ = factor_index(sys, xhat, 0.05, V)
    assert total == t_idx * f_idx

    csys, cxhat = circle
    cw = averaged_field(csys, cxhat)
    chart = csys.charts[0]
    for center in (math.pi / 2, 3 * math.pi / 2):
        arc = Region(((center - 0.9, center + 0.9),), chart)
        idx, _ = factor_index(csys, cxhat, 0.01, arc)
        assert idx == brouwer_degree(lambda y: -cw(y), arc).value

    print("acceptance 3 (translation boxes, product law, factor identity): pass")


def test_acceptance_4_branch_continuation():
    """A branch from the trivial point climbs to lambda = 0.75 and re-verifies."""
    sys = sysmod.builtin_scenario("nicexa")
    (seed,) = seed_branches(sys, Region(((-2.0, 2.0),)))
    assert abs(seed.p[0] - 0.95) < 1e-8 and abs(seed.q[0] + 0.55) < 1e-8

    branch = continue_branch(sys, seed, ContinuationOptions(lambda_max=0.75))
    assert branch.termination == "lambda_max_reached"
    assert branch.points[-1].lam == 0.75
    assert max(pt.residual for pt in branch.points) < 1e-8
    assert np.max(reverify_branch(sys, branch)) < 1e-6

    def first_dist(step0):
        opts = ContinuationOptions(lambda_max=0.75, step0=step0,
                                   step_min=step0 / 100, max_points=2)
        b = continue_branch(sys, seed, opts)
        return float(np.linalg.norm(
            point_vector(b.points[1]) - point_vector(b.points[0])
        ))

    d1 = first_dist(1e-2)
    assert d1 < 0.02
    assert first_dist(1e-3) <= d1 / 2

    print("acceptance 4 (branch to lambda = 0.75, re-verified): pass")


def test_acceptance_5_cross_validation():
    """Independent routes agree: Liouville, Jacobians, degree oracles."""
    import scipy.integrate

    # determinant of the fundamental matrix vs the trace integral
    rng = np.random.default_rng(41)
    for _ in range(20):
        coef = rng.uniform(-0.6, 0.6, (2, 2, 3))
        rows = [
            [
                f"{float(c[0])!r} + {float(c[1])!r}*cos(t) + {float(c[2])!r}*sin(t)"
                for c in row
            ]
            for row in coef
        ]
        sys = sysmod.load_scenario({
            "name": "random-a", "T": "2pi", "k": 2, "s": 1,
            "A": rows, "c": ["0", "0"], "f1": ["0", "0"], "f2": ["0"],
        })
        m = fundamental_matrix(sys, tol=1e-11)
        trace, _ = scipy.integrate.quad(
            lambda t: sys.a_matrix(t).trace(), 0.0, sys.period, limit=200
        )
        want = math.exp(trace)
        assert abs(np.linalg.det(m.phi_t) - want) < 1e-6 * max(1.0, abs(want))

    # variational vs finite-difference route to the time-T Jacobian
    for name in sysmod.builtin_names():
        sys = sysmod.builtin_scenario(name)
        if sys.charts:
            theta = np.array([0.5 * (lo + hi) - 0.1 * (hi - lo)
                              for lo, hi in sys.charts[0].domain])
            q = sys.charts[0].point(theta)
        else:
            q = np.linspace(-0.4, 0.4, sys.s)
        p = np.linspace(0.2, -0.3, sys.k)
        for lam in (0.0, 0.05):
            final, dpa = _variational_flow(sys, lam, p, q, 1e-10)
            bq = _model_tangent_basis(sys, q)
            qi = sys.project(final[sys.k:]) if sys.has_constraints else final[sys.k:]
            bi = _model_tangent_basis(sys, qi)
            jac = _compress(sys, dpa, bq, bi)
            fd = _fd_map_jacobian(sys, lam, p, q, bq, bi, 1e-10)
            rel = np.linalg.norm(jac - fd) / max(1.0, np.linalg.norm(jac))
            assert rel <= 1e-5, (name, lam, rel)

    # degree vs its oracle on every shipped region (the full circle doubles
    # as the total-degree-zero check on a compact manifold)
    from periorbit.cli import _default_region

    for name in sysmod.builtin_names():
        sys = sysmod.builtin_scenario(name)
        try:
            xhat = periodic_solution_linear(sys, tol=1e-11)
        except ResonanceError:
            continue                               # no averaged field to test
        w = averaged_field(sys, xhat)
        deg = brouwer_degree(w, _default_region(sys))
        assert deg.value == deg.oracle_value
        if name == "circle":
            assert deg.value == 0

    # ... and on random fields in one and two dimensions
    rng = np.random.default_rng(7)
    for _ in range(10):
        c = rng.uniform(-2.0, 2.0, 4)
        c[3] = math.copysign(max(abs(c[3]), 0.2), c[3])
        f = lambda q, c=c: np.array([c[0] + c[1] * q[0] + c[2] * q[0] ** 2 + c[3] * q[0] ** 3])
        deg = brouwer_degree(f, Region(((-6.0, 6.0),)))
        assert deg.value == deg.oracle_value == int(math.copysign(1, c[3]))
    for _ in range(10):
        M = rng.uniform(-2.0, 2.0, (2, 2))
        if abs(np.linalg.det(M)) < 0.1:
            continue
        f = lambda q, M=M: M @ q
        deg = brouwer_degree(f, Region(((-1.0, 1.0), (-1.0, 1.0))))
        assert deg.value == deg.oracle_value == int(math.copysign(1, np.linalg.det(M)))

    print("acceptance 5 (Liouville, Jacobian routes, degree oracles): pass")


def test_acceptance_6_determinism(tmp_path):
    """Identical branch invocations write byte-identical tables."""
    args = ["branch", "--scenario", "nicexa", "--lambda-max", "0.3"]
    out1, out2 = tmp_path / "b1.csv", tmp_path / "b2.csv"
    assert main(args + ["--out", str(out1)]) == 0
    assert main(args + ["--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    m1 = json.loads((tmp_path / "b1.csv.manifest.json").read_text())
    m2 = json.loads((tmp_path / "b2.csv.manifest.json").read_text())
    m1.pop("created"), m2.pop("created")
    assert m1 == m2

    print("acceptance 6 (byte-identical branch reruns): pass")
