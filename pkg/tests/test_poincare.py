"""Poincare translation operator: flow, Jacobians, fixed points, indices."""

import math

import numpy as np
import pytest

from periorbit import system as sysmod
from periorbit.average import Region, averaged_field, brouwer_degree
from periorbit.integrate import rk4_fixed
from periorbit.linear import (
    ResonanceError,
    fundamental_matrix,
    periodic_solution_linear,
)
from periorbit.poincare import (
    DecoupledModel,
    FlowError,
    PoincareError,
    YFactorModel,
    enumerate_fixed_points,
    factor_index,
    find_fixed_point,
    flow,
    index_formula_check,
    poincare_jacobian,
    translation_index,
)
from periorbit.system import load_scenario


# ---------------------------------------------------------------------------
# Flow


def test_flow_preconditions():
    sys = sysmod.builtin_scenario("nicexa")
    with pytest.raises(PoincareError):
        flow(sys, -0.1, [0.9], [-0.5])
    with pytest.raises(PoincareError):
        flow(sys, 0.1, [0.9], [-0.5], t_final=10.0)
    with pytest.raises(PoincareError):
        flow(sys, 0.1, [0.9, 0.0], [-0.5])
    circle = sysmod.builtin_scenario("circle")
    with pytest.raises(PoincareError, match="constraint"):
        flow(circle, 0.1, [0.0], [1.2, 0.0])


def test_flow_lambda_zero_splits():
    """At lambda = 0 the x part is the affine translation map and y freezes."""
    sys = sysmod.builtin_scenario("springs")
    from periorbit.linear import translation_operator

    phi_t, b = translation_operator(sys, tol=1e-12)
    p = np.array([0.4, -0.7])
    q = np.array([0.3, 0.2])
    fr = flow(sys, 0.0, p, q, tol=1e-12)
    assert np.max(np.abs(fr.state[:2] - (phi_t @ p + b))) < 1e-9
    assert np.max(np.abs(fr.state[2:] - q)) < 1e-12


def test_flow_against_fixed_step_oracle():
    sys = sysmod.builtin_scenario("nicexa")
    lam = 0.05
    z0 = np.array([0.9, -0.5])
    fr = flow(sys, lam, z0[:1], z0[1:], tol=1e-12)
    ref = rk4_fixed(lambda t, z: sys.rhs(t, z, lam), 0.0, sys.period, z0, 50000)
    assert np.max(np.abs(fr.state - ref)) < 1e-8


def test_flow_keeps_manifold():
    sys = sysmod.builtin_scenario("dae-pendulum")
    q = sys.charts[0].point(np.array([0.9, 0.3]))
    fr = flow(sys, 0.2, np.array([0.1, -0.2]), q, tol=1e-10)
    assert np.max(np.abs(sys.constraint_values(fr.state[2:]))) < 1e-11
    assert fr.drift < 1e-9


def test_flow_partial_period_dense():
    sys = sysmod.builtin_scenario("nicexa")
    fr = flow(sys, 0.1, [0.9], [-0.5], t_final=2.0, tol=1e-11, dense=True)
    assert fr.t == 2.0
    assert np.max(np.abs(fr.dense(2.0) - fr.state)) < 1e-13
    assert np.max(np.abs(fr.dense(0.0) - np.array([0.9, -0.5]))) < 1e-15


def test_flow_blow_up_raises():
    sys = load_scenario({
        "name": "explode", "T": "2pi", "k": 1, "s": 1,
        "A": [["-1"]], "c": ["0"], "f1": ["0"],
        "f2": ["(1 + y1^2)^2"],
    })
    with pytest.raises(FlowError, match="not continuable"):
        flow(sys, 5.0, [0.0], [1.0])


# ---------------------------------------------------------------------------
# Jacobians


def test_jacobian_nicexa_lambda_zero():
    sys = sysmod.builtin_scenario("nicexa")
    J = poincare_jacobian(sys, 0.0, [0.95], [-0.55], tol=1e-11)
    want = np.diag([math.exp(-2 * math.pi), 1.0])
    assert np.max(np.abs(J - want)) < 1e-9


def test_jacobian_lambda_zero_block_structure():
    # at lambda = 0: x block is the monodromy, y block the identity
    for name in ("springs", "circle"):
        sys = sysmod.builtin_scenario(name)
        m = fundamental_matrix(sys, tol=1e-12)
        k = sys.k
        if sys.has_constraints:
            q = sys.charts[0].point(np.array([0.8]))
        else:
            q = np.full(sys.s, 0.3)
        J = poincare_jacobian(sys, 0.0, np.zeros(k), q, tol=1e-11)
        d = J.shape[0] - k
        assert np.max(np.abs(J[:k, :k] - m.phi_t)) < 1e-8, name
        assert np.max(np.abs(J[k:, k:] - np.eye(d))) < 1e-8, name
        assert np.max(np.abs(J[k:, :k])) < 1e-8, name


def test_jacobian_cross_check_all_scenarios():
    """Variational and finite-difference routes agree on every built-in."""
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
            poincare_jacobian(sys, lam, p, q, tol=1e-10, check=True)


def test_jacobian_cross_check_catches_lies(monkeypatch):
    import periorbit.poincare as poi

    sys = sysmod.builtin_scenario("nicexa")
    real = poi._variational_flow

    def skewed(model, lam, p, q, tol):
        final, dp = real(model, lam, p, q, tol)
        return final, dp * 1.01

    monkeypatch.setattr(poi, "_variational_flow", skewed)
    with pytest.raises(PoincareError, match="disagreement"):
        poincare_jacobian(sys, 0.05, [0.9], [-0.5])


# ---------------------------------------------------------------------------
# Fixed points


def test_find_fixed_point_lambda_zero():
    sys = sysmod.builtin_scenario("nicexa")
    rec = find_fixed_point(sys, 0.0, [0.9], [-0.5], tol=1e-12)
    assert rec.lam == 0.0
    assert rec.p[0] == pytest.approx(0.95, abs=1e-9)
    assert rec.q[0] == pytest.approx(-0.55, abs=1e-8)
    assert rec.non_isolated and rec.index == 0


def test_find_fixed_point_positive_lambda():
    sys = sysmod.builtin_scenario("nicexa")
    rec = find_fixed_point(sys, 0.05, [0.9], [-0.5], tol=1e-10)
    assert rec.residual < 1e-10
    assert rec.index == 1
    assert rec.eigen_margin > 1e-8 and not rec.non_isolated
    fr = flow(sys, 0.05, np.array(rec.p), np.array(rec.q), tol=1e-12)
    assert np.max(np.abs(fr.state - rec.point)) < 1e-9


def test_find_fixed_point_on_circle():
    sys = sysmod.builtin_scenario("circle")
    qN = np.array([0.0, 1.0])
    rec = find_fixed_point(sys, 0.05, [-1.0], qN, tol=1e-10)
    assert rec.residual < 1e-10
    assert abs(np.linalg.norm(rec.q) - 1.0) < 1e-10
    assert np.linalg.norm(np.asarray(rec.q) - qN) < 0.2


def test_enumerate_fixed_points_nicexa():
    sys = sysmod.builtin_scenario("nicexa")
    V = Region(((-2.0, 2.0),))
    fps = enumerate_fixed_points(sys, 0.05, [(0.0, 2.0)], V)
    assert len(fps) == 1
    assert fps[0].index == 1
    # nothing in a translated p window
    assert enumerate_fixed_points(sys, 0.05, [(2.0, 3.0)], V) == []


def test_negative_lambda_rejected():
    sys = sysmod.builtin_scenario("nicexa")
    with pytest.raises(PoincareError):
        find_fixed_point(sys, -0.01, [0.9], [-0.5])


# ---------------------------------------------------------------------------
# Index identity and its factors


def test_index_identity_nicexa():
    sys = sysmod.builtin_scenario("nicexa")
    V = Region(((-2.0, 2.0),))
    rep = index_formula_check(sys, [(0.0, 2.0)], V, [0.05])
    assert rep.indicator == 1 and rep.degree == -1
    assert rep.rows[0].lhs_abs == 1 == rep.rows[0].rhs
    assert rep.all_match


def test_index_identity_empty_box():
    sys = sysmod.builtin_scenario("nicexa")
    V = Region(((-2.0, 2.0),))
    rep = index_formula_check(sys, [(2.0, 3.0)], V, [0.05])
    assert rep.indicator == 0
    assert rep.rows[0].index_sum == 0 == rep.rows[0].rhs
    assert rep.all_match


def test_index_identity_boundary_is_error():
    sys = sysmod.builtin_scenario("nicexa")
    V = Region(((-2.0, 2.0),))
    with pytest.raises(PoincareError, match="boundary"):
        index_formula_check(sys, [(0.95, 2.0)], V, [0.05])


def test_index_identity_needs_nonresonance():
    sys = sysmod.builtin_scenario("dae-pendulum")
    V = Region(((0.0, 2 * math.pi), (-1.5, 1.5)), sys.charts[0])
    with pytest.raises(ResonanceError):
        index_formula_check(sys, [(-1.0, 1.0), (-1.0, 1.0)], V, [0.05])


def test_translation_index_indicator():
    """ind of the affine time-T map is sign det(I - Phi(T)) times 1_U."""
    rng = np.random.default_rng(17)
    nicexa = sysmod.builtin_scenario("nicexa")   # det(I - Phi) > 0, p* = 0.95
    delay = sysmod.builtin_scenario("delay")     # det(I - Phi) < 0, p* = 0
    for _ in range(10):
        lo = rng.uniform(-2.0, 1.8)
        hi = lo + rng.uniform(0.3, 2.0)
        inside = lo < 0.95 < hi
        if abs(lo - 0.95) < 1e-6 or abs(hi - 0.95) < 1e-6:
            continue
        idx, p_star = translation_index(nicexa, [(lo, hi)])
        assert idx == (1 if inside else 0)
        assert p_star[0] == pytest.approx(0.95, abs=1e-9)
        inside0 = lo < 0.0 < hi
        if abs(lo) < 1e-6 or abs(hi) < 1e-6:
            continue
        idx0, _ = translation_index(delay, [(lo, hi)])
        assert idx0 == (-1 if inside0 else 0)


def test_product_law_on_decoupled_system():
    sys = sysmod.builtin_scenario("nicexa")
    xhat = periodic_solution_linear(sys, tol=1e-12)
    model = DecoupledModel(sys, xhat)
    V = Region(((-2.0, 2.0),))
    U = [(0.0, 2.0)]
    fps = enumerate_fixed_points(model, 0.05, U, V)
    total = sum(f.index for f in fps)
    t_idx, _ = translation_index(sys, U)
    f_idx, _ = factor_index(sys, xhat, 0.05, V)
    assert total == t_idx * f_idx == 1


def test_factor_identity_on_circle():
    """ind of the averaged-factor map equals deg(-w) over both arcs."""
    sys = sysmod.builtin_scenario("circle")
    xhat = periodic_solution_linear(sys, tol=1e-12)
    w = averaged_field(sys, xhat)
    chart = sys.charts[0]
    for center in (math.pi / 2, 3 * math.pi / 2):
        V = Region(((center - 0.9, center + 0.9),), chart)
        idx, fps = factor_index(sys, xhat, 0.01, V)
        want = brouwer_degree(lambda y: -w(y), V).value
        assert idx == want, center
        assert len(fps) == 1


def test_y_factor_model_shape():
    sys = sysmod.builtin_scenario("nicexa")
    xhat = periodic_solution_linear(sys, tol=1e-12)
    model = YFactorModel(sys, xhat)
    assert model.k == 0 and model.s == 1
    fr = flow(model, 0.05, np.empty(0), np.array([-0.5]), tol=1e-11)
    assert fr.state.shape == (1,)
