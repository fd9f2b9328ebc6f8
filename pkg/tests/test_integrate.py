"""Adaptive Dormand-Prince integrator and the fixed-step cross-check."""

import math

import numpy as np
import pytest

from periorbit.integrate import IntegrationError, integrate, rk4_fixed


def test_exponential_decay():
    res = integrate(lambda t, y: -y, 0.0, 3.0, np.array([1.0]),
                    rtol=1e-11, atol=1e-11)
    assert abs(res.y[0] - math.exp(-3.0)) < 1e-10
    assert res.steps > 0 and res.t == 3.0


def test_rotation_returns_to_start():
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    y0 = np.array([1.0, 0.3])
    res = integrate(lambda t, y: A @ y, 0.0, 2 * math.pi, y0,
                    rtol=1e-12, atol=1e-12)
    assert np.max(np.abs(res.y - y0)) < 1e-10


def test_dense_matches_endpoints_and_closed_form():
    res = integrate(lambda t, y: -y, 0.0, 2.0, np.array([1.0]),
                    rtol=1e-11, atol=1e-11, dense=True)
    assert res.dense is not None
    assert res.dense(0.0)[0] == 1.0
    assert abs(res.dense(2.0)[0] - res.y[0]) < 1e-14
    for t in np.linspace(0.0, 2.0, 137):
        assert abs(res.dense(t)[0] - math.exp(-t)) < 1e-9


def test_dense_disabled():
    res = integrate(lambda t, y: -y, 0.0, 1.0, np.array([1.0]), dense=False)
    assert res.dense is None


def test_dense_rejects_out_of_range():
    res = integrate(lambda t, y: -y, 0.0, 1.0, np.array([1.0]))
    with pytest.raises(ValueError):
        res.dense(1.5)
    with pytest.raises(ValueError):
        res.dense(-0.1)


def test_post_step_projection():
    """A hook renormalizing onto the unit circle keeps the radius pinned."""

    A = np.array([[0.0, 1.0], [-1.0, 0.0]])

    def proj(t, y):
        r = np.linalg.norm(y)
        if abs(r - 1.0) > 1e-14:
            return y / r
        return None

    res = integrate(lambda t, y: A @ y, 0.0, 10.0, np.array([1.0, 0.0]),
                    rtol=1e-9, atol=1e-9, post_step=proj)
    assert abs(np.linalg.norm(res.y) - 1.0) < 1e-13
    # the rotation itself must stay accurate despite the hook
    want = np.array([math.cos(10.0), -math.sin(10.0)])
    assert np.max(np.abs(res.y - want)) < 1e-7


def test_blow_up_raises_with_location():
    # y' = y^2, y(0) = 1 blows up at t = 1
    with pytest.raises(IntegrationError) as err:
        integrate(lambda t, y: y * y, 0.0, 2.0, np.array([1.0]),
                  rtol=1e-10, atol=1e-10)
    assert 0.9 < err.value.t <= 2.0


def test_step_budget():
    with pytest.raises(IntegrationError, match="step"):
        integrate(lambda t, y: -y, 0.0, 1.0, np.array([1.0]),
                  rtol=1e-13, atol=1e-13, max_steps=3)


def test_nonfinite_rhs_raises():
    def rhs(t, y):
        return np.array([float("nan")]) if t > 0.5 else -y

    with pytest.raises(IntegrationError):
        integrate(rhs, 0.0, 1.0, np.array([1.0]))


def test_invalid_direction():
    with pytest.raises(ValueError):
        integrate(lambda t, y: -y, 1.0, 0.0, np.array([1.0]))


def test_tolerance_scaling():
    errs = []
    for tol in (1e-6, 1e-9, 1e-12):
        res = integrate(lambda t, y: np.array([math.cos(t)]) - y, 0.0, 5.0,
                        np.array([0.5]), rtol=tol, atol=tol)
        # y(0) = 1/2 kills the e^{-t} mode: y = (cos t + sin t)/2
        exact = 0.5 * (math.cos(5.0) + math.sin(5.0))
        errs.append(abs(res.y[0] - exact))
    assert errs[0] > errs[2]
    assert errs[2] < 1e-10


def test_determinism_bitwise():
    def rhs(t, y):
        return np.array([y[1], -math.sin(y[0]) - 0.1 * y[1] + math.cos(t)])

    runs = [integrate(rhs, 0.0, 12.0, np.array([0.2, -0.1]),
                      rtol=1e-10, atol=1e-10) for _ in range(2)]
    assert np.array_equal(runs[0].y, runs[1].y)
    assert runs[0].steps == runs[1].steps
    ts = np.linspace(0, 12, 50)
    assert all(np.array_equal(runs[0].dense(t), runs[1].dense(t)) for t in ts)


def test_rk4_fourth_order_convergence():
    def rhs(t, y):
        return np.array([math.cos(t) * y[0]])

    exact = math.exp(math.sin(2.0))
    e1 = abs(rk4_fixed(rhs, 0.0, 2.0, np.array([1.0]), 40)[0] - exact)
    e2 = abs(rk4_fixed(rhs, 0.0, 2.0, np.array([1.0]), 80)[0] - exact)
    assert 12.0 < e1 / e2 < 20.0


def test_rk4_agrees_with_adaptive():
    A = np.array([[0.0, 1.0], [-2.0, -0.3]])
    y0 = np.array([1.0, -0.5])
    adaptive = integrate(lambda t, y: A @ y, 0.0, 4.0, y0,
                         rtol=1e-12, atol=1e-12).y
    fixed = rk4_fixed(lambda t, y: A @ y, 0.0, 4.0, y0, 20000)
    assert np.max(np.abs(adaptive - fixed)) < 1e-10
