"""Adaptive Runge-Kutta integration with dense output.

One embedded Dormand-Prince 5(4) stepper serves the whole package: monodromy
matrices, periodic orbits, Poincare maps and variational flows all go through
:func:`integrate`.  A ``post_step`` hook lets callers re-project the state
after every accepted step, which is how flows stay on an embedded manifold.

``rk4_fixed`` is a deliberately boring fixed-step classical Runge-Kutta kept
around as an independent re-verification route; it shares no stepping logic
with the adaptive path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

__all__ = ["IntegrationError", "DenseSolution", "IntegrationResult", "integrate", "rk4_fixed"]


class IntegrationError(RuntimeError):
    """Step-size underflow, non-finite state, or a right-hand-side failure."""

    def __init__(self, message: str, t: float):
        super().__init__(f"{message} (t = {t:.6g})")
        self.t = t


# Dormand-Prince 5(4) tableau.  Fifth-order weights propagate; the last row
# of _A equals them, so stage 7 is the FSAL evaluation at the new point.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = np.array(
    [
        [0, 0, 0, 0, 0, 0],
        [1 / 5, 0, 0, 0, 0, 0],
        [3 / 40, 9 / 40, 0, 0, 0, 0],
        [44 / 45, -56 / 15, 32 / 9, 0, 0, 0],
        [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0, 0],
        [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656, 0],
        [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
    ]
)
_B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
# difference between the 5th- and embedded 4th-order weights
_E = np.array([71 / 57600, 0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# quartic interpolant coefficients (Shampine); rows pair with the 7 stages
_P = np.array(
    [
        [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0, 0, 0, 0],
        [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0


class DenseSolution:
    """Piecewise-quartic interpolant collected over the accepted steps.

    Continuous, matches the accepted states at the segment ends, and carries
    the local error order of the underlying pair in between.
    """

    def __init__(self, t0: float, t1: float, lefts: np.ndarray, hs: np.ndarray,
                 y0s: np.ndarray, coeffs: np.ndarray):
        self.t0 = t0
        self.t1 = t1
        self._lefts = lefts            # (n,) segment start times
        self._hs = hs                  # (n,) segment widths
        self._y0s = y0s                # (n, dim)
        self._coeffs = coeffs          # (n, dim, 4)

    def __call__(self, t: float) -> np.ndarray:
        lo, hi = (self.t0, self.t1) if self.t1 >= self.t0 else (self.t1, self.t0)
        if t < lo - 1e-12 or t > hi + 1e-12:
            raise ValueError(f"t = {t:.6g} outside the integrated span [{lo:.6g}, {hi:.6g}]")
        i = int(np.searchsorted(self._lefts, t, side="right")) - 1
        i = min(max(i, 0), len(self._hs) - 1)
        theta = (t - self._lefts[i]) / self._hs[i]
        powers = np.array([theta, theta**2, theta**3, theta**4])
        return self._y0s[i] + self._hs[i] * (self._coeffs[i] @ powers)


@dataclass
class IntegrationResult:
    t: float
    y: np.ndarray
    dense: Optional[DenseSolution]
    steps: int
    rejected: int


def integrate(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    t0: float,
    t1: float,
    y0: np.ndarray,
    rtol: float = 1e-10,
    atol: float = 1e-10,
    max_step: Optional[float] = None,
    first_step: Optional[float] = None,
    post_step: Optional[Callable[[float, np.ndarray], Optional[np.ndarray]]] = None,
    dense: bool = True,
    max_steps: int = 1_000_000,
) -> IntegrationResult:
    """Integrate ``y' = rhs(t, y)`` from ``t0`` to ``t1 > t0``.

    ``post_step`` may return a corrected state after each accepted step (or
    None to keep it); the correction feeds the next step but leaves the
    already-built dense segment untouched.

    Raises :class:`IntegrationError` on step underflow, non-finite values
    that refinement cannot cure, or exceptions escaping ``rhs``.
    """
    if t1 <= t0:
        raise ValueError("integration span must satisfy t1 > t0")
    y = np.asarray(y0, dtype=float).copy()
    dim = y.size
    span = t1 - t0
    hmax = span if max_step is None else min(max_step, span)

    def call_rhs(t: float, state: np.ndarray) -> np.ndarray:
        try:
            out = np.asarray(rhs(t, state), dtype=float)
        except (ValueError, OverflowError, ZeroDivisionError, FloatingPointError) as exc:
            raise IntegrationError(f"right-hand side failed: {exc}", t) from exc
        return out

    t = t0
    f = call_rhs(t, y)
    if first_step is not None:
        h = min(first_step, hmax)
    else:
        # small trial step scaled off the initial slope; the controller
        # corrects it within a step or two either way
        scale = atol + rtol * np.abs(y)
        d0 = np.sqrt(np.mean((y / scale) ** 2)) if dim else 0.0
        d1 = np.sqrt(np.mean((f / scale) ** 2)) if dim else 0.0
        h = min(hmax, span / 100 if d1 == 0 else max(1e-6 * span, 0.01 * d0 / d1))
        h = max(h, 1e-10 * span)

    lefts: list[float] = []
    hs: list[float] = []
    y0s: list[np.ndarray] = []
    coeffs: list[np.ndarray] = []

    K = np.empty((7, dim))
    steps = 0
    rejected = 0
    while t < t1:
        if steps + rejected > max_steps:
            raise IntegrationError("step budget exhausted", t)
        h = min(h, t1 - t)
        if h < 1e-14 * max(1.0, abs(t)):
            raise IntegrationError("step size underflow", t)

        K[0] = f
        failed = False
        for i in range(1, 7):
            yi = y + h * (K[:i].T @ _A[i, :i])
            if not np.all(np.isfinite(yi)):
                failed = True
                break
            K[i] = call_rhs(t + _C[i] * h, yi)
        if not failed:
            y_new = y + h * (K.T @ _B)
            failed = not (np.all(np.isfinite(y_new)) and np.all(np.isfinite(K)))
        if failed:
            rejected += 1
            h *= 0.5
            continue

        err_vec = h * (K.T @ _E)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = np.sqrt(np.mean((err_vec / scale) ** 2))

        if err <= 1.0:
            t_new = t + h
            if dense:
                lefts.append(t)
                hs.append(h)
                y0s.append(y.copy())
                coeffs.append(K.T @ _P)
            factor = _MAX_FACTOR if err == 0 else min(_MAX_FACTOR, max(_MIN_FACTOR, _SAFETY * err**-0.2))
            projected = post_step(t_new, y_new) if post_step is not None else None
            if projected is None:
                y = y_new
                f = K[6]  # FSAL
            else:
                y = np.asarray(projected, dtype=float)
                f = call_rhs(t_new, y)
            t = t_new
            steps += 1
            h = min(h * factor, hmax)
        else:
            rejected += 1
            h *= max(_MIN_FACTOR, _SAFETY * err**-0.2)

    sol = None
    if dense:
        sol = DenseSolution(
            t0, t1, np.array(lefts), np.array(hs), np.array(y0s), np.array(coeffs)
        )
    return IntegrationResult(t=t, y=y, dense=sol, steps=steps, rejected=rejected)


def rk4_fixed(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    t0: float,
    t1: float,
    y0: np.ndarray,
    n_steps: int,
) -> np.ndarray:
    """Classical fixed-step RK4 over ``n_steps`` equal steps; returns y(t1)."""
    if n_steps < 1:
        raise ValueError("n_steps must be positive")
    y = np.asarray(y0, dtype=float).copy()
    h = (t1 - t0) / n_steps
    t = t0
    for _ in range(n_steps):
        k1 = np.asarray(rhs(t, y), dtype=float)
        k2 = np.asarray(rhs(t + 0.5 * h, y + 0.5 * h * k1), dtype=float)
        k3 = np.asarray(rhs(t + 0.5 * h, y + 0.5 * h * k2), dtype=float)
        k4 = np.asarray(rhs(t + h, y + h * k3), dtype=float)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += h
    return y
