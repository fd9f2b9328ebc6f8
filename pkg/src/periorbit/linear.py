"""Unperturbed linear part: fundamental matrices and the periodic solution.

For x' = A(t) x + c(t) with T-periodic data, the principal fundamental
matrix Phi solves Phi' = A(t) Phi, Phi(0) = I.  When det(I - Phi(T)) != 0
the linear part has exactly one T-periodic solution

    xhat(t) = Phi(t) [ (I - Phi(T))^{-1} Phi(T) v(T) + v(t) ],
    v(t) = integral_0^t Phi(s)^{-1} c(s) ds,

which seeds everything downstream.  det Phi(T) = exp(int_0^T tr A) gives a
free consistency check on the integration (Liouville); it is evaluated with
an independent quadrature at construction time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import integrate as sci

from .integrate import DenseSolution, IntegrationError, integrate
from .system import PerturbedCoupledSystem

__all__ = [
    "LinearError",
    "ResonanceError",
    "Monodromy",
    "PeriodicTrajectory",
    "fundamental_matrix",
    "check_nonresonance",
    "periodic_solution_linear",
    "translation_operator",
]


class LinearError(RuntimeError):
    """Fundamental-matrix construction failed a consistency check."""


class ResonanceError(RuntimeError):
    """det(I - Phi(T)) is numerically zero; the linear hypothesis fails."""


@dataclass
class Monodromy:
    """Principal fundamental matrix over one period.

    ``det_i_minus_phi_t`` is the signed determinant of I - Phi(T); its
    magnitude is what the non-resonance hypothesis bounds away from zero.
    """

    period: float
    dim: int
    phi_t: np.ndarray
    det_i_minus_phi_t: float
    integrator_tol: float
    _dense: DenseSolution

    def phi(self, t: float) -> np.ndarray:
        """Phi(t) for t in [0, T]."""
        return self._dense(t).reshape(self.dim, self.dim)


@dataclass
class PeriodicTrajectory:
    """Dense T-periodic vector trajectory, extended by wrap-around."""

    period: float
    dim: int
    residual: float
    _dense: DenseSolution

    def __call__(self, t: float) -> np.ndarray:
        wrapped = t - self.period * math.floor(t / self.period)
        return self._dense(wrapped)

    def value0(self) -> np.ndarray:
        return self._dense(0.0)


def fundamental_matrix(system: PerturbedCoupledSystem, tol: float = 1e-10) -> Monodromy:
    """Integrate Phi' = A(t) Phi, Phi(0) = I over one period.

    Verifies Liouville's identity det Phi(T) = exp(int tr A) against an
    independent quadrature of the trace; failure means the integration (or
    the scenario's A) cannot be trusted, and raises LinearError.
    """
    k = system.k
    T = system.period

    def rhs(t: float, z: np.ndarray) -> np.ndarray:
        return (system.a_matrix(t) @ z.reshape(k, k)).ravel()

    try:
        res = integrate(rhs, 0.0, T, np.eye(k).ravel(), rtol=tol, atol=tol)
    except IntegrationError as exc:
        raise LinearError(f"fundamental matrix integration failed: {exc}") from exc
    phi_t = res.y.reshape(k, k)
    det = float(np.linalg.det(phi_t))
    if det <= 0:
        raise LinearError(f"det Phi(T) = {det:.3e} <= 0; integration is unreliable")

    trace_int, quad_err = sci.quad(
        lambda t: float(np.trace(system.a_matrix(t))), 0.0, T,
        epsabs=1e-13, epsrel=1e-13, limit=200,
    )
    expected = math.exp(trace_int)
    # Consistency tripwire, not an accuracy bound: the global error of an
    # adaptive run exceeds the per-step tolerance by the system's growth
    # factor (observed up to ~1e3 x tol on oscillatory A), while structural
    # mistakes (wrong sign, transposed A) blow the determinant by orders of
    # magnitude.  Relative threshold, since det Phi(T) spans many decades.
    bound = max(1e4 * tol, 1e-9) * max(1.0, abs(expected)) + 10.0 * abs(quad_err)
    if abs(det - expected) > bound:
        raise LinearError(
            f"Liouville check failed: det Phi(T) = {det:.12e}, "
            f"exp(int tr A) = {expected:.12e}, gap {abs(det - expected):.3e} > {bound:.3e}"
        )

    eye_minus = np.eye(k) - phi_t
    return Monodromy(
        period=T,
        dim=k,
        phi_t=phi_t,
        det_i_minus_phi_t=float(np.linalg.det(eye_minus)),
        integrator_tol=tol,
        _dense=res.dense,
    )


def check_nonresonance(monodromy: Monodromy, threshold: float = 1e-8) -> float:
    """Return |det(I - Phi(T))|; the caller compares against ``threshold``.

    Zero is a legitimate return (a resonant linear part), not an error.
    """
    return abs(monodromy.det_i_minus_phi_t)


def _forcing_integral(system: PerturbedCoupledSystem, tol: float):
    """Dense (Phi(t), v(t)) with v(t) = int_0^t Phi(s)^{-1} c(s) ds."""
    k = system.k
    T = system.period

    def rhs(t: float, z: np.ndarray) -> np.ndarray:
        phi = z[: k * k].reshape(k, k)
        dphi = system.a_matrix(t) @ phi
        dv = np.linalg.solve(phi, system.c_vector(t))
        return np.concatenate([dphi.ravel(), dv])

    z0 = np.concatenate([np.eye(k).ravel(), np.zeros(k)])
    try:
        return integrate(rhs, 0.0, T, z0, rtol=tol, atol=tol)
    except IntegrationError as exc:
        raise LinearError(f"forcing integral failed: {exc}") from exc


def periodic_solution_linear(
    system: PerturbedCoupledSystem,
    monodromy: Optional[Monodromy] = None,
    tol: float = 1e-10,
) -> PeriodicTrajectory:
    """The unique T-periodic solution of x' = A(t) x + c(t).

    Raises :class:`ResonanceError` when |det(I - Phi(T))| <= 1e-10.  The
    result is cross-checked against the closed-form variation-of-constants
    expression on a sample grid before being returned.
    """
    if monodromy is None:
        monodromy = fundamental_matrix(system, tol=tol)
    if abs(monodromy.det_i_minus_phi_t) <= 1e-10:
        raise ResonanceError(
            f"linear part is T-resonant: |det(I - Phi(T))| = "
            f"{abs(monodromy.det_i_minus_phi_t):.3e}"
        )
    k = system.k
    T = system.period
    aug = _forcing_integral(system, tol)
    v_t = aug.y[k * k:]
    phi_t = aug.y[: k * k].reshape(k, k)
    x0 = np.linalg.solve(np.eye(k) - phi_t, phi_t @ v_t)

    def rhs(t: float, x: np.ndarray) -> np.ndarray:
        return system.a_matrix(t) @ x + system.c_vector(t)

    res = integrate(rhs, 0.0, T, x0, rtol=tol, atol=tol)
    residual = float(np.max(np.abs(res.y - x0)))
    if residual > 1e3 * tol:
        raise LinearError(f"periodic solution residual {residual:.3e} exceeds tolerance")

    # second route: xhat(t) = Phi(t) (x0 + v(t)) from the augmented dense data
    for tau in np.linspace(0.0, T, 33):
        ztau = aug.dense(tau)
        phi_tau = ztau[: k * k].reshape(k, k)
        v_tau = ztau[k * k:]
        gap = np.max(np.abs(phi_tau @ (x0 + v_tau) - res.dense(tau)))
        if gap > 1e3 * tol:
            raise LinearError(
                f"variation-of-constants cross-check failed at t = {tau:.6g}: gap {gap:.3e}"
            )

    return PeriodicTrajectory(period=T, dim=k, residual=residual, _dense=res.dense)


def translation_operator(
    system: PerturbedCoupledSystem, tol: float = 1e-10
) -> tuple[np.ndarray, np.ndarray]:
    """Affine form of the time-T map of the linear part.

    Returns (Phi(T), b) with x(T) = Phi(T) p + b for x(0) = p; the offset is
    b = Phi(T) v(T).
    """
    k = system.k
    aug = _forcing_integral(system, tol)
    phi_t = aug.y[: k * k].reshape(k, k)
    v_t = aug.y[k * k:]
    return phi_t, phi_t @ v_t
