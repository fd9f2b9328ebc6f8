"""Numerical helpers for constraint manifolds embedded in R^s.

All derivatives in the package are central finite differences with step
1e-6 * max(1, |coordinate|); symbolic differentiation is deliberately out of
scope, so every Jacobian funnels through :func:`fd_jacobian`.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "GeometryError",
    "fd_jacobian",
    "project_onto_manifold",
    "tangent_basis",
    "chart_coords",
]

FD_STEP = 1e-6


class GeometryError(RuntimeError):
    """Projection or chart inversion failed to converge."""


def fd_jacobian(
    fn: Callable[[np.ndarray], np.ndarray],
    y: np.ndarray,
    step: float = FD_STEP,
) -> np.ndarray:
    """Central-difference Jacobian of a vector function at ``y``.

    Per-coordinate step ``step * max(1, |y_j|)``.
    """
    y = np.asarray(y, dtype=float)
    f0 = np.asarray(fn(y), dtype=float)
    jac = np.empty((f0.size, y.size))
    for j in range(y.size):
        h = step * max(1.0, abs(y[j]))
        up = y.copy()
        dn = y.copy()
        up[j] += h
        dn[j] -= h
        jac[:, j] = (np.asarray(fn(up), dtype=float) - np.asarray(fn(dn), dtype=float)) / (2 * h)
    return jac


def project_onto_manifold(
    gfun: Callable[[np.ndarray], np.ndarray],
    y: np.ndarray,
    tol: float = 1e-12,
    max_iter: int = 25,
    gjac: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> np.ndarray:
    """Return a nearby point with ``|g| <= tol`` via Gauss-Newton.

    Each update is the minimum-norm solution of the linearized constraints,
    so for small violations this is orthogonal projection to leading order.
    """
    y = np.asarray(y, dtype=float).copy()
    jac = gjac if gjac is not None else (lambda p: fd_jacobian(gfun, p))
    for _ in range(max_iter):
        g = np.asarray(gfun(y), dtype=float)
        if np.max(np.abs(g)) <= tol:
            return y
        J = jac(y)
        try:
            xi = np.linalg.solve(J @ J.T, g)
        except np.linalg.LinAlgError as exc:
            raise GeometryError(f"degenerate constraint Jacobian during projection: {exc}") from exc
        y = y - J.T @ xi
    g = np.asarray(gfun(y), dtype=float)
    if np.max(np.abs(g)) <= tol:
        return y
    raise GeometryError(
        f"projection did not converge: |g| = {np.max(np.abs(g)):.3e} after {max_iter} iterations"
    )


def tangent_basis(constraint_jacobian: np.ndarray, s: Optional[int] = None) -> np.ndarray:
    """Orthonormal basis of the null space of the constraint Jacobian.

    Returns an (s, d) matrix whose columns span the tangent space.  Signs are
    normalized (largest-magnitude entry of each column positive) so repeated
    calls at the same point give the same basis.
    """
    J = np.atleast_2d(np.asarray(constraint_jacobian, dtype=float))
    if J.size == 0:
        if s is None:
            raise ValueError("ambient dimension required for an empty constraint set")
        return np.eye(s)
    _, sv, vt = np.linalg.svd(J)
    rank = int(np.sum(sv > 1e-10 * max(1.0, sv[0] if sv.size else 1.0)))
    basis = vt[rank:].T
    for j in range(basis.shape[1]):
        i = int(np.argmax(np.abs(basis[:, j])))
        if basis[i, j] < 0:
            basis[:, j] = -basis[:, j]
    return basis


def chart_coords(
    point_fn: Callable[[np.ndarray], np.ndarray],
    jac_fn: Callable[[np.ndarray], np.ndarray],
    q: np.ndarray,
    theta0: Sequence[float],
    tol: float = 1e-10,
    max_iter: int = 30,
) -> np.ndarray:
    """Recover chart parameters with ``point_fn(theta) == q`` near ``theta0``.

    Gauss-Newton on the least-squares distance; only reliable when the hint
    is in the right basin, which is how it is used (membership tests for
    points produced from chart seeds).
    """
    theta = np.asarray(theta0, dtype=float).copy()
    q = np.asarray(q, dtype=float)
    for _ in range(max_iter):
        r = np.asarray(point_fn(theta), dtype=float) - q
        if np.linalg.norm(r) <= tol:
            return theta
        J = np.asarray(jac_fn(theta), dtype=float)
        step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        theta = theta + step
        if np.linalg.norm(step) < 1e-14 * max(1.0, np.linalg.norm(theta)):
            break
    r = np.asarray(point_fn(theta), dtype=float) - q
    if np.linalg.norm(r) <= max(tol, 1e-8):
        return theta
    raise GeometryError(f"chart inversion stalled with residual {np.linalg.norm(r):.3e}")
