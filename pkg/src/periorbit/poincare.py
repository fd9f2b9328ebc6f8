"""The Poincare T-translation operator and its fixed-point indices.

``flow`` advances an initial condition (p, q) over one period, projecting
back onto the manifold after every accepted step.  ``poincare_jacobian``
differentiates the time-T map by integrating the variational equations and
compressing to a product chart R^k x T_q M; it is cross-checked against
central finite differences of the flow itself.  Fixed points are refined by
Newton iteration in a moving orthonormal tangent chart, carry the index
sign det(I - DP) when hyperbolic, and feed the index identity

    |ind(P_T, U x V)| = 1_U(xhat(0)) * |deg(w, V)|

checked over a lambda grid by ``index_formula_check``.  The decoupled
comparison maps the identity factors through (linear translation times the
y-factor flow along xhat) are available for the product-rule checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import geometry
from .average import AveragedField, Region, averaged_field, brouwer_degree
from .integrate import DenseSolution, IntegrationError, integrate
from .linear import (
    Monodromy,
    PeriodicTrajectory,
    ResonanceError,
    fundamental_matrix,
    periodic_solution_linear,
    translation_operator,
)
from .system import PerturbedCoupledSystem

__all__ = [
    "PoincareError",
    "FlowError",
    "FlowResult",
    "FixedPointRecord",
    "IndexIdentityRow",
    "IndexReport",
    "flow",
    "poincare_jacobian",
    "find_fixed_point",
    "enumerate_fixed_points",
    "index_formula_check",
    "translation_index",
    "DecoupledModel",
    "YFactorModel",
    "factor_index",
]

BOUNDARY_TOL = 1e-8
EIGEN_MARGIN = 1e-8


class PoincareError(RuntimeError):
    """Jacobian cross-check failure, Newton divergence, or a bad call."""


class FlowError(PoincareError):
    """The orbit left the domain before time T (blow-up or underflow)."""


# ---------------------------------------------------------------------------
# Flow models.  Anything with k, s, period, rhs(t, z, lam), has_constraints,
# constraint_values(y) and project(y) can be flowed; the system itself
# qualifies, and the decoupled comparison dynamics below wrap one.


class DecoupledModel:
    """x and y evolved independently: linear part times the y-factor.

    The x-equation drops f1 and the y-equation sees xhat(t) instead of the
    actual x-orbit.  Its time-T map is the product the index identities
    factor through.
    """

    def __init__(self, system: PerturbedCoupledSystem, xhat: PeriodicTrajectory):
        self.system = system
        self.xhat = xhat
        self.k = system.k
        self.s = system.s
        self.period = system.period
        self.has_constraints = system.has_constraints
        self._buf = np.empty(system.k + system.s)

    def rhs(self, t: float, z: np.ndarray, lam: float) -> np.ndarray:
        k = self.k
        x = z[:k]
        dx = self.system.a_matrix(t) @ x + self.system.c_vector(t)
        ref = self._buf
        ref[:k] = self.xhat(t)
        ref[k:] = z[k:]
        dy = lam * self.system.f2_value(t, ref, lam)
        return np.concatenate([dx, dy])

    def constraint_values(self, y):
        return self.system.constraint_values(y)

    def project(self, y, tol: float = 1e-12):
        return self.system.project(y, tol=tol)

    def tangent_basis_at(self, y):
        return self.system.tangent_basis_at(y)


class YFactorModel:
    """The y-factor alone: y' = lambda f2(t, xhat(t), y, lambda), k = 0."""

    def __init__(self, system: PerturbedCoupledSystem, xhat: PeriodicTrajectory):
        self.system = system
        self.xhat = xhat
        self.k = 0
        self.s = system.s
        self.period = system.period
        self.has_constraints = system.has_constraints
        self._buf = np.empty(system.k + system.s)

    def rhs(self, t: float, z: np.ndarray, lam: float) -> np.ndarray:
        ref = self._buf
        ref[: self.system.k] = self.xhat(t)
        ref[self.system.k:] = z
        return lam * self.system.f2_value(t, ref, lam)

    def constraint_values(self, y):
        return self.system.constraint_values(y)

    def project(self, y, tol: float = 1e-12):
        return self.system.project(y, tol=tol)

    def tangent_basis_at(self, y):
        return self.system.tangent_basis_at(y)


def _model_tangent_basis(model, y: np.ndarray) -> np.ndarray:
    if not model.has_constraints:
        return np.eye(model.s)
    return model.tangent_basis_at(y)


@dataclass
class FlowResult:
    t: float
    state: np.ndarray
    dense: Optional[DenseSolution]
    drift: float
    steps: int


def flow(
    model,
    lam: float,
    p: Sequence[float],
    q: Sequence[float],
    t_final: Optional[float] = None,
    tol: float = 1e-10,
    dense: bool = True,
) -> FlowResult:
    """Advance (p, q) to ``t_final`` (default one period).

    Requires lam >= 0, q on the manifold within 1e-9, and
    0 < t_final <= T.  The reported ``drift`` is the largest constraint
    violation observed before a projection fixed it.
    """
    T = model.period
    tf = T if t_final is None else t_final
    if not 0 < tf <= T:
        raise PoincareError(f"t_final must lie in (0, T], got {tf!r}")
    if lam < 0:
        raise PoincareError(f"lambda must be nonnegative, got {lam!r}")
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.size != model.k or q.size != model.s:
        raise PoincareError(
            f"state split ({p.size}, {q.size}) does not match dimensions "
            f"({model.k}, {model.s})"
        )
    drift_box = [0.0]
    if model.has_constraints:
        g0 = float(np.max(np.abs(model.constraint_values(q))))
        if g0 > 1e-9:
            raise PoincareError(f"initial point violates the constraints: |g| = {g0:.3e}")
        k = model.k

        def hook(t: float, z: np.ndarray):
            g = float(np.max(np.abs(model.constraint_values(z[k:]))))
            if g > drift_box[0]:
                drift_box[0] = g
            if g < 1e-13:
                return None
            out = z.copy()
            out[k:] = model.project(z[k:])
            return out
    else:
        hook = None

    z0 = np.concatenate([p, q])

    def rhs(t: float, z: np.ndarray) -> np.ndarray:
        return model.rhs(t, z, lam)

    try:
        res = integrate(rhs, 0.0, tf, z0, rtol=tol, atol=tol,
                        post_step=hook, dense=dense)
    except IntegrationError as exc:
        raise FlowError(f"orbit not continuable to t = {tf:.6g}: {exc}") from exc
    return FlowResult(t=res.t, state=res.y, dense=res.dense,
                      drift=drift_box[0], steps=res.steps)


# ---------------------------------------------------------------------------
# Jacobian of the time-T map


def _rhs_state_jacobian(model, t: float, z: np.ndarray, lam: float) -> np.ndarray:
    return geometry.fd_jacobian(lambda zz: model.rhs(t, zz, lam), z)


def _variational_flow(model, lam, p, q, tol):
    """Flow plus the ambient derivative matrix transported along it."""
    n = model.k + model.s
    k = model.k

    def rhs(t: float, zxi: np.ndarray) -> np.ndarray:
        z = zxi[:n]
        xi = zxi[n:].reshape(n, n)
        f = model.rhs(t, z, lam)
        jac = _rhs_state_jacobian(model, t, z, lam)
        return np.concatenate([f, (jac @ xi).ravel()])

    if model.has_constraints:
        def hook(t: float, zxi: np.ndarray):
            y = zxi[k:n]
            if float(np.max(np.abs(model.constraint_values(y)))) < 1e-13:
                return None
            out = zxi.copy()
            out[k:n] = model.project(y)
            return out
    else:
        hook = None

    z0 = np.concatenate([np.asarray(p, float), np.asarray(q, float), np.eye(n).ravel()])
    try:
        res = integrate(rhs, 0.0, model.period, z0, rtol=tol, atol=tol,
                        post_step=hook, dense=False)
    except IntegrationError as exc:
        raise FlowError(f"variational flow failed: {exc}") from exc
    final = res.y[:n]
    dp_ambient = res.y[n:].reshape(n, n)
    return final, dp_ambient


def _compress(model, dp_ambient: np.ndarray, basis_q: np.ndarray, basis_img: np.ndarray) -> np.ndarray:
    k = model.k
    n = k + model.s
    d = basis_q.shape[1]
    cols = np.zeros((n, k + d))
    cols[:k, :k] = np.eye(k)
    cols[k:, k:] = basis_q
    rows = np.zeros((k + d, n))
    rows[:k, :k] = np.eye(k)
    rows[k:, k:] = basis_img.T
    return rows @ dp_ambient @ cols


def poincare_jacobian(
    model,
    lam: float,
    p: Sequence[float],
    q: Sequence[float],
    tol: float = 1e-10,
    check: bool = True,
) -> np.ndarray:
    """Derivative of the time-T map in the product chart R^k x T_q M.

    Integrates the variational equations along the orbit and compresses
    with orthonormal tangent bases at q and at the image point.  With
    ``check`` (the default) the result is compared against central finite
    differences of the flow; disagreement beyond 1e-4 relative rejects the
    result.  Inner loops that re-verify their output elsewhere may disable
    the cross-check for speed.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    final, dp_ambient = _variational_flow(model, lam, p, q, tol)
    k = model.k
    basis_q = _model_tangent_basis(model, q)
    q_img = final[k:]
    if model.has_constraints:
        q_img = model.project(q_img)
    basis_img = _model_tangent_basis(model, q_img)
    jac = _compress(model, dp_ambient, basis_q, basis_img)
    if check:
        fd = _fd_map_jacobian(model, lam, p, q, basis_q, basis_img, tol)
        rel = float(np.linalg.norm(jac - fd) / max(1.0, np.linalg.norm(jac)))
        if rel > 1e-4:
            raise PoincareError(
                f"variational/finite-difference Jacobian disagreement: {rel:.3e} relative"
            )
    return jac


def _fd_map_jacobian(model, lam, p, q, basis_q, basis_img, tol) -> np.ndarray:
    # Probe noise here is the integrator's global error, not machine epsilon,
    # and the two runs of a central difference need not share a step sequence,
    # so their errors do not cancel.  A wide step and a tightened probe
    # tolerance keep noise/2h and the h^2 truncation both near 1e-7.
    probe_tol = min(tol, 1e-12)
    k = model.k
    d = basis_q.shape[1]
    rows = np.zeros((k + d, k + model.s))
    rows[:k, :k] = np.eye(k)
    rows[k:, k:] = basis_img.T
    cols = []
    for i in range(k):
        h = 1e-4 * max(1.0, abs(p[i]))
        pp, pm = p.copy(), p.copy()
        pp[i] += h
        pm[i] -= h
        fp = flow(model, lam, pp, q, tol=probe_tol, dense=False).state
        fm = flow(model, lam, pm, q, tol=probe_tol, dense=False).state
        cols.append(rows @ (fp - fm) / (2 * h))
    for j in range(d):
        h = 1e-4 * max(1.0, float(np.linalg.norm(q)))
        qp = q + h * basis_q[:, j]
        qm = q - h * basis_q[:, j]
        if model.has_constraints:
            qp = model.project(qp)
            qm = model.project(qm)
        fp = flow(model, lam, p, qp, tol=probe_tol, dense=False).state
        fm = flow(model, lam, p, qm, tol=probe_tol, dense=False).state
        cols.append(rows @ (fp - fm) / (2 * h))
    return np.column_stack(cols)


# ---------------------------------------------------------------------------
# Fixed points


@dataclass
class FixedPointRecord:
    """A located fixed point of the time-T map.

    ``jacobian`` is the chart-compressed derivative; ``index`` is
    sign det(I - jacobian) when the eigenvalue margin clears 1e-8 and 0
    otherwise.  ``non_isolated`` marks the lambda = 0 case, where the whole
    slice {p*} x M is fixed.
    """

    lam: float
    p: tuple[float, ...]
    q: tuple[float, ...]
    residual: float
    jacobian: tuple[tuple[float, ...], ...]
    index: int
    eigen_margin: float
    non_isolated: bool = False

    @property
    def point(self) -> np.ndarray:
        return np.array(self.p + self.q)


def _record_from(model, lam, p, q, residual, jac_chart, non_isolated=False) -> FixedPointRecord:
    eigs = np.linalg.eigvals(jac_chart)
    margin = float(np.min(np.abs(1.0 - eigs))) if eigs.size else math.inf
    if non_isolated:
        index, margin = 0, 0.0
    elif margin > EIGEN_MARGIN:
        det = float(np.linalg.det(np.eye(jac_chart.shape[0]) - jac_chart))
        index = 1 if det > 0 else -1
    else:
        index = 0
    return FixedPointRecord(
        lam=float(lam),
        p=tuple(float(v) for v in p),
        q=tuple(float(v) for v in q),
        residual=float(residual),
        jacobian=tuple(tuple(float(v) for v in row) for row in jac_chart),
        index=index,
        eigen_margin=margin,
        non_isolated=non_isolated,
    )


def _newton_fixed_point(model, lam, p, q, tol, max_iter, flow_tol=None):
    """Moving-chart Newton for P_T(z) = z; returns (p, q, jac_chart, residual)."""
    ftol = flow_tol if flow_tol is not None else min(tol, 1e-11)
    p = np.asarray(p, dtype=float).copy()
    q = model.project(np.asarray(q, dtype=float)) if model.has_constraints \
        else np.asarray(q, dtype=float).copy()
    k = model.k
    for _ in range(max_iter):
        final, dp_ambient = _variational_flow(model, lam, p, q, ftol)
        r_amb = final - np.concatenate([p, q])
        residual = float(np.max(np.abs(r_amb)))
        basis = _model_tangent_basis(model, q)
        jac = _compress(model, dp_ambient, basis, basis)
        if residual < tol:
            return p, q, jac, residual
        r_chart = np.concatenate([r_amb[:k], basis.T @ r_amb[k:]])
        try:
            delta = np.linalg.solve(jac - np.eye(jac.shape[0]), -r_chart)
        except np.linalg.LinAlgError as exc:
            raise PoincareError(f"singular Newton system for the fixed point: {exc}") from exc
        p = p + delta[:k]
        q = q + basis @ delta[k:]
        if model.has_constraints:
            q = model.project(q)
    raise PoincareError(f"fixed-point Newton did not converge in {max_iter} iterations")


def find_fixed_point(
    system: PerturbedCoupledSystem,
    lam: float,
    p: Sequence[float],
    q: Sequence[float],
    tol: float = 1e-10,
    max_iter: int = 25,
    w: Optional[AveragedField] = None,
) -> FixedPointRecord:
    """Refine a fixed-point guess of the time-T map at parameter ``lam``.

    At lambda = 0 the map degenerates: the x-part has the exact affine
    solution and every manifold point is fixed in y.  The returned record
    then carries xhat(0), a w-refined q when the system is unconstrained
    (an averaged field is built on demand or taken from ``w``), and the
    non_isolated flag.
    """
    if lam < 0:
        raise PoincareError(f"lambda must be nonnegative, got {lam!r}")
    if lam == 0.0:
        phi_t, offset = translation_operator(system, tol=tol)
        eye_minus = np.eye(system.k) - phi_t
        if abs(np.linalg.det(eye_minus)) <= 1e-10:
            raise ResonanceError("resonant linear part: no isolated fixed point at lambda = 0")
        p_star = np.linalg.solve(eye_minus, offset)
        if system.has_constraints:
            q_star = system.project(np.asarray(q, dtype=float))
        else:
            if w is None:
                xhat = periodic_solution_linear(system, tol=tol)
                w = averaged_field(system, xhat)
            q_star = _newton_zero(w, np.asarray(q, dtype=float), tol)
        fr = flow(system, 0.0, p_star, q_star, tol=min(tol, 1e-11), dense=False)
        residual = float(np.max(np.abs(fr.state - np.concatenate([p_star, q_star]))))
        _, dp_ambient = _variational_flow(system, 0.0, p_star, q_star, min(tol, 1e-11))
        basis = _model_tangent_basis(system, q_star)
        jac = _compress(system, dp_ambient, basis, basis)
        return _record_from(system, 0.0, p_star, q_star, residual, jac, non_isolated=True)

    p_fin, q_fin, jac, residual = _newton_fixed_point(system, lam, p, q, tol, max_iter)
    return _record_from(system, lam, p_fin, q_fin, residual, jac)


def _newton_zero(w, q0: np.ndarray, tol: float) -> np.ndarray:
    q = q0.copy()
    for _ in range(50):
        r = np.asarray(w(q), dtype=float)
        if np.linalg.norm(r) < tol:
            return q
        J = geometry.fd_jacobian(lambda v: np.asarray(w(v), dtype=float), q)
        q = q + np.linalg.solve(J, -r)
    raise PoincareError("Newton on the averaged field did not converge")


# ---------------------------------------------------------------------------
# Enumeration over a product region and the index identity


def _box_contains(bounds, p, boundary_tol=BOUNDARY_TOL) -> Optional[bool]:
    """True/False membership; None flags a boundary hit."""
    for (lo, hi), v in zip(bounds, p):
        if abs(v - lo) < boundary_tol or abs(v - hi) < boundary_tol:
            return None
        if not lo < v < hi:
            return False
    return True


def _region_membership(region: Region, q: np.ndarray, hint) -> Optional[bool]:
    if region.chart is None:
        return _box_contains(region.bounds, q)
    chart = region.chart
    try:
        coords = geometry.chart_coords(
            lambda th: chart.point(th), lambda th: chart.jacobian(th), q, hint
        )
    except geometry.GeometryError:
        return False
    coords = region.canonical(coords)
    margin = region.boundary_margin(coords)
    if abs(margin) < BOUNDARY_TOL:
        return None
    return bool(margin > 0)


def enumerate_fixed_points(
    model,
    lam: float,
    u_bounds: Sequence[tuple[float, float]],
    v_region: Region,
    grid: int = 4,
    tol: float = 1e-10,
    max_iter: int = 25,
) -> list[FixedPointRecord]:
    """All fixed points of the time-T map found in U x V at this lambda.

    Seeds a grid over the product region, pre-ranks seeds by Poincare
    residual, runs the moving-chart Newton from the best ones and keeps the
    distinct interior solutions.  A fixed point within 1e-8 of the product
    boundary is a hard error (the index over the region is undefined).
    """
    u_bounds = [tuple(map(float, b)) for b in u_bounds]
    if len(u_bounds) != model.k:
        raise PoincareError(f"U needs {model.k} bounds pairs, got {len(u_bounds)}")
    p_axes = [np.linspace(lo, hi, grid + 2)[1:-1] for lo, hi in u_bounds]
    p_seeds = (
        [np.array(c) for c in zip(*(m.ravel() for m in np.meshgrid(*p_axes, indexing="ij")))]
        if model.k else [np.zeros(0)]
    )
    q_seeds = [(c, v_region.point_of(c)) for c in v_region.seed_grid(grid)]

    ranked = []
    for p0 in p_seeds:
        for hint, q0 in q_seeds:
            try:
                fr = flow(model, lam, p0, q0, tol=1e-8, dense=False)
            except FlowError:
                continue
            res = float(np.max(np.abs(fr.state - np.concatenate([p0, q0]))))
            ranked.append((res, p0, q0, hint))
    ranked.sort(key=lambda item: item[0])

    records: list[FixedPointRecord] = []
    for _, p0, q0, hint in ranked[: max(6, 2 * grid)]:
        try:
            p_fin, q_fin, jac, residual = _newton_fixed_point(
                model, lam, p0, q0, tol, max_iter
            )
        except (PoincareError, geometry.GeometryError):
            continue
        if any(
            np.linalg.norm(rec.point - np.concatenate([p_fin, q_fin])) < 1e-6
            for rec in records
        ):
            continue
        in_u = _box_contains(u_bounds, p_fin) if model.k else True
        in_v = _region_membership(v_region, q_fin, hint)
        if in_u is None or in_v is None:
            raise PoincareError(
                f"fixed point at lambda = {lam:g} lies on the boundary of U x V"
            )
        if in_u and in_v:
            records.append(_record_from(model, lam, p_fin, q_fin, residual, jac))
    records.sort(key=lambda rec: tuple(rec.point))
    return records


@dataclass
class IndexIdentityRow:
    lam: float
    fixed_points: tuple[FixedPointRecord, ...]
    index_sum: int
    lhs_abs: int
    rhs: int
    match: bool


@dataclass
class IndexReport:
    rows: tuple[IndexIdentityRow, ...]
    xhat0: tuple[float, ...]
    indicator: int
    degree: int
    degree_oracle: Optional[int]

    @property
    def all_match(self) -> bool:
        return all(r.match for r in self.rows)


def index_formula_check(
    system: PerturbedCoupledSystem,
    u_bounds: Sequence[tuple[float, float]],
    v_region: Region,
    lambdas: Sequence[float],
    grid: int = 4,
    tol: float = 1e-10,
) -> IndexReport:
    """Check |sum of indices over U x V| = 1_U(xhat(0)) * |deg(w, V)|.

    Builds the monodromy, xhat and the averaged field, evaluates the right
    side once, then enumerates fixed points at every requested lambda > 0.
    xhat(0) on the boundary of U is an error.
    """
    monodromy = fundamental_matrix(system, tol=tol)
    if abs(monodromy.det_i_minus_phi_t) <= 1e-10:
        raise ResonanceError("index identity needs a non-resonant linear part")
    xhat = periodic_solution_linear(system, monodromy, tol=tol)
    x0 = xhat.value0()
    inside = _box_contains([tuple(map(float, b)) for b in u_bounds], x0)
    if inside is None:
        raise PoincareError("xhat(0) lies on the boundary of U")
    indicator = 1 if inside else 0
    w = averaged_field(system, xhat)
    deg = brouwer_degree(w, v_region, tol=max(tol, 1e-10))
    rhs_value = indicator * abs(deg.value)

    rows = []
    for lam in lambdas:
        if lam <= 0:
            raise PoincareError("index identity lambdas must be positive")
        fps = enumerate_fixed_points(system, lam, u_bounds, v_region, grid=grid, tol=tol)
        total = int(sum(fp.index for fp in fps))
        rows.append(
            IndexIdentityRow(
                lam=float(lam),
                fixed_points=tuple(fps),
                index_sum=total,
                lhs_abs=abs(total),
                rhs=rhs_value,
                match=abs(total) == rhs_value,
            )
        )
    return IndexReport(
        rows=tuple(rows),
        xhat0=tuple(float(v) for v in x0),
        indicator=indicator,
        degree=deg.value,
        degree_oracle=deg.oracle_value,
    )


def translation_index(
    system: PerturbedCoupledSystem,
    u_bounds: Sequence[tuple[float, float]],
    tol: float = 1e-10,
) -> tuple[int, np.ndarray]:
    """Index of the affine time-T map of the linear part over a box U.

    Returns (sign det(I - Phi(T)) * 1_U(p*), p*) for the unique fixed point
    p*; resonance and boundary hits are errors.
    """
    phi_t, offset = translation_operator(system, tol=tol)
    eye_minus = np.eye(system.k) - phi_t
    det = float(np.linalg.det(eye_minus))
    if abs(det) <= 1e-10:
        raise ResonanceError("translation operator is resonant")
    p_star = np.linalg.solve(eye_minus, offset)
    inside = _box_contains([tuple(map(float, b)) for b in u_bounds], p_star)
    if inside is None:
        raise PoincareError("the linear fixed point lies on the boundary of U")
    if not inside:
        return 0, p_star
    return (1 if det > 0 else -1), p_star


def factor_index(
    system: PerturbedCoupledSystem,
    xhat: PeriodicTrajectory,
    lam: float,
    v_region: Region,
    grid: int = 4,
    tol: float = 1e-10,
) -> tuple[int, list[FixedPointRecord]]:
    """Index of the y-factor flow map over V (sum over its fixed points)."""
    model = YFactorModel(system, xhat)
    fps = enumerate_fixed_points(model, lam, [], v_region, grid=grid, tol=tol)
    return int(sum(fp.index for fp in fps)), fps
