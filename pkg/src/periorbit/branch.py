"""Branches of periodic-orbit initial data in (lambda, p, q).

Each regular zero q* of the averaged field, paired with the initial value
p* = xhat(0) of the linear periodic solution, is a trivial point the
solution set branches from.  Continuation runs in the composite space
[0, infinity) x R^k x M with a tangent predictor and an orthogonal Newton
corrector on the desingularized residual

    G(lambda, p, q) = [ P_x - p ;  U_q^T (P_y - q) / lambda ],

whose lambda -> 0 limit replaces the y-rows by T U_q^T wbar_p(q), the
period average of f2 along the x-orbit started at p.  Dividing by lambda is
what keeps the corrector honest near the trivial branch: without it every
(p*, q) is a solution at lambda = 0 and the predictor would stall.

Every accepted point is stored with its Poincare residual, chart Jacobian
and fixed-point index; ``reverify_branch`` recomputes the residuals with
the independent fixed-step integrator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import geometry
from .average import (
    AveragedField,
    Region,
    ZeroRecord,
    averaged_field,
    find_zeros,
)
from .integrate import rk4_fixed
from .linear import (
    PeriodicTrajectory,
    ResonanceError,
    fundamental_matrix,
    periodic_solution_linear,
    translation_operator,
)
from .poincare import (
    FixedPointRecord,
    FlowError,
    PoincareError,
    _compress,
    _model_tangent_basis,
    _record_from,
    _variational_flow,
    flow,
)
from .system import PerturbedCoupledSystem

__all__ = [
    "BranchError",
    "ContinuationOptions",
    "BranchSeed",
    "Branch",
    "TTriple",
    "TERMINATIONS",
    "seed_branches",
    "continue_branch",
    "branch_to_triples",
    "reverify_branch",
]

TERMINATIONS = (
    "lambda_max_reached",
    "left_region",
    "step_failure",
    "blow_up",
    "closed_loop",
    "lambda_zero",
    "max_points",
)

_LAMBDA_EPS = 1e-9
_QUAD_NODES = 256


class BranchError(RuntimeError):
    """Seeding or continuation failed structurally."""


@dataclass(frozen=True)
class ContinuationOptions:
    lambda_max: float
    step0: float = 1e-2
    step_min: float = 1e-6
    step_max: float = 0.1
    max_points: int = 10000
    tol: float = 1e-10
    max_corrector_iters: int = 10
    region_bounds: Optional[tuple[tuple[float, float], ...]] = None

    def __post_init__(self):
        if self.lambda_max < 0:
            raise ValueError("lambda_max must be nonnegative")
        if not 0 < self.step_min <= self.step0 <= self.step_max:
            raise ValueError("need 0 < step_min <= step0 <= step_max")


@dataclass
class BranchSeed:
    """A trivial point (0, p*, q*) with its outgoing branch direction."""

    p: np.ndarray
    q: np.ndarray
    zero: ZeroRecord
    tangent: np.ndarray            # unit vector in (lambda, p, q), lambda > 0
    degree_warning: bool = False


@dataclass
class Branch:
    seed: BranchSeed
    points: list[FixedPointRecord]
    termination: str
    arclength: float
    warnings: list[str] = field(default_factory=list)


@dataclass
class TTriple:
    """A starting triple lifted to the full periodic orbit."""

    lam: float
    orbit: PeriodicTrajectory
    residual: float


# ---------------------------------------------------------------------------
# The desingularized corrector residual


class _Residual:
    def __init__(self, system: PerturbedCoupledSystem, tol: float):
        self.system = system
        self.k = system.k
        self.s = system.s
        self.T = system.period
        self.ftol = min(tol, 1e-11)

    def wbar(self, dense_x, q: np.ndarray) -> np.ndarray:
        """Average of f2 along the x-orbit in ``dense_x`` with y frozen at q."""
        sys = self.system
        z = np.empty(self.k + self.s)
        z[self.k:] = q
        acc = np.zeros(self.s)
        for i in range(_QUAD_NODES):
            t = i * self.T / _QUAD_NODES
            z[: self.k] = dense_x(t)[: self.k]
            acc += sys.f2_value(t, z, 0.0)
        return acc / _QUAD_NODES

    def gtilde(self, lam: float, p: np.ndarray, q: np.ndarray, basis: np.ndarray):
        """Returns (chart residual, ambient Poincare residual)."""
        if lam > _LAMBDA_EPS:
            fr = flow(self.system, lam, p, q, tol=self.ftol, dense=False)
            r = fr.state - np.concatenate([p, q])
            g = np.concatenate([r[: self.k], (basis.T @ r[self.k:]) / lam])
            return g, r
        fr = flow(self.system, 0.0, p, q, tol=self.ftol, dense=True)
        r_x = fr.state[: self.k] - p
        g_y = self.T * (basis.T @ self.wbar(fr.dense, q))
        return np.concatenate([r_x, g_y]), np.concatenate([r_x, np.zeros(self.s)])

    def zeta_jacobian(self, lam: float, p: np.ndarray, q: np.ndarray, basis: np.ndarray):
        """d gtilde / d(p, theta) from the variational flow, plus DP chart."""
        final, dp_ambient = _variational_flow(self.system, lam, p, q, self.ftol)
        dp_chart = _compress(self.system, dp_ambient, basis, basis)
        dg = dp_chart - np.eye(dp_chart.shape[0])
        if lam > _LAMBDA_EPS:
            dg[self.k:, :] /= lam
            return dg, dp_chart, final
        # lambda = 0: finite differences of the averaged rows
        d = basis.shape[1]
        dg0 = np.zeros((self.k + d, self.k + d))
        dg0[: self.k, :] = dg[: self.k, :]
        for j in range(self.k + d):
            h = 1e-6
            if j < self.k:
                pp, pm = p.copy(), p.copy()
                pp[j] += h
                pm[j] -= h
                gp, _ = self.gtilde(0.0, pp, q, basis)
                gm, _ = self.gtilde(0.0, pm, q, basis)
            else:
                dq = basis[:, j - self.k]
                qp, qm = q + h * dq, q - h * dq
                if self.system.has_constraints:
                    qp, qm = self.system.project(qp), self.system.project(qm)
                gp, _ = self.gtilde(0.0, p, qp, basis)
                gm, _ = self.gtilde(0.0, p, qm, basis)
            dg0[self.k:, j] = (gp[self.k:] - gm[self.k:]) / (2 * h)
        return dg0, dp_chart, final

    def lambda_column(self, lam: float, p: np.ndarray, q: np.ndarray, basis: np.ndarray):
        h = max(1e-6, 1e-3 * lam)
        gp, _ = self.gtilde(lam + h, p, q, basis)
        if lam - h > _LAMBDA_EPS or lam == 0.0:
            lo = max(lam - h, 0.0)
            gm, _ = self.gtilde(lo, p, q, basis)
            return (gp - gm) / (lam + h - lo)
        g0, _ = self.gtilde(lam, p, q, basis)
        return (gp - g0) / h


# ---------------------------------------------------------------------------
# Seeding


def seed_branches(
    system: PerturbedCoupledSystem,
    region: Region,
    tol: float = 1e-10,
    grid: int = 8,
) -> list[BranchSeed]:
    """Trivial points over the regular zeros of w in a region.

    Raises :class:`ResonanceError` for a resonant linear part.  A region
    degree of zero (or degenerate zeros, which are skipped) voids the
    branch guarantee; affected seeds carry ``degree_warning``.
    """
    monodromy = fundamental_matrix(system, tol=tol)
    if abs(monodromy.det_i_minus_phi_t) <= 1e-8:
        raise ResonanceError(
            f"cannot seed branches: |det(I - Phi(T))| = "
            f"{abs(monodromy.det_i_minus_phi_t):.3e}"
        )
    xhat = periodic_solution_linear(system, monodromy, tol=tol)
    w = averaged_field(system, xhat)
    zeros = find_zeros(w, region, grid=grid, tol=tol)
    regular = [z for z in zeros if not z.degenerate]
    degree_value = sum(z.sign for z in regular)
    warn = degree_value == 0 or len(regular) < len(zeros)

    phi_t, offset = translation_operator(system, tol=tol)
    p_star = np.linalg.solve(np.eye(system.k) - phi_t, offset)

    res = _Residual(system, tol)
    seeds = []
    for zero in regular:
        q_star = np.array(zero.location)
        basis = _model_tangent_basis(system, q_star)
        tangent = _seed_tangent(res, p_star, q_star, basis)
        seeds.append(
            BranchSeed(p=p_star.copy(), q=q_star, zero=zero, tangent=tangent,
                       degree_warning=warn)
        )
    return seeds


def _seed_tangent(res: _Residual, p: np.ndarray, q: np.ndarray, basis: np.ndarray) -> np.ndarray:
    k = res.k
    d = basis.shape[1]
    dg_zeta, _, _ = res.zeta_jacobian(0.0, p, q, basis)
    # forward difference in lambda off the trivial slice
    h = 1e-4
    gp, _ = res.gtilde(h, p, q, basis)
    g0, _ = res.gtilde(0.0, p, q, basis)
    dg_lam = (gp - g0) / h
    full = np.column_stack([dg_lam, dg_zeta])        # (k+d) x (1+k+d)
    _, _, vh = np.linalg.svd(full)
    tau = vh[-1]
    if abs(tau[0]) < 1e-8:
        raise BranchError("branch tangent at the seed has no lambda component")
    if tau[0] < 0:
        tau = -tau
    ambient = np.concatenate([tau[:1], tau[1: 1 + k], basis @ tau[1 + k:]])
    return ambient / np.linalg.norm(ambient)


# ---------------------------------------------------------------------------
# Continuation


def _chart_tangent(tau: np.ndarray, k: int, basis: np.ndarray) -> np.ndarray:
    return np.concatenate([tau[:1], tau[1: 1 + k], basis.T @ tau[1 + k:]])


def _full_point(lam: float, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return np.concatenate([[lam], p, q])


def continue_branch(
    system: PerturbedCoupledSystem,
    seed: BranchSeed,
    options: ContinuationOptions,
) -> Branch:
    """Trace the branch from a seed until a termination condition.

    The arclength step adapts between ``step_min`` and ``step_max``; a
    corrector failure halves it, quick convergence grows it.  Negative
    corrected lambda reflects to the trivial slice, recording the second
    trivial point and terminating with ``lambda_zero``.
    """
    res = _Residual(system, options.tol)
    k = system.k
    p = seed.p.copy()
    q = seed.q.copy()
    lam = 0.0
    tau = seed.tangent.copy()

    warnings: list[str] = []
    if seed.degree_warning:
        warnings.append("region degree is zero or had degenerate zeros; "
                        "branch guarantee void")

    points = [_seed_record(system, res, p, q)]
    seed_full = _full_point(0.0, p, q)
    arclength = 0.0
    h = options.step0
    termination = None

    while termination is None:
        if len(points) >= options.max_points:
            termination = "max_points"
            break
        if lam >= options.lambda_max - 1e-12:
            termination = "lambda_max_reached"
            break

        accepted = None
        saw_blow_up = False
        while True:
            lam_pred = lam + h * tau[0]
            p_pred = p + h * tau[1: 1 + k]
            q_pred = q + h * tau[1 + k:]
            if system.has_constraints:
                try:
                    q_pred = system.project(q_pred)
                except geometry.GeometryError:
                    q_pred = None
            if q_pred is not None and lam_pred >= 0:
                try:
                    accepted = _correct(res, lam_pred, p_pred, q_pred, tau, options)
                except FlowError:
                    saw_blow_up = True
                    accepted = None
                except (PoincareError, np.linalg.LinAlgError, geometry.GeometryError):
                    accepted = None
            if q_pred is not None and lam_pred < 0:
                # the predictor crossed the trivial slice: land on it exactly
                accepted = ("reflect", None)
            if accepted is not None:
                break
            h *= 0.5
            if h < options.step_min:
                termination = "blow_up" if saw_blow_up else "step_failure"
                break
        if termination is not None:
            break

        if accepted[0] == "reflect" or accepted[1][0] < 0:
            try:
                point = _land_on_trivial(system, res, p, q, options)
            except (BranchError, PoincareError, ResonanceError) as exc:
                termination = "step_failure"
                warnings.append(f"could not land on the trivial slice: {exc}")
                break
            arclength += float(np.linalg.norm(point_vector(point) - _full_point(lam, p, q)))
            points.append(point)
            termination = "lambda_zero"
            break

        iters, (lam_new, p_new, q_new) = accepted
        if lam_new > options.lambda_max:
            try:
                lam_new, p_new, q_new = _solve_at_lambda(
                    res, options.lambda_max, p_new, q_new, options
                )
            except (PoincareError, np.linalg.LinAlgError) as exc:
                termination = "step_failure"
                warnings.append(f"could not land on lambda_max: {exc}")
                break

        basis_new = _model_tangent_basis(system, q_new)
        dg_zeta, dp_chart, final = res.zeta_jacobian(lam_new, p_new, q_new, basis_new)
        residual = float(np.max(np.abs(final - np.concatenate([p_new, q_new]))))
        record = _record_from(system, lam_new, p_new, q_new, residual, dp_chart)
        new_full = _full_point(lam_new, p_new, q_new)
        step_len = float(np.linalg.norm(new_full - _full_point(lam, p, q)))
        arclength += step_len
        points.append(record)

        if options.region_bounds is not None and not _in_bounds(
            options.region_bounds, new_full
        ):
            termination = "left_region"
            break
        if arclength > 10 * options.step0 and np.linalg.norm(new_full - seed_full) < max(
            h, options.step0
        ):
            warnings.append("branch returned to its seed (closed loop)")
            termination = "closed_loop"
            break

        dg_lam = res.lambda_column(lam_new, p_new, q_new, basis_new)
        tau = _next_tangent(dg_lam, dg_zeta, tau, k, basis_new)
        lam, p, q = lam_new, p_new, q_new
        if iters <= 3:
            h = min(h * 1.4, options.step_max)
        elif iters >= 6:
            h = max(h * 0.6, options.step_min)

    return Branch(
        seed=seed,
        points=points,
        termination=termination,
        arclength=arclength,
        warnings=warnings,
    )


def point_vector(record: FixedPointRecord) -> np.ndarray:
    return np.concatenate([[record.lam], record.p, record.q])


def _in_bounds(bounds, vec) -> bool:
    return all(lo <= v <= hi for (lo, hi), v in zip(bounds, vec))


def _seed_record(system, res: _Residual, p: np.ndarray, q: np.ndarray) -> FixedPointRecord:
    final, dp_ambient = _variational_flow(system, 0.0, p, q, res.ftol)
    basis = _model_tangent_basis(system, q)
    dp_chart = _compress(system, dp_ambient, basis, basis)
    residual = float(np.max(np.abs(final - np.concatenate([p, q]))))
    return _record_from(system, 0.0, p, q, residual, dp_chart, non_isolated=True)


def _correct(res: _Residual, lam, p, q, tau, options: ContinuationOptions):
    """Orthogonal Newton corrector; returns (iterations, state) or raises."""
    system = res.system
    k = res.k
    u_pred = _full_point(lam, p, q)
    for it in range(1, options.max_corrector_iters + 1):
        basis = _model_tangent_basis(system, q)
        g, r_amb = res.gtilde(lam, p, q, basis)
        if float(np.max(np.abs(r_amb))) < options.tol:
            return it, (lam, p, q)
        dg_zeta, _, _ = res.zeta_jacobian(lam, p, q, basis)
        dg_lam = res.lambda_column(lam, p, q, basis)
        tau_chart = _chart_tangent(tau, k, basis)
        bordered = np.zeros((g.size + 1, g.size + 1))
        bordered[: g.size, 0] = dg_lam
        bordered[: g.size, 1:] = dg_zeta
        bordered[g.size, :] = tau_chart
        ortho = float(
            tau[0] * (lam - u_pred[0])
            + tau[1: 1 + k] @ (p - u_pred[1: 1 + k])
            + tau[1 + k:] @ (q - u_pred[1 + k:])
        )
        rhs = -np.concatenate([g, [ortho]])
        delta = np.linalg.solve(bordered, rhs)
        lam = lam + delta[0]
        p = p + delta[1: 1 + k]
        q = q + basis @ delta[1 + k:]
        if system.has_constraints:
            q = system.project(q)
        if lam < -10 * options.step_min:
            return it, (lam, p, q)  # caller reflects off the trivial slice
    basis = _model_tangent_basis(system, q)
    _, r_amb = res.gtilde(max(lam, 0.0), p, q, basis)
    if float(np.max(np.abs(r_amb))) < options.tol:
        return options.max_corrector_iters, (lam, p, q)
    raise PoincareError("corrector did not converge")


def _solve_at_lambda(res: _Residual, lam: float, p, q, options: ContinuationOptions):
    """Natural-parameter Newton at fixed lambda > 0."""
    system = res.system
    for _ in range(options.max_corrector_iters + 5):
        basis = _model_tangent_basis(system, q)
        g, r_amb = res.gtilde(lam, p, q, basis)
        if float(np.max(np.abs(r_amb))) < options.tol:
            return lam, p, q
        dg_zeta, _, _ = res.zeta_jacobian(lam, p, q, basis)
        delta = np.linalg.solve(dg_zeta, -g)
        p = p + delta[: res.k]
        q = q + basis @ delta[res.k:]
        if system.has_constraints:
            q = system.project(q)
    raise PoincareError(f"fixed-lambda solve at {lam:g} did not converge")


def _land_on_trivial(system, res: _Residual, p, q, options: ContinuationOptions):
    """Newton onto the lambda = 0 slice: x-fixed-point plus a zero of wbar."""
    phi_t, offset = translation_operator(system, tol=options.tol)
    eye_minus = np.eye(system.k) - phi_t
    if abs(np.linalg.det(eye_minus)) <= 1e-10:
        raise ResonanceError("resonant linear part at the trivial slice")
    p0 = np.linalg.solve(eye_minus, offset)
    q0 = np.asarray(q, dtype=float).copy()
    for _ in range(options.max_corrector_iters + 5):
        basis = _model_tangent_basis(system, q0)
        g, _ = res.gtilde(0.0, p0, q0, basis)
        if float(np.max(np.abs(g))) < 1e-9:
            return _seed_record(system, res, p0, q0)
        dg_zeta, _, _ = res.zeta_jacobian(0.0, p0, q0, basis)
        delta = np.linalg.solve(dg_zeta, -g)
        p0 = p0 + delta[: res.k]
        q0 = q0 + basis @ delta[res.k:]
        if system.has_constraints:
            q0 = system.project(q0)
    raise BranchError("reflection onto the trivial slice did not converge")


def _next_tangent(dg_lam, dg_zeta, tau_old, k, basis) -> np.ndarray:
    n = dg_lam.size
    bordered = np.zeros((n + 1, n + 1))
    bordered[:n, 0] = dg_lam
    bordered[:n, 1:] = dg_zeta
    bordered[n, :] = _chart_tangent(tau_old, k, basis)
    rhs = np.zeros(n + 1)
    rhs[n] = 1.0
    x = np.linalg.solve(bordered, rhs)
    ambient = np.concatenate([x[:1], x[1: 1 + k], basis @ x[1 + k:]])
    return ambient / np.linalg.norm(ambient)


# ---------------------------------------------------------------------------
# Triples and independent re-verification


def branch_to_triples(
    system: PerturbedCoupledSystem,
    branch: Branch,
    stride: int = 1,
    tol: float = 1e-10,
) -> list[TTriple]:
    """Lift every stride-th branch point to its full periodic orbit."""
    if stride < 1:
        raise ValueError("stride must be positive")
    out = []
    for record in branch.points[::stride]:
        fr = flow(system, record.lam, np.array(record.p), np.array(record.q),
                  tol=min(tol, 1e-11), dense=True)
        z0 = record.point
        residual = float(np.max(np.abs(fr.state - z0)))
        orbit = PeriodicTrajectory(
            period=system.period, dim=z0.size, residual=residual, _dense=fr.dense
        )
        out.append(TTriple(lam=record.lam, orbit=orbit, residual=residual))
    return out


def reverify_branch(
    system: PerturbedCoupledSystem,
    branch: Branch,
    steps_per_period: int = 10000,
) -> np.ndarray:
    """Poincare residual of every point under the fixed-step RK4 route."""
    out = []
    for record in branch.points:
        z0 = record.point
        lam = record.lam

        def rhs(t, z):
            return system.rhs(t, z, lam)

        z1 = rk4_fixed(rhs, 0.0, system.period, z0, steps_per_period)
        out.append(float(np.max(np.abs(z1 - z0))))
    return np.array(out)
