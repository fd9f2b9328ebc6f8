"""Averaged tangent field on the manifold and its Brouwer degree.

The bifurcation function is the period average of the y-perturbation along
the periodic solution of the linear part,

    w(q) = (1/T) int_0^T f2(t, xhat(t), q, 0) dt,

a tangent field on M.  Its regular zeros seed solution branches, and the
Brouwer degree of w on a region is the quantity the continuation results
hinge on.  The degree is computed as the sign-sum of Jacobian determinants
over the zeros and cross-checked by an independent oracle: endpoint signs in
one dimension, boundary winding number in two.

Uniform nodes over one period make the quadrature spectrally accurate for
smooth periodic integrands; the node count is doubled until the average
stops moving at probe points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import geometry
from .linear import PeriodicTrajectory
from .system import Chart, PerturbedCoupledSystem

__all__ = [
    "AverageError",
    "DegenerateZeroError",
    "BoundaryZeroError",
    "Region",
    "AveragedField",
    "ZeroRecord",
    "DegreeResult",
    "averaged_field",
    "coordinate_field",
    "find_zeros",
    "brouwer_degree",
]

DEGENERACY_MARGIN = 1e-8
DEDUP_DISTANCE = 1e-6


class AverageError(RuntimeError):
    """Quadrature refinement, zero finding, or degree computation failed."""


class DegenerateZeroError(AverageError):
    """A zero with |det Dw| below the regularity margin blocks the degree."""


class BoundaryZeroError(AverageError):
    """A zero sits on (or numerically on) the region boundary."""


# ---------------------------------------------------------------------------
# Regions


@dataclass(frozen=True)
class Region:
    """Open box, either in ambient coordinates or in chart parameters.

    With a chart, bounds live in parameter space; axes the chart map is
    periodic in are treated modulo that period, so bounds like
    (3*pi/2 + 0.2, 3*pi/2 - 0.2 + 2*pi) describe a wrapped arc.
    """

    bounds: tuple[tuple[float, float], ...]
    chart: Optional[Chart] = None

    def __post_init__(self):
        for lo, hi in self.bounds:
            if not lo < hi:
                raise ValueError(f"region bounds need lo < hi, got ({lo}, {hi})")
        if self.chart is not None and len(self.bounds) != self.chart.dim:
            raise ValueError("one bounds pair per chart parameter required")

    @property
    def dim(self) -> int:
        return len(self.bounds)

    def _periods(self) -> tuple[Optional[float], ...]:
        if self.chart is None:
            return (None,) * self.dim
        return self.chart.param_periods

    def canonical(self, coords: Sequence[float]) -> np.ndarray:
        """Shift periodic axes into (or nearest to) the bounds window."""
        c = np.asarray(coords, dtype=float).copy()
        for j, per in enumerate(self._periods()):
            if per is None:
                continue
            lo, hi = self.bounds[j]
            while c[j] < lo and c[j] + per <= hi + 0.5 * per:
                c[j] += per
            while c[j] > hi and c[j] - per >= lo - 0.5 * per:
                c[j] -= per
        return c

    def contains(self, coords: Sequence[float]) -> bool:
        c = self.canonical(coords)
        return all(lo < c[j] < hi for j, (lo, hi) in enumerate(self.bounds))

    def boundary_margin(self, coords: Sequence[float]) -> float:
        """Positive inside, negative outside; distance to the nearest face."""
        c = self.canonical(coords)
        return min(
            min(c[j] - lo, hi - c[j]) for j, (lo, hi) in enumerate(self.bounds)
        )

    def seed_grid(self, per_axis: int) -> list[np.ndarray]:
        if per_axis < 2:
            raise ValueError("need at least 2 seed points per axis")
        axes = [np.linspace(lo, hi, per_axis + 2)[1:-1] for lo, hi in self.bounds]
        mesh = np.meshgrid(*axes, indexing="ij")
        return [np.array(p) for p in zip(*(m.ravel() for m in mesh))]

    def point_of(self, coords: Sequence[float]) -> np.ndarray:
        """Ambient location of region coordinates."""
        c = np.asarray(coords, dtype=float)
        return self.chart.point(c) if self.chart is not None else c.copy()


# ---------------------------------------------------------------------------
# The averaged field


class AveragedField:
    """Callable w(q) built on a frozen quadrature grid.

    ``nodes`` is the grid size the refinement settled on; the per-node
    states (t_i, xhat(t_i)) are precomputed, so an evaluation costs one
    compiled f2 call per node.
    """

    def __init__(self, system: PerturbedCoupledSystem, xhat: PeriodicTrajectory, nodes: int,
                 ts: np.ndarray, xs: np.ndarray):
        self.system = system
        self.xhat = xhat
        self.nodes = nodes
        self._ts = ts
        self._xs = xs
        self._z = np.empty(system.k + system.s)

    def __call__(self, q: Sequence[float]) -> np.ndarray:
        z = self._z
        k = self.system.k
        z[k:] = q
        f2 = self.system.f2_value
        acc = np.zeros(self.system.s)
        for t, x in zip(self._ts, self._xs):
            z[:k] = x
            acc += f2(t, z, 0.0)
        return acc / self.nodes


def _grid_average(system, xhat, n):
    T = system.period
    ts = np.arange(n) * (T / n)
    xs = np.array([xhat(t) for t in ts])
    return AveragedField(system, xhat, n, ts, xs)


def _probe_points(system: PerturbedCoupledSystem) -> list[np.ndarray]:
    if system.charts:
        chart = system.charts[0]
        out = []
        for frac in (0.25, 0.65):
            theta = np.array([lo + frac * (hi - lo) for lo, hi in chart.domain])
            out.append(chart.point(theta))
        return out
    s = system.s
    return [np.zeros(s), 0.5 * np.ones(s), -0.75 * np.ones(s)]


def averaged_field(
    system: PerturbedCoupledSystem,
    xhat: PeriodicTrajectory,
    nodes: int = 64,
) -> AveragedField:
    """Build w with the node count refined until probes move < 1e-10."""
    n = max(16, nodes)
    probes = _probe_points(system)
    current = _grid_average(system, xhat, n)
    while n <= 8192:
        finer = _grid_average(system, xhat, 2 * n)
        gap = max(
            float(np.max(np.abs(current(p) - finer(p)))) for p in probes
        )
        if gap < 1e-10:
            return finer
        current = finer
        n *= 2
    raise AverageError("quadrature refinement did not settle below 1e-10")


def coordinate_field(
    w: Callable[[np.ndarray], np.ndarray], region: Region
) -> Callable[[np.ndarray], np.ndarray]:
    """w expressed in the region's coordinates.

    For a chart region this is the coordinate velocity solving
    Dmap(theta) thetadot = w(map(theta)) in the least-squares sense, which
    is exact for tangent fields.
    """
    if region.chart is None:
        return lambda c: np.asarray(w(np.asarray(c, dtype=float)), dtype=float)
    chart = region.chart

    def field(theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        q = chart.point(theta)
        J = chart.jacobian(theta)
        return np.linalg.solve(J.T @ J, J.T @ np.asarray(w(q), dtype=float))

    return field


# ---------------------------------------------------------------------------
# Zeros


@dataclass(frozen=True)
class ZeroRecord:
    """An isolated zero of w inside a region.

    ``coords`` are region coordinates, ``location`` the ambient point (on M
    to projection accuracy for chart regions).  ``sign`` is the sign of
    det(Dw) in region coordinates; ``margin`` its magnitude, with zeros at
    or below the degeneracy threshold flagged instead of signed.
    """

    coords: tuple[float, ...]
    location: tuple[float, ...]
    residual: float
    jacobian: tuple[tuple[float, ...], ...]
    sign: int
    margin: float
    degenerate: bool


def find_zeros(
    w: Callable[[np.ndarray], np.ndarray],
    region: Region,
    grid: int = 8,
    tol: float = 1e-10,
) -> list[ZeroRecord]:
    """Newton from a seed grid; deduplicated, classified, sorted.

    Zeros closer than ``tol`` to the region boundary are a hard error
    (the degree over the region would be ill-defined).
    """
    field = coordinate_field(w, region)
    dim = region.dim
    found: list[np.ndarray] = []
    for seed in region.seed_grid(grid):
        theta = seed.copy()
        converged = False
        # Keep polishing after |w| < tol until the Newton step itself
        # collapses: a residual tolerance alone places a non-simple zero
        # only to tol^(1/multiplicity), scattering one degenerate zero
        # into a cluster of seemingly regular ones.
        for _ in range(80):
            try:
                r = field(theta)
            except (np.linalg.LinAlgError, FloatingPointError, ValueError):
                break
            if not np.all(np.isfinite(r)):
                break
            if np.linalg.norm(r) < tol:
                converged = True
            J = geometry.fd_jacobian(field, theta)
            try:
                step = np.linalg.solve(J, -r)
            except np.linalg.LinAlgError:
                break
            if converged and np.linalg.norm(step) < 1e-12 * max(
                1.0, float(np.linalg.norm(theta))
            ):
                break
            theta = theta + step
            # far outside the (possibly wrapped) region: abandon the seed
            if region.boundary_margin(theta) < -10.0 * _region_width(region):
                break
        if not converged:
            continue
        theta = region.canonical(theta)
        if not region.contains(theta):
            margin = region.boundary_margin(theta)
            if -tol <= margin <= 0:
                raise BoundaryZeroError(
                    f"zero at {theta.tolist()} lies on the region boundary"
                )
            continue
        if region.boundary_margin(theta) < tol:
            raise BoundaryZeroError(
                f"zero at {theta.tolist()} is within {tol:g} of the region boundary"
            )
        if not any(np.linalg.norm(theta - prev) < DEDUP_DISTANCE for prev in found):
            found.append(theta)

    found.sort(key=lambda c: tuple(c))
    records = []
    for theta in found:
        J = geometry.fd_jacobian(field, theta)
        det = float(np.linalg.det(J))
        margin = abs(det)
        degenerate = margin <= DEGENERACY_MARGIN
        records.append(
            ZeroRecord(
                coords=tuple(float(v) for v in theta),
                location=tuple(float(v) for v in region.point_of(theta)),
                residual=float(np.linalg.norm(field(theta))),
                jacobian=tuple(tuple(float(v) for v in row) for row in J),
                sign=0 if degenerate else (1 if det > 0 else -1),
                margin=margin,
                degenerate=degenerate,
            )
        )
    return records


def _region_width(region: Region) -> float:
    return max(hi - lo for lo, hi in region.bounds)


# ---------------------------------------------------------------------------
# Degree


@dataclass(frozen=True)
class DegreeResult:
    value: int
    zeros: tuple[ZeroRecord, ...]
    region: Region
    oracle_method: Optional[str]
    oracle_value: Optional[int]


def brouwer_degree(
    w: Callable[[np.ndarray], np.ndarray],
    region: Region,
    tol: float = 1e-10,
    grid: int = 8,
) -> DegreeResult:
    """Sign-sum degree with an independent oracle where one exists.

    One-dimensional regions use endpoint signs, two-dimensional Euclidean
    boxes the boundary winding number.  An oracle mismatch is an error: it
    means the zero enumeration missed something.
    """
    zeros = find_zeros(w, region, grid=grid, tol=tol)
    bad = [z for z in zeros if z.degenerate]
    if bad:
        raise DegenerateZeroError(
            f"degenerate zero(s) at {[z.coords for z in bad]}: degree undefined"
        )
    value = int(sum(z.sign for z in zeros))

    field = coordinate_field(w, region)
    method = None
    oracle = None
    if region.dim == 1:
        method = "endpoint-signs"
        oracle = _endpoint_degree(field, region.bounds[0])
    elif region.dim == 2 and region.chart is None:
        method = "boundary-winding"
        oracle = _winding_degree(field, region.bounds)
    if oracle is not None and oracle != value:
        raise AverageError(
            f"degree disagreement: sign-sum {value} vs {method} oracle {oracle}"
        )
    return DegreeResult(
        value=value, zeros=tuple(zeros), region=region,
        oracle_method=method, oracle_value=oracle,
    )


def _endpoint_degree(field, bounds: tuple[float, float]) -> int:
    lo, hi = bounds
    wa = float(field(np.array([lo]))[0])
    wb = float(field(np.array([hi]))[0])
    if abs(wa) < 1e-12 or abs(wb) < 1e-12:
        raise BoundaryZeroError("w vanishes at a region endpoint")
    return (int(math.copysign(1, wb)) - int(math.copysign(1, wa))) // 2


def _winding_degree(field, bounds) -> int:
    (x0, x1), (y0, y1) = bounds
    n = 64
    previous = None
    while n <= 4096:
        corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)]
        pts: list[np.ndarray] = []
        for (ax, ay), (bx, by) in zip(corners[:-1], corners[1:]):
            for frac in np.linspace(0.0, 1.0, n, endpoint=False):
                pts.append(np.array([ax + frac * (bx - ax), ay + frac * (by - ay)]))
        vals = [np.asarray(field(p), dtype=float) for p in pts]
        total = 0.0
        for a, b in zip(vals, vals[1:] + vals[:1]):
            na, nb = np.linalg.norm(a), np.linalg.norm(b)
            if na < 1e-12 or nb < 1e-12:
                raise BoundaryZeroError("w vanishes on the region boundary")
            cross = a[0] * b[1] - a[1] * b[0]
            dot = a[0] * b[0] + a[1] * b[1]
            total += math.atan2(cross, dot)
        winding = total / (2 * math.pi)
        rounded = int(round(winding))
        if abs(winding - rounded) < 0.01 and previous == rounded:
            return rounded
        previous = rounded
        n *= 2
    raise AverageError("boundary winding number did not stabilize")
