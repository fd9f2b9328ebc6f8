"""Problem data for the coupled system

    x' = A(t) x + c(t) + lambda f1(t, x, y, lambda)
    y' = lambda f2(t, x, y, lambda),   y on the manifold M in R^s,

loaded from JSON scenario documents and compiled to fast callables.

A scenario fixes the dimensions k and s, the period T, the expression
matrices/vectors A, c, f1, f2, optional constraint equations cutting out M,
and optional charts parametrizing M.  Validation is strict: expressions must
reference only the variables their slot allows (A and c only t; constraints
only y1..ys; f1 and f2 only t, x*, y*, lambda), charts must land on M and
have full-rank Jacobians, and every violation reports the JSON path.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import expr as ex
from . import geometry

__all__ = [
    "ScenarioError",
    "Chart",
    "TangencyReport",
    "PerturbedCoupledSystem",
    "load_scenario",
    "builtin_names",
    "builtin_scenario",
    "emit_scenario",
    "check_tangency",
]

BUILTIN_NAMES = ("nicexa", "circle", "dae-pendulum", "delay", "springs")

_NS = dict(ex.CODEGEN_NAMESPACE)
_NS["_np"] = np


class ScenarioError(Exception):
    """Scenario document violates the schema; ``path`` names the bad field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _exec_function(src: str, name: str) -> Callable:
    local: dict[str, object] = {}
    exec(compile(src, f"<{name}>", "exec"), dict(_NS), local)
    return local[name]  # type: ignore[return-value]


def _state_prelude(k: int, s: int, array: str = "z") -> list[str]:
    lines = [f"    _u = {array}.tolist()"]
    names = [f"x{i + 1}" for i in range(k)] + [f"y{j + 1}" for j in range(s)]
    for idx, n in enumerate(names):
        lines.append(f"    {ex.mangle(n)} = _u[{idx}]")
    return lines


def _tuple_src(parts: Sequence[str]) -> str:
    return "(" + ", ".join(parts) + ("," if len(parts) == 1 else "") + ")"


@dataclass(frozen=True)
class Chart:
    """Smooth parametrization of the constraint manifold over a box domain."""

    params: tuple[str, ...]
    maps: tuple[ex.ExprAst, ...]
    domain: tuple[tuple[float, float], ...]

    @property
    def name(self) -> str:
        return self.params[0]

    @property
    def dim(self) -> int:
        return len(self.params)

    @cached_property
    def _point_fn(self) -> Callable:
        lines = [f"def _chart(theta):", "    _u = theta.tolist()"]
        for idx, p in enumerate(self.params):
            lines.append(f"    {ex.mangle(p)} = _u[{idx}]")
        comps = [f"({ex.codegen_expression(m)})" for m in self.maps]
        lines.append(f"    return _np.array({_tuple_src(comps)})")
        return _exec_function("\n".join(lines) + "\n", "_chart")

    def point(self, theta: Sequence[float]) -> np.ndarray:
        return self._point_fn(np.asarray(theta, dtype=float))

    def jacobian(self, theta: Sequence[float]) -> np.ndarray:
        return geometry.fd_jacobian(self._point_fn, np.asarray(theta, dtype=float))

    @cached_property
    def param_periods(self) -> tuple[Optional[float], ...]:
        """2*pi for angle-like parameters the map is periodic in, else None."""
        periods: list[Optional[float]] = []
        mid = np.array([0.5 * (lo + hi) for lo, hi in self.domain])
        for j, (lo, _hi) in enumerate(self.domain):
            per: Optional[float] = None
            probes = [lo + 0.3, lo + 1.1]
            if all(
                np.linalg.norm(self._shifted(mid, j, a) - self._shifted(mid, j, a + 2 * math.pi))
                < 1e-9
                for a in probes
            ):
                per = 2 * math.pi
            periods.append(per)
        return tuple(periods)

    def _shifted(self, theta: np.ndarray, j: int, value: float) -> np.ndarray:
        t = theta.copy()
        t[j] = value
        return self.point(t)


@dataclass
class TangencyReport:
    samples: int
    tol: float
    max_normal: float
    ok: bool
    worst: dict


@dataclass
class PerturbedCoupledSystem:
    """Validated scenario with compiled evaluation routes.

    ``rhs`` evaluates the full (k+s)-dimensional field; ``f2_value`` gives
    the unscaled perturbation on the y factor.  Compiled functions are
    cached; the dataclass itself should be treated as immutable.
    """

    name: str
    k: int
    s: int
    period: float
    a_entries: tuple[tuple[ex.ExprAst, ...], ...]
    c_entries: tuple[ex.ExprAst, ...]
    f1_entries: tuple[ex.ExprAst, ...]
    f2_entries: tuple[ex.ExprAst, ...]
    constraint_entries: tuple[ex.ExprAst, ...] = ()
    charts: tuple[Chart, ...] = ()
    derived_columns: dict = field(default_factory=dict)
    default_region: Optional[dict] = None
    period_literal: Optional[str] = None

    # -- dimensions -----------------------------------------------------

    @property
    def n_constraints(self) -> int:
        return len(self.constraint_entries)

    @property
    def has_constraints(self) -> bool:
        return self.n_constraints > 0

    @property
    def manifold_dim(self) -> int:
        return self.s - self.n_constraints

    @property
    def dim(self) -> int:
        return self.k + self.s

    def state_names(self) -> list[str]:
        return [f"x{i + 1}" for i in range(self.k)] + [f"y{j + 1}" for j in range(self.s)]

    # -- compiled callables ---------------------------------------------

    @cached_property
    def _rhs_fn(self) -> Callable:
        lines = ["def _rhs(t, z, lam):", "    v_t = t", "    v_lambda = lam"]
        lines += _state_prelude(self.k, self.s)
        comps = []
        for i in range(self.k):
            terms = [
                f"({ex.codegen_expression(self.a_entries[i][j])}) * {ex.mangle(f'x{j + 1}')}"
                for j in range(self.k)
            ]
            terms.append(f"({ex.codegen_expression(self.c_entries[i])})")
            terms.append(f"lam * ({ex.codegen_expression(self.f1_entries[i])})")
            comps.append(" + ".join(terms))
        for j in range(self.s):
            comps.append(f"lam * ({ex.codegen_expression(self.f2_entries[j])})")
        lines.append(f"    return _np.array({_tuple_src(comps)})")
        return _exec_function("\n".join(lines) + "\n", "_rhs")

    def rhs(self, t: float, z: np.ndarray, lam: float) -> np.ndarray:
        return self._rhs_fn(t, z, lam)

    @cached_property
    def _f2_fn(self) -> Callable:
        lines = ["def _f2(t, z, lam):", "    v_t = t", "    v_lambda = lam"]
        lines += _state_prelude(self.k, self.s)
        comps = [f"({ex.codegen_expression(f)})" for f in self.f2_entries]
        lines.append(f"    return _np.array({_tuple_src(comps)})")
        return _exec_function("\n".join(lines) + "\n", "_f2")

    def f2_value(self, t: float, z: np.ndarray, lam: float) -> np.ndarray:
        """Unscaled perturbation f2 at full state z = (x, y)."""
        return self._f2_fn(t, z, lam)

    @cached_property
    def _a_fn(self) -> Callable:
        rows = []
        for i in range(self.k):
            rows.append(
                _tuple_src([f"({ex.codegen_expression(a)})" for a in self.a_entries[i]])
            )
        src = (
            "def _amat(t):\n"
            "    v_t = t\n"
            f"    return _np.array({_tuple_src(rows)})\n"
        )
        return _exec_function(src, "_amat")

    def a_matrix(self, t: float) -> np.ndarray:
        return self._a_fn(t)

    @cached_property
    def _c_fn(self) -> Callable:
        comps = [f"({ex.codegen_expression(c)})" for c in self.c_entries]
        src = (
            "def _cvec(t):\n"
            "    v_t = t\n"
            f"    return _np.array({_tuple_src(comps)})\n"
        )
        return _exec_function(src, "_cvec")

    def c_vector(self, t: float) -> np.ndarray:
        return self._c_fn(t)

    @cached_property
    def _constraint_fn(self) -> Optional[Callable]:
        if not self.has_constraints:
            return None
        lines = ["def _g(y):", "    _u = y.tolist()"]
        for j in range(self.s):
            lines.append(f"    {ex.mangle(f'y{j + 1}')} = _u[{j}]")
        comps = [f"({ex.codegen_expression(g)})" for g in self.constraint_entries]
        lines.append(f"    return _np.array({_tuple_src(comps)})")
        return _exec_function("\n".join(lines) + "\n", "_g")

    def constraint_values(self, y: Sequence[float]) -> np.ndarray:
        if not self.has_constraints:
            return np.zeros(0)
        return self._constraint_fn(np.asarray(y, dtype=float))

    def constraint_jacobian(self, y: Sequence[float]) -> np.ndarray:
        if not self.has_constraints:
            return np.zeros((0, self.s))
        return geometry.fd_jacobian(self._constraint_fn, np.asarray(y, dtype=float))

    def project(self, y: Sequence[float], tol: float = 1e-12) -> np.ndarray:
        if not self.has_constraints:
            return np.asarray(y, dtype=float).copy()
        return geometry.project_onto_manifold(
            self._constraint_fn, np.asarray(y, dtype=float), tol=tol,
            gjac=self.constraint_jacobian,
        )

    def tangent_basis_at(self, y: Sequence[float]) -> np.ndarray:
        if not self.has_constraints:
            return np.eye(self.s)
        return geometry.tangent_basis(self.constraint_jacobian(y), self.s)

    def chart_named(self, name: str) -> Chart:
        for ch in self.charts:
            if ch.name == name:
                return ch
        known = ", ".join(ch.name for ch in self.charts) or "none"
        raise ScenarioError(".charts", f"no chart named '{name}' (available: {known})")

    @cached_property
    def _derived_fns(self) -> dict:
        out = {}
        for col, ast in self.derived_columns.items():
            lines = [f"def _col(lam, z):", "    v_lambda = lam"]
            lines += _state_prelude(self.k, self.s)
            lines.append(f"    return ({ex.codegen_expression(ast)})")
            out[col] = _exec_function("\n".join(lines) + "\n", "_col")
        return out

    def derived_values(self, lam: float, z: np.ndarray) -> dict:
        return {col: fn(lam, z) for col, fn in self._derived_fns.items()}


# ---------------------------------------------------------------------------
# Schema validation


def _require(doc: Mapping, key: str, path: str):
    if key not in doc:
        raise ScenarioError(f"{path}.{key}", "missing field")
    return doc[key]


def _parse_entry(text, path: str) -> ex.ExprAst:
    if not isinstance(text, str):
        raise ScenarioError(path, f"expected an expression string, got {type(text).__name__}")
    try:
        return ex.parse_expression(text)
    except ex.ExprSyntaxError as exc:
        raise ScenarioError(path, str(exc)) from exc


def _check_vars(ast: ex.ExprAst, allowed: set[str], path: str) -> None:
    stray = sorted(ast.variables() - allowed)
    if stray:
        raise ScenarioError(
            path,
            f"unknown variable(s) {stray}; allowed: {sorted(allowed) or ['(none)']}",
        )


def _expr_list(raw, n: int, path: str) -> list[ex.ExprAst]:
    if not isinstance(raw, list) or len(raw) != n:
        raise ScenarioError(path, f"expected a list of {n} expression strings")
    return [_parse_entry(e, f"{path}[{i}]") for i, e in enumerate(raw)]


def load_scenario(source) -> PerturbedCoupledSystem:
    """Build a validated system from a JSON document.

    ``source`` may be a dict, a JSON string, or a filesystem path.
    """
    if isinstance(source, Mapping):
        doc = dict(source)
    else:
        if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
            try:
                text = Path(source).read_text(encoding="utf-8")
            except OSError as exc:
                raise ScenarioError(".", f"cannot read scenario file: {exc}") from exc
        else:
            text = source
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError(".", f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioError(".", "scenario document must be a JSON object")

    name = _require(doc, "name", "")
    if not isinstance(name, str) or not name:
        raise ScenarioError(".name", "expected a non-empty string")

    t_raw = _require(doc, "T", "")
    period_literal = None
    if t_raw == "2pi":
        period = 2 * math.pi
        period_literal = "2pi"
    elif isinstance(t_raw, (int, float)) and not isinstance(t_raw, bool):
        period = float(t_raw)
    else:
        raise ScenarioError(".T", "expected a positive number or the string '2pi'")
    if not (period > 0):
        raise ScenarioError(".T", "period must be positive")

    k = _require(doc, "k", "")
    s = _require(doc, "s", "")
    for label, v in (("k", k), ("s", s)):
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise ScenarioError(f".{label}", "expected a positive integer")

    a_raw = _require(doc, "A", "")
    if not isinstance(a_raw, list) or len(a_raw) != k:
        raise ScenarioError(".A", f"expected a {k}x{k} matrix of expression strings")
    a_rows = []
    for i, row in enumerate(a_raw):
        if not isinstance(row, list) or len(row) != k:
            raise ScenarioError(f".A[{i}]", f"expected a row of {k} expression strings")
        a_rows.append([_parse_entry(e, f".A[{i}][{j}]") for j, e in enumerate(row)])

    c_list = _expr_list(_require(doc, "c", ""), k, ".c")
    f1_list = _expr_list(_require(doc, "f1", ""), k, ".f1")
    f2_list = _expr_list(_require(doc, "f2", ""), s, ".f2")

    g_raw = doc.get("constraints", [])
    if not isinstance(g_raw, list):
        raise ScenarioError(".constraints", "expected a list of expression strings")
    g_list = [_parse_entry(e, f".constraints[{i}]") for i, e in enumerate(g_raw)]
    if len(g_list) >= s:
        raise ScenarioError(
            ".constraints", f"need fewer constraints than ambient dimensions ({len(g_list)} >= {s})"
        )

    defaults = doc.get("defaults", {})
    if not isinstance(defaults, dict):
        raise ScenarioError(".defaults", "expected an object of name -> number")
    for dname, dval in defaults.items():
        if not isinstance(dval, (int, float)) or isinstance(dval, bool):
            raise ScenarioError(f".defaults.{dname}", "expected a number")

    def sub(ast: ex.ExprAst) -> ex.ExprAst:
        return ex.substitute_constants(ast, defaults) if defaults else ast

    a_rows = [[sub(a) for a in row] for row in a_rows]
    c_list = [sub(c) for c in c_list]
    f1_list = [sub(f) for f in f1_list]
    f2_list = [sub(f) for f in f2_list]
    g_list = [sub(g) for g in g_list]

    x_names = {f"x{i + 1}" for i in range(k)}
    y_names = {f"y{j + 1}" for j in range(s)}
    state_vars = {"t", "lambda"} | x_names | y_names

    for i, row in enumerate(a_rows):
        for j, a in enumerate(row):
            _check_vars(a, {"t"}, f".A[{i}][{j}]")
    for i, c in enumerate(c_list):
        _check_vars(c, {"t"}, f".c[{i}]")
    for i, f in enumerate(f1_list):
        _check_vars(f, state_vars, f".f1[{i}]")
    for j, f in enumerate(f2_list):
        _check_vars(f, state_vars, f".f2[{j}]")
    for i, g in enumerate(g_list):
        _check_vars(g, y_names, f".constraints[{i}]")

    d = s - len(g_list)
    charts_raw = doc.get("charts", [])
    if not isinstance(charts_raw, list):
        raise ScenarioError(".charts", "expected a list of chart objects")
    charts: list[Chart] = []
    for ci, chraw in enumerate(charts_raw):
        cpath = f".charts[{ci}]"
        if not isinstance(chraw, dict):
            raise ScenarioError(cpath, "expected a chart object")
        params = _require(chraw, "params", cpath)
        if (
            not isinstance(params, list)
            or not params
            or not all(isinstance(p, str) for p in params)
        ):
            raise ScenarioError(f"{cpath}.params", "expected a non-empty list of names")
        if len(params) != d:
            raise ScenarioError(
                f"{cpath}.params",
                f"chart dimension {len(params)} != manifold dimension {d}",
            )
        maps = _expr_list(_require(chraw, "map", cpath), s, f"{cpath}.map")
        maps = [sub(m) for m in maps]
        for mi, m in enumerate(maps):
            _check_vars(m, set(params), f"{cpath}.map[{mi}]")
        dom_raw = _require(chraw, "domain", cpath)
        if not isinstance(dom_raw, list) or len(dom_raw) != len(params):
            raise ScenarioError(f"{cpath}.domain", "expected one [lo, hi] pair per parameter")
        domain = []
        for di, pair in enumerate(dom_raw):
            if (
                not isinstance(pair, list)
                or len(pair) != 2
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in pair)
                or not pair[0] < pair[1]
            ):
                raise ScenarioError(f"{cpath}.domain[{di}]", "expected [lo, hi] with lo < hi")
            domain.append((float(pair[0]), float(pair[1])))
        charts.append(Chart(tuple(params), tuple(maps), tuple(domain)))

    derived_raw = doc.get("derived_columns", {})
    if not isinstance(derived_raw, dict):
        raise ScenarioError(".derived_columns", "expected an object of name -> expression")
    derived = {}
    for col, src in derived_raw.items():
        ast = sub(_parse_entry(src, f".derived_columns.{col}"))
        _check_vars(ast, {"lambda"} | x_names | y_names, f".derived_columns.{col}")
        derived[col] = ast

    region_raw = doc.get("default_region")
    if region_raw is not None and not isinstance(region_raw, dict):
        raise ScenarioError(".default_region", "expected an object")

    known = {
        "name", "T", "k", "s", "A", "c", "f1", "f2", "constraints", "charts",
        "defaults", "derived_columns", "default_region",
    }
    for key in doc:
        if key not in known:
            raise ScenarioError(f".{key}", "unknown field")

    system = PerturbedCoupledSystem(
        name=name,
        k=k,
        s=s,
        period=period,
        a_entries=tuple(tuple(row) for row in a_rows),
        c_entries=tuple(c_list),
        f1_entries=tuple(f1_list),
        f2_entries=tuple(f2_list),
        constraint_entries=tuple(g_list),
        charts=tuple(charts),
        derived_columns=derived,
        default_region=region_raw,
        period_literal=period_literal,
    )
    _validate_geometry(system)
    return system


def _chart_grid(chart: Chart, per_axis: int = 5) -> list[np.ndarray]:
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in chart.domain]
    mesh = np.meshgrid(*axes, indexing="ij")
    return [np.array(p) for p in zip(*(m.ravel() for m in mesh))]


def _validate_geometry(system: PerturbedCoupledSystem) -> None:
    if not system.has_constraints:
        if system.charts:
            raise ScenarioError(".charts", "charts require constraint equations")
        return
    m = system.n_constraints
    sample_points: list[np.ndarray] = []
    for ci, chart in enumerate(system.charts):
        for theta in _chart_grid(chart):
            q = chart.point(theta)
            viol = np.max(np.abs(system.constraint_values(q)))
            if viol > 1e-10:
                raise ScenarioError(
                    f".charts[{ci}]",
                    f"chart image violates the constraints (|g| = {viol:.3e} at {theta.tolist()})",
                )
            sv = np.linalg.svd(chart.jacobian(theta), compute_uv=False)
            if sv[-1] <= 1e-8:
                raise ScenarioError(
                    f".charts[{ci}]",
                    f"chart Jacobian rank-deficient at {theta.tolist()}",
                )
            sample_points.append(q)
    if not sample_points:
        # no charts: sample M by projecting seeded random ambient points
        rng = np.random.default_rng(0)
        for _ in range(8):
            try:
                sample_points.append(system.project(rng.uniform(-1.5, 1.5, size=system.s)))
            except geometry.GeometryError:
                continue
        if not sample_points:
            raise ScenarioError(".constraints", "could not locate any point on the manifold")
    for q in sample_points:
        sv = np.linalg.svd(system.constraint_jacobian(q), compute_uv=False)
        rank = int(np.sum(sv > 1e-8 * max(1.0, float(sv[0]))))
        if rank != m:
            raise ScenarioError(
                ".constraints",
                f"constraint Jacobian has rank {rank} != {m} at a sampled manifold point",
            )


# ---------------------------------------------------------------------------
# Builtins


def builtin_names() -> tuple[str, ...]:
    return BUILTIN_NAMES


def builtin_scenario(name: str) -> PerturbedCoupledSystem:
    if name not in BUILTIN_NAMES:
        raise ScenarioError(
            ".name", f"unknown scenario '{name}' (available: {', '.join(BUILTIN_NAMES)})"
        )
    text = resources.files("periorbit").joinpath(f"scenarios/{name}.json").read_text("utf-8")
    return load_scenario(text)


def scenario_document(name_or_path: str) -> tuple[PerturbedCoupledSystem, str]:
    """Resolve a CLI-style scenario reference to (system, source text)."""
    if name_or_path in BUILTIN_NAMES:
        text = resources.files("periorbit").joinpath(f"scenarios/{name_or_path}.json").read_text("utf-8")
        return load_scenario(text), text
    text = Path(name_or_path).read_text(encoding="utf-8")
    return load_scenario(text), text


def emit_scenario(system: PerturbedCoupledSystem) -> dict:
    """Render back to a loadable document.

    Defaults were substituted at load time, so the emitted expressions are
    self-contained; reloading gives expressions that evaluate identically.
    """
    doc: dict = {
        "name": system.name,
        "T": system.period_literal if system.period_literal else system.period,
        "k": system.k,
        "s": system.s,
        "A": [[str(a) for a in row] for row in system.a_entries],
        "c": [str(c) for c in system.c_entries],
        "f1": [str(f) for f in system.f1_entries],
        "f2": [str(f) for f in system.f2_entries],
    }
    if system.constraint_entries:
        doc["constraints"] = [str(g) for g in system.constraint_entries]
    if system.charts:
        doc["charts"] = [
            {
                "params": list(ch.params),
                "map": [str(m) for m in ch.maps],
                "domain": [[lo, hi] for lo, hi in ch.domain],
            }
            for ch in system.charts
        ]
    if system.derived_columns:
        doc["derived_columns"] = {col: str(a) for col, a in system.derived_columns.items()}
    if system.default_region is not None:
        doc["default_region"] = system.default_region
    return doc


# ---------------------------------------------------------------------------
# Tangency of f2 to the manifold


def check_tangency(
    system: PerturbedCoupledSystem,
    n_samples: int = 100,
    tol: float = 1e-8,
    seed: int = 0,
) -> TangencyReport:
    """Sample |normal component of f2| over (t, x, lambda, q on M).

    The y-field must be tangent to M or flows would drift off it; this is
    the cheap certificate.  Unconstrained systems pass trivially.
    """
    if not system.has_constraints:
        return TangencyReport(samples=n_samples, tol=tol, max_normal=0.0, ok=True, worst={})
    rng = np.random.default_rng(seed)
    worst = {"normal": -1.0}
    max_normal = 0.0
    for _ in range(n_samples):
        t = rng.uniform(0.0, system.period)
        lam = rng.uniform(0.0, 1.0)
        x = rng.uniform(-2.0, 2.0, size=system.k)
        if system.charts:
            chart = system.charts[int(rng.integers(len(system.charts)))]
            theta = np.array([rng.uniform(lo, hi) for lo, hi in chart.domain])
            q = chart.point(theta)
        else:
            q = system.project(rng.uniform(-1.5, 1.5, size=system.s))
        z = np.concatenate([x, q])
        f2 = system.f2_value(t, z, lam)
        J = system.constraint_jacobian(q)
        xi = np.linalg.solve(J @ J.T, J @ f2)
        normal = float(np.linalg.norm(J.T @ xi))
        if normal > max_normal:
            max_normal = normal
            worst = {"normal": normal, "t": t, "lambda": lam, "q": q.tolist()}
    return TangencyReport(
        samples=n_samples, tol=tol, max_normal=max_normal, ok=max_normal < tol, worst=worst
    )
