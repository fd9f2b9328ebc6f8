"""Command-line front end.

Subcommands mirror the library layers: ``scenario`` (registry), ``linear``
(monodromy and the periodic solution), ``average``/``degree`` (the averaged
field), ``index`` (fixed-point index identity), ``branch``/``triples``
(continuation), ``plot`` (SVG figures) and ``verify`` (the invariant
battery).

Exit codes: 0 on success, 1 on errors, 2 on hypothesis failures such as a
T-resonant linear part or a zero region degree.  All file output is
written atomically (temp file, then rename) with an accompanying
``<name>.manifest.json`` describing the run; CSV numbers carry 12
significant digits with LF line endings.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import re
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from . import average as avg
from . import branch as br
from . import geometry, linear, poincare
from . import system as sysmod
from .expr import ExprError

__all__ = ["main", "run_command", "CliError", "HypothesisFailure"]


class CliError(Exception):
    """Bad usage or a runtime error; exit code 1."""


class HypothesisFailure(Exception):
    """A theorem hypothesis failed (resonance, zero degree); exit code 2."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage errors; 2 is reserved for
    # hypothesis failures here, so route usage problems through CliError
    def error(self, message: str):
        raise CliError(f"{self.prog}: {message}")

    # let "--V -2:2" parse: a token like -2:2 or -2:2,-1:1 is a box value,
    # not an option, but argparse's stock negative-number matcher rejects
    # anything with a colon or comma in it
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._negative_number_matcher = re.compile(r"^-\d[\d.:,eE+-]*$")


# ---------------------------------------------------------------------------
# Output helpers


def _format_value(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.12g" % float(v)
    return str(v)


def format_csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_format_value(v) for v in row))
    return "\n".join(lines) + "\n"


def write_atomic(path: str | Path, text: str) -> None:
    """Write via a temporary file and rename; no partial files on failure."""
    path = Path(path)
    if path.parent and not path.parent.exists():
        raise CliError(f"output directory does not exist: {path.parent}")
    fd, tmp = tempfile.mkstemp(dir=str(path.parent or "."), prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _write_manifest(out_path: Path, command: str, scenario_ref: Optional[str],
                    scenario_text: Optional[str], options: dict) -> None:
    # "created" records when; everything else determines the output bit-for-bit
    doc = {
        "command": command,
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "options": options,
        "format": {"encoding": "UTF-8", "floats": "%.12g", "newline": "LF"},
        "version": __version__,
    }
    if scenario_ref is not None:
        doc["scenario"] = scenario_ref
    if scenario_text is not None:
        doc["scenario_sha256"] = hashlib.sha256(scenario_text.encode("utf-8")).hexdigest()
    write_atomic(
        Path(str(out_path) + ".manifest.json"),
        json.dumps(doc, indent=2, sort_keys=True) + "\n",
    )


# ---------------------------------------------------------------------------
# Shared argument handling


def _load(ref: str) -> tuple[sysmod.PerturbedCoupledSystem, str]:
    return sysmod.scenario_document(ref)


def _parse_box(text: str, label: str) -> list[tuple[float, float]]:
    out = []
    for piece in text.split(","):
        parts = piece.split(":")
        if len(parts) != 2:
            raise CliError(f"{label}: expected lo:hi[,lo:hi...], got {text!r}")
        try:
            lo, hi = float(parts[0]), float(parts[1])
        except ValueError as exc:
            raise CliError(f"{label}: {exc}") from exc
        if not lo < hi:
            raise CliError(f"{label}: need lo < hi in {piece!r}")
        out.append((lo, hi))
    return out


def _parse_region(system: sysmod.PerturbedCoupledSystem, text: str) -> avg.Region:
    """``chart:<name>:lo:hi[,lo:hi...]`` or a plain ambient box ``lo:hi,...``."""
    if text.startswith("chart:"):
        rest = text[len("chart:"):]
        name, sep, bounds_text = rest.partition(":")
        if not sep:
            raise CliError(f"--region: expected chart:<name>:lo:hi..., got {text!r}")
        chart = system.chart_named(name)
        bounds = _parse_box(bounds_text, "--region")
        if len(bounds) != chart.dim:
            raise CliError(
                f"--region: chart '{name}' needs {chart.dim} bounds pair(s)"
            )
        return avg.Region(tuple(bounds), chart)
    bounds = _parse_box(text, "--region")
    if system.has_constraints:
        raise CliError("--region: constrained scenarios need chart regions (chart:...)")
    if len(bounds) != system.s:
        raise CliError(f"--region: expected {system.s} bounds pair(s)")
    return avg.Region(tuple(bounds), None)


def _default_region(system: sysmod.PerturbedCoupledSystem) -> avg.Region:
    doc = system.default_region
    if doc is None:
        raise CliError(
            f"scenario '{system.name}' has no default region; pass --region"
        )
    bounds = tuple((float(lo), float(hi)) for lo, hi in doc["bounds"])
    chart = system.chart_named(doc["chart"]) if "chart" in doc else None
    return avg.Region(bounds, chart)


def _region_for(system, text: Optional[str]) -> avg.Region:
    return _parse_region(system, text) if text else _default_region(system)


def _region_column_names(system, region: avg.Region) -> list[str]:
    if region.chart is not None:
        return list(region.chart.params)
    return [f"q{j + 1}" for j in range(system.s)]


def _check_resonance(system, tol: float) -> tuple[linear.Monodromy, float]:
    monodromy = linear.fundamental_matrix(system, tol=tol)
    gap = linear.check_nonresonance(monodromy)
    if gap <= 1e-8:
        raise HypothesisFailure(
            f"linear part of '{system.name}' is T-resonant: "
            f"|det(I - Phi(T))| = {gap:.3e}"
        )
    return monodromy, gap


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_scenario(args) -> int:
    if args.action == "list":
        for name in sysmod.builtin_names():
            print(name)
        return 0
    system, _ = _load(args.scenario)
    if args.json:
        print(json.dumps(sysmod.emit_scenario(system), indent=2, sort_keys=True))
        return 0
    print(f"name: {system.name}")
    print(f"period: {system.period:.12g}")
    print(f"dimensions: k = {system.k}, s = {system.s} "
          f"(manifold dimension {system.manifold_dim})")
    print(f"A: {[[str(a) for a in row] for row in system.a_entries]}")
    print(f"c: {[str(c) for c in system.c_entries]}")
    print(f"f1: {[str(f) for f in system.f1_entries]}")
    print(f"f2: {[str(f) for f in system.f2_entries]}")
    if system.constraint_entries:
        print(f"constraints: {[str(g) for g in system.constraint_entries]}")
    for ch in system.charts:
        print(f"chart '{ch.name}': params {list(ch.params)}, "
              f"map {[str(m) for m in ch.maps]}, domain {list(ch.domain)}")
    return 0


def _cmd_linear(args) -> int:
    system, text = _load(args.scenario)
    monodromy, gap = _check_resonance(system, args.tol)
    xhat = linear.periodic_solution_linear(system, monodromy, tol=args.tol)
    ts = np.linspace(0.0, system.period, args.samples + 1)
    header = ["t"] + [f"x{i + 1}" for i in range(system.k)]
    rows = [[t] + list(xhat(t)) for t in ts]
    out = Path(args.out)
    write_atomic(out, format_csv(header, rows))
    _write_manifest(out, "linear", args.scenario, text,
                    {"samples": args.samples, "tol": args.tol})
    print(f"periodic solution of '{system.name}': residual {xhat.residual:.3e}, "
          f"|det(I - Phi(T))| = {gap:.6g}")
    print(f"wrote {out}")
    return 0


def _cmd_average(args) -> int:
    system, text = _load(args.scenario)
    monodromy, _ = _check_resonance(system, args.tol)
    xhat = linear.periodic_solution_linear(system, monodromy, tol=args.tol)
    w = avg.averaged_field(system, xhat)
    region = _region_for(system, args.region)
    field = avg.coordinate_field(w, region)
    axes = [np.linspace(lo, hi, args.grid) for lo, hi in region.bounds]
    mesh = np.meshgrid(*axes, indexing="ij")
    coords = list(zip(*(m.ravel() for m in mesh)))
    names = _region_column_names(system, region)
    header = names + [f"w_{n}" for n in names] if region.chart is not None else (
        names + [f"w{j + 1}" for j in range(system.s)]
    )
    rows = []
    for c in coords:
        vec = np.array(c)
        rows.append(list(vec) + list(field(vec)))
    out = Path(args.out)
    write_atomic(out, format_csv(header, rows))
    _write_manifest(out, "average", args.scenario, text,
                    {"grid": args.grid, "region": args.region, "tol": args.tol,
                     "nodes": w.nodes})
    print(f"averaged field of '{system.name}' on {w.nodes} quadrature nodes; "
          f"wrote {out}")
    return 0


def _cmd_degree(args) -> int:
    system, _ = _load(args.scenario)
    monodromy, _ = _check_resonance(system, args.tol)
    xhat = linear.periodic_solution_linear(system, monodromy, tol=args.tol)
    w = avg.averaged_field(system, xhat)
    region = _region_for(system, args.region)
    result = avg.brouwer_degree(w, region, tol=args.tol, grid=args.grid)
    if args.json:
        print(json.dumps({
            "degree": result.value,
            "oracle_method": result.oracle_method,
            "oracle_value": result.oracle_value,
            "zeros": [
                {"coords": list(z.coords), "location": list(z.location),
                 "sign": z.sign, "margin": z.margin}
                for z in result.zeros
            ],
        }, indent=2))
    else:
        print(f"degree = {result.value}")
        if result.oracle_method:
            print(f"oracle ({result.oracle_method}) = {result.oracle_value}")
        for z in result.zeros:
            print(f"zero at {list(z.coords)}  sign {z.sign:+d}  "
                  f"margin {z.margin:.6g}  residual {z.residual:.3e}")
    if result.value == 0:
        raise HypothesisFailure("region degree is zero; branch guarantee void")
    return 0


def _cmd_index(args) -> int:
    system, _ = _load(args.scenario)
    try:
        lambdas = [float(v) for v in args.lambdas.split(",") if v]
    except ValueError as exc:
        raise CliError(f"--lambda: {exc}") from exc
    if not lambdas:
        raise CliError("--lambda: need at least one value")
    u_bounds = _parse_box(args.u, "--U")
    if len(u_bounds) != system.k:
        raise CliError(f"--U: expected {system.k} bounds pair(s)")
    v_region = _region_for(system, args.v)
    report = poincare.index_formula_check(
        system, u_bounds, v_region, lambdas, grid=args.grid, tol=args.tol
    )
    if args.json:
        print(json.dumps({
            "xhat0": list(report.xhat0),
            "indicator": report.indicator,
            "degree": report.degree,
            "rows": [
                {"lambda": r.lam, "index_sum": r.index_sum, "lhs_abs": r.lhs_abs,
                 "rhs": r.rhs, "match": r.match,
                 "fixed_points": [list(fp.point) for fp in r.fixed_points]}
                for r in report.rows
            ],
        }, indent=2))
    else:
        print(f"xhat(0) = {list(report.xhat0)}  indicator 1_U = {report.indicator}")
        print(f"deg(w, V) = {report.degree}  -> expected |index sum| = "
              f"{report.indicator * abs(report.degree)}")
        for r in report.rows:
            status = "ok" if r.match else "MISMATCH"
            print(f"lambda = {r.lam:g}: {len(r.fixed_points)} fixed point(s), "
                  f"index sum {r.index_sum:+d}, |sum| {r.lhs_abs} vs {r.rhs}  [{status}]")
    if not report.all_match:
        raise CliError("index identity violated")
    return 0


def _branch_header(system) -> list[str]:
    return (
        ["seed_id", "point_index", "lambda"]
        + [f"p{i + 1}" for i in range(system.k)]
        + [f"q{j + 1}" for j in range(system.s)]
        + ["residual", "index"]
        + list(system.derived_columns)
    )


def _cmd_branch(args) -> int:
    system, text = _load(args.scenario)
    region = _region_for(system, args.region)
    try:
        seeds = br.seed_branches(system, region, tol=args.tol)
    except linear.ResonanceError as exc:
        raise HypothesisFailure(str(exc)) from exc
    if not seeds:
        raise CliError("no regular zeros of the averaged field in the region; "
                       "nothing to continue")
    options = br.ContinuationOptions(
        lambda_max=args.lambda_max,
        step0=args.step0,
        step_min=args.step_min,
        step_max=args.step_max,
        max_points=args.max_points,
        tol=args.tol,
    )
    rows = []
    degree_void = any(seed.degree_warning for seed in seeds)
    for si, seed in enumerate(seeds):
        result = br.continue_branch(system, seed, options)
        for warning in result.warnings:
            print(f"seed {si}: warning: {warning}", file=sys.stderr)
        print(f"seed {si}: {len(result.points)} point(s), termination "
              f"{result.termination}, arclength {result.arclength:.6g}")
        for pi, rec in enumerate(result.points):
            row = [si, pi, rec.lam] + list(rec.p) + list(rec.q) + [rec.residual, rec.index]
            row += [system.derived_values(rec.lam, rec.point)[col]
                    for col in system.derived_columns]
            rows.append(row)
    out = Path(args.out)
    write_atomic(out, format_csv(_branch_header(system), rows))
    _write_manifest(out, "branch", args.scenario, text, {
        "region": args.region,
        "lambda_max": args.lambda_max,
        "step0": args.step0,
        "step_min": args.step_min,
        "step_max": args.step_max,
        "max_points": args.max_points,
        "tol": args.tol,
    })
    print(f"wrote {out}")
    if degree_void:
        raise HypothesisFailure("region degree is zero; branch guarantee void "
                                "(output written)")
    return 0


def _cmd_triples(args) -> int:
    in_path = Path(args.infile)
    scenario_ref = args.scenario
    if scenario_ref is None:
        manifest_path = Path(str(in_path) + ".manifest.json")
        if not manifest_path.exists():
            raise CliError(f"no manifest next to {in_path}; pass --scenario")
        with open(manifest_path, encoding="utf-8") as fh:
            scenario_ref = json.load(fh).get("scenario")
        if not scenario_ref:
            raise CliError("manifest does not name a scenario; pass --scenario")
    system, text = _load(scenario_ref)
    try:
        with open(in_path, encoding="utf-8", newline="") as fh:
            table = list(csv.DictReader(fh))
    except OSError as exc:
        raise CliError(f"cannot read {in_path}: {exc}") from exc
    if not table:
        raise CliError(f"{in_path} has no rows")
    header = ["seed_id", "point_index", "lambda", "t"] + system.state_names()
    rows = []
    for row in table:
        if int(row["point_index"]) % args.stride != 0:
            continue
        lam = float(row["lambda"])
        p = np.array([float(row[f"p{i + 1}"]) for i in range(system.k)])
        q = np.array([float(row[f"q{j + 1}"]) for j in range(system.s)])
        fr = poincare.flow(system, lam, p, q, tol=args.tol, dense=True)
        for t in np.linspace(0.0, system.period, args.samples + 1):
            state = fr.dense(t)
            rows.append([int(row["seed_id"]), int(row["point_index"]), lam, t]
                        + list(state))
    out = Path(args.out)
    write_atomic(out, format_csv(header, rows))
    _write_manifest(out, "triples", scenario_ref, text,
                    {"in": str(in_path), "stride": args.stride,
                     "samples": args.samples, "tol": args.tol})
    print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# Plotting (hand-rolled SVG polylines; no drawing dependencies)

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if lo == hi:
        lo, hi = lo - 1.0, hi + 1.0
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def render_svg(series: Sequence[tuple[str, Sequence[float], Sequence[float]]],
               xlabel: str, ylabel: str,
               width: int = 640, height: int = 480) -> str:
    left, right, top, bottom = 72, 16, 16, 52
    xs_all = [x for _, xs, _ in series for x in xs]
    ys_all = [y for _, _, ys in series for y in ys]
    if not xs_all:
        raise CliError("nothing to plot: no data points")
    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(ys_all), max(ys_all)
    if x_lo == x_hi:
        x_lo, x_hi = x_lo - 1.0, x_hi + 1.0
    if y_lo == y_hi:
        y_lo, y_hi = y_lo - 1.0, y_hi + 1.0
    pw = width - left - right
    ph = height - top - bottom

    def sx(x: float) -> float:
        return left + (x - x_lo) / (x_hi - x_lo) * pw

    def sy(y: float) -> float:
        return top + (y_hi - y) / (y_hi - y_lo) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" '
        f'stroke="black" stroke-width="1"/>',
    ]
    for tx in _ticks(x_lo, x_hi):
        px = sx(tx)
        parts.append(f'<line x1="{px:.2f}" y1="{top + ph}" x2="{px:.2f}" '
                     f'y2="{top + ph + 5}" stroke="black" stroke-width="1"/>')
        parts.append(f'<text x="{px:.2f}" y="{top + ph + 18}" font-size="11" '
                     f'text-anchor="middle">{tx:.4g}</text>')
    for ty in _ticks(y_lo, y_hi):
        py = sy(ty)
        parts.append(f'<line x1="{left - 5}" y1="{py:.2f}" x2="{left}" '
                     f'y2="{py:.2f}" stroke="black" stroke-width="1"/>')
        parts.append(f'<text x="{left - 8}" y="{py + 4:.2f}" font-size="11" '
                     f'text-anchor="end">{ty:.4g}</text>')
    parts.append(f'<text x="{left + pw / 2:.2f}" y="{height - 12}" font-size="13" '
                 f'text-anchor="middle">{xlabel}</text>')
    parts.append(f'<text x="16" y="{top + ph / 2:.2f}" font-size="13" '
                 f'text-anchor="middle" '
                 f'transform="rotate(-90 16 {top + ph / 2:.2f})">{ylabel}</text>')
    for i, (label, xs, ys) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        if len(xs) == 1:
            parts.append(f'<circle cx="{sx(xs[0]):.2f}" cy="{sy(ys[0]):.2f}" r="3.5" '
                         f'fill="{color}"><title>{label}</title></circle>')
        else:
            pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
            parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                         f'stroke-width="1.5"><title>{label}</title></polyline>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _cmd_plot(args) -> int:
    in_path = Path(args.infile)
    try:
        with open(in_path, encoding="utf-8", newline="") as fh:
            table = list(csv.DictReader(fh))
    except OSError as exc:
        raise CliError(f"cannot read {in_path}: {exc}") from exc
    if not table:
        raise CliError(f"{in_path} has no rows")
    for col in (args.x, args.y):
        if col not in table[0]:
            raise CliError(f"column '{col}' not in {in_path} "
                           f"(available: {', '.join(table[0])})")
    group_col = args.group if args.group else (
        "seed_id" if "seed_id" in table[0] else None
    )
    groups: dict[str, tuple[list[float], list[float]]] = {}
    order: list[str] = []
    for row in table:
        key = row[group_col] if group_col else ""
        if key not in groups:
            groups[key] = ([], [])
            order.append(key)
        groups[key][0].append(float(row[args.x]))
        groups[key][1].append(float(row[args.y]))
    series = [(key, groups[key][0], groups[key][1]) for key in order]
    out = Path(args.out)
    write_atomic(out, render_svg(series, args.x, args.y))
    _write_manifest(out, "plot", None, None,
                    {"in": str(in_path), "x": args.x, "y": args.y,
                     "group": group_col})
    print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# Verify


def _verify_one(name_or_path: str, lines: list[str]) -> bool:
    """Run the invariant battery on one scenario; append report lines."""
    ok = True

    def report(check: str, status: str, detail: str = ""):
        lines.append(f"[{system.name}] {check}: {status}"
                     + (f" ({detail})" if detail else ""))

    system, _ = _load(name_or_path)

    reloaded = sysmod.load_scenario(sysmod.emit_scenario(system))
    probe = np.linspace(0.1, 0.9, 4)
    same = all(
        np.allclose(
            system.rhs(t, z, lam), reloaded.rhs(t, z, lam), rtol=0, atol=0
        )
        for t in probe
        for lam in (0.0, 0.3)
        for z in [np.linspace(-0.5, 0.5, system.dim)]
    )
    report("emit/reload round trip", "pass" if same else "FAIL")
    ok &= same

    if system.has_constraints:
        tang = sysmod.check_tangency(system, n_samples=100, tol=1e-6)
        report("f2 tangency", "pass" if tang.ok else "FAIL",
               f"max normal component {tang.max_normal:.3e} over {tang.samples} samples")
        ok &= tang.ok
    else:
        report("f2 tangency", "skip", "no constraints")

    try:
        monodromy = linear.fundamental_matrix(system, tol=1e-10)
        report("fundamental matrix", "pass",
               f"det Phi(T) = {float(np.linalg.det(monodromy.phi_t)):.6g}, "
               f"Liouville check passed")
    except linear.LinearError as exc:
        report("fundamental matrix", "FAIL", str(exc))
        return False

    gap = linear.check_nonresonance(monodromy)
    resonant = gap <= 1e-8
    report("non-T-resonance", "pass" if not resonant else "skip",
           f"|det(I - Phi(T))| = {gap:.6g}"
           + ("; downstream checks skipped" if resonant else ""))
    if resonant:
        _verify_jacobian(system, report)
        return ok

    xhat = linear.periodic_solution_linear(system, monodromy, tol=1e-10)
    report("periodic solution", "pass",
           f"residual {xhat.residual:.3e}, variation-of-constants check passed")

    w = avg.averaged_field(system, xhat)
    if system.has_constraints and system.charts:
        chart = system.charts[0]
        worst = 0.0
        for frac in np.linspace(0.05, 0.95, 20):
            theta = np.array([lo + frac * (hi - lo) for lo, hi in chart.domain])
            q = chart.point(theta)
            J = system.constraint_jacobian(q)
            wv = w(q)
            xi = np.linalg.solve(J @ J.T, J @ wv)
            worst = max(worst, float(np.linalg.norm(J.T @ xi)))
        w_ok = worst < 1e-8
        report("averaged field tangency", "pass" if w_ok else "FAIL",
               f"max normal component {worst:.3e}")
        ok &= w_ok

    try:
        region = _default_region(system)
        result = avg.brouwer_degree(w, region)
        detail = f"degree {result.value} over {len(result.zeros)} zero(s)"
        if result.oracle_method:
            detail += f", {result.oracle_method} oracle agrees"
        report("degree", "pass", detail)
        zeros = [z for z in result.zeros if not z.degenerate]
    except (avg.AverageError, CliError) as exc:
        report("degree", "FAIL", str(exc))
        ok = False
        zeros = []

    if zeros:
        q_star = np.array(zeros[0].location)
        phi_t, offset = linear.translation_operator(system)
        p_star = np.linalg.solve(np.eye(system.k) - phi_t, offset)
        fr = poincare.flow(system, 0.0, p_star, q_star, tol=1e-11, dense=False)
        res0 = float(np.max(np.abs(fr.state - np.concatenate([p_star, q_star]))))
        seed_ok = res0 < 1e-9
        report("trivial point closure", "pass" if seed_ok else "FAIL",
               f"lambda = 0 Poincare residual {res0:.3e}")
        ok &= seed_ok

    ok &= _verify_jacobian(system, report)
    return ok


def _verify_jacobian(system, report) -> bool:
    if system.charts:
        chart = system.charts[0]
        theta = np.array([lo + 0.37 * (hi - lo) for lo, hi in chart.domain])
        q = chart.point(theta)
    else:
        q = np.linspace(-0.4, 0.4, system.s)
    p = np.linspace(0.2, -0.3, system.k)
    try:
        poincare.poincare_jacobian(system, 0.05, p, q, tol=1e-10, check=True)
        report("Poincare Jacobian cross-check", "pass",
               "variational vs finite differences at lambda = 0.05")
        return True
    except poincare.PoincareError as exc:
        report("Poincare Jacobian cross-check", "FAIL", str(exc))
        return False


def _cmd_verify(args) -> int:
    targets = list(sysmod.builtin_names()) if args.all else [args.scenario]
    if targets == [None]:
        raise CliError("pass --scenario <name|file> or --all")
    lines: list[str] = []
    all_ok = True
    for ref in targets:
        all_ok &= _verify_one(ref, lines)
    for line in lines:
        print(line)
    if not all_ok:
        raise CliError("verification failed")
    print("all checks passed")
    return 0


# ---------------------------------------------------------------------------
# Config files


def _extract_config(argv: list[str]) -> tuple[list[str], Optional[str]]:
    out: list[str] = []
    path = None
    i = 0
    while i < len(argv):
        arg = argv[i]
        if arg == "--config":
            if i + 1 >= len(argv):
                raise CliError("--config: missing path")
            path = argv[i + 1]
            i += 2
            continue
        if arg.startswith("--config="):
            path = arg[len("--config="):]
            i += 1
            continue
        out.append(arg)
        i += 1
    return out, path


def _config_tokens(value) -> list[str]:
    if isinstance(value, list):
        return [",".join(_format_value(v) for v in value)]
    return [_format_value(value)]


def _apply_config(sub_parser: argparse.ArgumentParser, argv: list[str],
                  path: str) -> list[str]:
    """Fill in flags from a JSON config; explicit flags win."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"--config: {exc}") from exc
    if not isinstance(doc, dict):
        raise CliError("--config: expected a JSON object of option values")
    given = {a.split("=", 1)[0] for a in argv if a.startswith("--")}
    known = sub_parser._option_string_actions
    extra: list[str] = []
    for key, value in doc.items():
        flag = "--" + key.replace("_", "-")
        if flag not in known:
            flag = "--" + key
        if flag not in known or flag in given:
            continue
        action = known[flag]
        if isinstance(action, argparse._StoreTrueAction):
            if value:
                extra.append(flag)
        else:
            extra.append(flag)
            extra.extend(_config_tokens(value))
    return argv + extra


# ---------------------------------------------------------------------------
# Entry point


def _build_parser() -> tuple[_Parser, dict]:
    parser = _Parser(prog="periorbit",
                     description="Periodic-orbit branches for coupled systems")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", metavar="PATH",
                        help="JSON file of option values (flags override)")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p_scan = sub.add_parser("scenario", help="list or inspect scenarios")
    scan_sub = p_scan.add_subparsers(dest="action", metavar="action")
    scan_sub.add_parser("list", help="names of the builtin scenarios")
    p_show = scan_sub.add_parser("show", help="summary of one scenario")
    p_show.add_argument("--scenario", required=True)
    p_show.add_argument("--json", action="store_true")

    p_lin = sub.add_parser("linear", help="periodic solution of the linear part")
    p_lin.add_argument("--scenario", required=True)
    p_lin.add_argument("--tol", type=float, default=1e-10)
    p_lin.add_argument("--samples", type=int, default=1000)
    p_lin.add_argument("--out", required=True)

    p_avg = sub.add_parser("average", help="sample the averaged field")
    p_avg.add_argument("--scenario", required=True)
    p_avg.add_argument("--region")
    p_avg.add_argument("--grid", type=int, default=101)
    p_avg.add_argument("--tol", type=float, default=1e-10)
    p_avg.add_argument("--out", required=True)

    p_deg = sub.add_parser("degree", help="Brouwer degree of the averaged field")
    p_deg.add_argument("--scenario", required=True)
    p_deg.add_argument("--region")
    p_deg.add_argument("--grid", type=int, default=8)
    p_deg.add_argument("--tol", type=float, default=1e-10)
    p_deg.add_argument("--json", action="store_true")

    p_idx = sub.add_parser("index", help="fixed-point index identity over U x V")
    p_idx.add_argument("--scenario", required=True)
    p_idx.add_argument("--lambda", dest="lambdas", required=True,
                       help="comma-separated positive values")
    p_idx.add_argument("--U", dest="u", required=True, help="box lo:hi[,lo:hi...]")
    p_idx.add_argument("--V", dest="v", help="region (defaults to the scenario's)")
    p_idx.add_argument("--grid", type=int, default=4)
    p_idx.add_argument("--tol", type=float, default=1e-10)
    p_idx.add_argument("--json", action="store_true")

    p_br = sub.add_parser("branch", help="continue branches from the trivial points")
    p_br.add_argument("--scenario", required=True)
    p_br.add_argument("--region")
    p_br.add_argument("--lambda-max", dest="lambda_max", type=float, required=True)
    p_br.add_argument("--step0", type=float, default=1e-2)
    p_br.add_argument("--step-min", dest="step_min", type=float, default=1e-6)
    p_br.add_argument("--step-max", dest="step_max", type=float, default=0.1)
    p_br.add_argument("--max-points", dest="max_points", type=int, default=10000)
    p_br.add_argument("--tol", type=float, default=1e-10)
    p_br.add_argument("--out", required=True)

    p_tr = sub.add_parser("triples", help="lift branch points to full orbits")
    p_tr.add_argument("--in", dest="infile", required=True)
    p_tr.add_argument("--scenario", help="override the manifest's scenario")
    p_tr.add_argument("--stride", type=int, default=1)
    p_tr.add_argument("--samples", type=int, default=200)
    p_tr.add_argument("--tol", type=float, default=1e-10)
    p_tr.add_argument("--out", required=True)

    p_plot = sub.add_parser("plot", help="SVG polyline plot of CSV columns")
    p_plot.add_argument("--in", dest="infile", required=True)
    p_plot.add_argument("--x", required=True)
    p_plot.add_argument("--y", required=True)
    p_plot.add_argument("--group", help="series column (default: seed, if present)")
    p_plot.add_argument("--out", required=True)

    p_ver = sub.add_parser("verify", help="run the invariant battery")
    p_ver.add_argument("--scenario")
    p_ver.add_argument("--all", action="store_true")

    commands = {
        "scenario": p_scan, "linear": p_lin, "average": p_avg, "degree": p_deg,
        "index": p_idx, "branch": p_br, "triples": p_tr, "plot": p_plot,
        "verify": p_ver,
    }
    return parser, commands


_HANDLERS = {
    "scenario": _cmd_scenario,
    "linear": _cmd_linear,
    "average": _cmd_average,
    "degree": _cmd_degree,
    "index": _cmd_index,
    "branch": _cmd_branch,
    "triples": _cmd_triples,
    "plot": _cmd_plot,
    "verify": _cmd_verify,
}


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    parser, commands = _build_parser()
    argv = list(argv) if argv is not None else sys.argv[1:]
    argv, config_path = _extract_config(argv)
    if config_path is not None:
        name = next((a for a in argv if not a.startswith("-")), None)
        if name not in commands:
            raise CliError("--config: give a subcommand the config applies to")
        argv = _apply_config(commands[name], argv, config_path)
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 1
    if args.command == "scenario" and args.action is None:
        raise CliError("scenario: choose an action (list, show)")
    try:
        return _HANDLERS[args.command](args)
    except HypothesisFailure as exc:
        print(f"hypothesis failure: {exc}", file=sys.stderr)
        return 2
    except linear.ResonanceError as exc:
        print(f"hypothesis failure: {exc}", file=sys.stderr)
        return 2
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (sysmod.ScenarioError, ExprError, linear.LinearError, avg.AverageError,
            poincare.PoincareError, br.BranchError, geometry.GeometryError,
            OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        return run_command(argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
