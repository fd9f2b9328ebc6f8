"""Command-line interface: exit codes, file formats, manifests."""

import csv
import json
import math
import xml.etree.ElementTree as ET
from pathlib import Path

import pytest

from periorbit.cli import format_csv, main, write_atomic


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# scenario


def test_scenario_list(capsys):
    assert main(["scenario", "list"]) == 0
    out = capsys.readouterr().out
    for name in ("nicexa", "circle", "dae-pendulum", "delay", "springs"):
        assert name in out


def test_scenario_show_json(capsys):
    assert main(["scenario", "show", "--scenario", "circle", "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["name"] == "circle"
    assert doc["k"] == 1 and doc["s"] == 2


def test_scenario_from_file(tmp_path, capsys):
    path = tmp_path / "toy.json"
    path.write_text(json.dumps({
        "name": "toy", "T": "2pi", "k": 1, "s": 1,
        "A": [["-1"]], "c": ["sin(t)"], "f1": ["0"], "f2": ["-y1 + x1"],
    }))
    assert main(["scenario", "show", "--scenario", str(path)]) == 0
    assert "toy" in capsys.readouterr().out


# ---------------------------------------------------------------------------
# linear / average


def test_linear_csv_and_manifest(tmp_path):
    out = tmp_path / "xhat.csv"
    assert main(["linear", "--scenario", "nicexa", "--samples", "200",
                 "--out", str(out)]) == 0
    rows = read_csv(out)
    assert len(rows) == 201                        # t = 0 .. T inclusive
    assert abs(float(rows[0]["t"])) < 1e-15
    assert abs(float(rows[-1]["t"]) - 2 * math.pi) < 1e-12
    assert abs(float(rows[0]["x1"]) - 0.95) < 1e-8
    text = out.read_bytes()
    assert b"\r" not in text                       # LF endings
    man = json.loads((tmp_path / "xhat.csv.manifest.json").read_text())
    assert man["scenario"] == "nicexa"
    assert man["command"].startswith("linear")
    assert len(man["scenario_sha256"]) == 64
    assert man["format"]["floats"] == "%.12g"
    assert "created" in man and "version" in man
    assert man["options"]["samples"] == 200


def test_average_csv(tmp_path):
    out = tmp_path / "w.csv"
    assert main(["average", "--scenario", "nicexa", "--grid", "5",
                 "--out", str(out)]) == 0
    rows = read_csv(out)
    assert [c for c in rows[0]] == ["q1", "w1"]
    for row in rows:
        q, w = float(row["q1"]), float(row["w1"])
        assert abs(w + (q + 0.55)) < 1e-7


def test_average_on_chart_region(tmp_path):
    out = tmp_path / "w.csv"
    assert main(["average", "--scenario", "circle", "--grid", "9",
                 "--region", "chart:theta:0.0:6.28", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert [c for c in rows[0]] == ["theta", "w_theta"]
    for row in rows:
        th, w = float(row["theta"]), float(row["w_theta"])
        assert abs(w + math.cos(th)) < 1e-7


# ---------------------------------------------------------------------------
# degree / index exit codes


def test_degree_default_region(capsys):
    assert main(["degree", "--scenario", "nicexa"]) == 0
    out = capsys.readouterr().out
    assert "degree = -1" in out
    assert "oracle" in out


def test_degree_json(capsys):
    assert main(["degree", "--scenario", "circle",
                 "--region", "chart:theta:0.6:2.6", "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["degree"] == 1
    assert doc["oracle_value"] == 1
    assert len(doc["zeros"]) == 1


def test_degree_zero_is_hypothesis_failure(capsys):
    # both equilibria cancel over the full circle
    assert main(["degree", "--scenario", "circle",
                 "--region", "chart:theta:0.0:6.28"]) == 2
    cap = capsys.readouterr()
    assert "degree = 0" in cap.out                 # still reported
    assert "hypothesis failure" in cap.err


def test_degree_wide_arc_spans_south_pole(capsys):
    """An arc that wraps past the south equilibrium picks up its sign."""
    assert main(["degree", "--scenario", "circle",
                 "--region", "chart:theta:1.6:7.8"]) == 0
    assert "degree = -1" in capsys.readouterr().out


def test_resonant_scenario_exits_two(capsys):
    assert main(["degree", "--scenario", "dae-pendulum"]) == 2
    assert "hypothesis failure" in capsys.readouterr().err


def test_index_identity_match(capsys):
    assert main(["index", "--scenario", "nicexa", "--lambda", "0.05",
                 "--U", "0:2", "--V", "-2:2"]) == 0
    out = capsys.readouterr().out
    assert "[ok]" in out
    assert "indicator 1_U = 1" in out


def test_index_empty_box(capsys):
    assert main(["index", "--scenario", "nicexa", "--lambda", "0.05",
                 "--U", "2:3", "--V", "-2:2"]) == 0
    out = capsys.readouterr().out
    assert "indicator 1_U = 0" in out
    assert "[ok]" in out


# ---------------------------------------------------------------------------
# branch / triples / plot pipeline


def test_branch_pipeline(tmp_path, capsys):
    out = tmp_path / "b.csv"
    args = ["branch", "--scenario", "nicexa", "--lambda-max", "0.1",
            "--out", str(out)]
    assert main(args) == 0
    first = out.read_bytes()
    header = first.decode().splitlines()[0].split(",")
    assert header[:3] == ["seed_id", "point_index", "lambda"]
    assert "residual" in header and "index" in header
    rows = read_csv(out)
    assert float(rows[-1]["lambda"]) == 0.1
    assert all(float(r["residual"]) < 1e-8 for r in rows)

    # byte-identical rerun
    assert main(args) == 0
    assert out.read_bytes() == first

    # lift to orbits via the manifest's scenario
    orbits = tmp_path / "o.csv"
    assert main(["triples", "--in", str(out), "--samples", "50",
                 "--out", str(orbits)]) == 0
    orows = read_csv(orbits)
    assert [c for c in orows[0]] == ["seed_id", "point_index", "lambda", "t", "x1", "y1"]
    first_orbit = [r for r in orows if r["point_index"] == "0"]
    assert len(first_orbit) == 51                  # t = 0 .. T inclusive
    for r in first_orbit[:5]:
        t = float(r["t"])
        want = (math.sin(t) - math.cos(t)) / 20.0 + 1.0
        assert abs(float(r["x1"]) - want) < 1e-7

    # plot the branch projection
    fig = tmp_path / "f.svg"
    assert main(["plot", "--in", str(out), "--x", "lambda", "--y", "q1",
                 "--out", str(fig)]) == 0
    root = ET.fromstring(fig.read_text())
    assert root.tag.endswith("svg")
    body = fig.read_text()
    assert "<polyline" in body


def test_branch_degree_zero_region_warns(tmp_path, capsys):
    out = tmp_path / "b.csv"
    code = main(["branch", "--scenario", "circle", "--lambda-max", "0.05",
                 "--region", "chart:theta:0.0:6.28", "--out", str(out)])
    assert code == 2
    assert out.exists()                            # outputs written first
    assert "hypothesis failure" in capsys.readouterr().err


def test_triples_scenario_override(tmp_path):
    out = tmp_path / "b.csv"
    assert main(["branch", "--scenario", "nicexa", "--lambda-max", "0.05",
                 "--out", str(out)]) == 0
    (tmp_path / "b.csv.manifest.json").unlink()
    orbits = tmp_path / "o.csv"
    assert main(["triples", "--in", str(out), "--out", str(orbits)]) == 1
    assert main(["triples", "--in", str(out), "--scenario", "nicexa",
                 "--out", str(orbits)]) == 0


def test_plot_single_point_uses_marker(tmp_path):
    src = tmp_path / "one.csv"
    src.write_text("seed_id,lambda,q1\n0,0.05,-0.55\n")
    fig = tmp_path / "f.svg"
    assert main(["plot", "--in", str(src), "--x", "lambda", "--y", "q1",
                 "--out", str(fig)]) == 0
    assert "<circle" in fig.read_text()


def test_plot_empty_table_is_an_error(tmp_path, capsys):
    src = tmp_path / "empty.csv"
    src.write_text("lambda,q1\n")
    assert main(["plot", "--in", str(src), "--x", "lambda", "--y", "q1",
                 "--out", str(tmp_path / "f.svg")]) == 1
    assert "no rows" in capsys.readouterr().err


def test_plot_unknown_column(tmp_path, capsys):
    src = tmp_path / "b.csv"
    src.write_text("lambda,q1\n0,1\n")
    assert main(["plot", "--in", str(src), "--x", "lambda", "--y", "zz",
                 "--out", str(tmp_path / "f.svg")]) == 1


# ---------------------------------------------------------------------------
# config, verify, errors


def test_config_supplies_defaults(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"scenario": "nicexa", "samples": 64}))
    out = tmp_path / "x.csv"
    assert main(["linear", "--config", str(cfg), "--out", str(out)]) == 0
    assert len(read_csv(out)) == 65


def test_config_explicit_flags_win(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"scenario": "circle", "samples": 64}))
    out = tmp_path / "x.csv"
    assert main(["linear", "--config", str(cfg), "--scenario", "nicexa",
                 "--out", str(out)]) == 0
    man = json.loads((tmp_path / "x.csv.manifest.json").read_text())
    assert man["scenario"] == "nicexa"
    assert man["options"]["samples"] == 64


def test_verify_single_scenario(capsys):
    assert main(["verify", "--scenario", "nicexa"]) == 0
    out = capsys.readouterr().out
    assert "all checks passed" in out
    assert ": fail" not in out


def test_verify_resonant_scenario_reports_skip(capsys):
    # resonance is a finding for verify, not a failure
    assert main(["verify", "--scenario", "dae-pendulum"]) == 0
    out = capsys.readouterr().out
    assert "non-T-resonance: skip" in out
    assert "downstream checks skipped" in out


def test_usage_errors_exit_one(capsys):
    assert main(["linear", "--scenario", "nicexa"]) == 1        # missing --out
    assert main(["linear", "--nope", "x"]) == 1
    assert main(["degree", "--scenario", "no-such-scenario"]) == 1
    assert main([]) == 1
    capsys.readouterr()


def test_out_in_missing_directory(tmp_path, capsys):
    target = tmp_path / "missing" / "x.csv"
    assert main(["linear", "--scenario", "nicexa", "--samples", "16",
                 "--out", str(target)]) == 1
    assert not target.exists()


def test_write_atomic_leaves_no_partials(tmp_path):
    target = tmp_path / "f.txt"
    write_atomic(str(target), "hello\n")
    assert target.read_text() == "hello\n"
    leftovers = [p for p in tmp_path.iterdir() if p != target]
    assert leftovers == []


def test_format_csv_conventions():
    text = format_csv(["a", "b"], [[1.0, 0.1234567890123456789], [2, -3.5]])
    lines = text.split("\n")
    assert lines[0] == "a,b"
    assert lines[1] == "1,0.123456789012"
    assert text.endswith("\n")
