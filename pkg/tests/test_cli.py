import csv
import json
import re

import numpy as np
import pytest

from lcic.cli import SHAPE_HEADER, main, read_shape_csv
from lcic.config import load_config
from lcic.errors import ConfigError

SMALL = """\
format_version: 1
name: small
model: both
tubes:
  - name: inner
    outer_diameter: 1.32 mm
    length: 120 mm
    bending_stiffness: 20
    precurvature: 8 1/m
channel:
  inner_diameter: 6 mm
  ds: 2 mm
  sections:
    - {type: line, length: 150 mm}
solver:
  n: 30
"""

ELBOW = """\
format_version: 1
name: elbow
model: lcic
tubes:
  - name: inner
    outer_diameter: 1.32 mm
    length: 150 mm
    bending_stiffness: 20
    precurvature: 5 1/m
channel:
  inner_diameter: 20 mm
  ds: 2 mm
  sections:
    - {type: line, length: 80 mm}
    - {type: line, length: 120 mm, bend_angle: 90 deg}
solver:
  n: 40
"""


def write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_units_and_defaults(tmp_path):
    cfg = load_config(write(tmp_path, SMALL))
    row = cfg.rows[0]
    sc = row.scene()
    assert sc.tubes[0].outer_radius == pytest.approx(0.00066)
    assert sc.channel.inner_radius == pytest.approx(0.003)
    np.testing.assert_allclose(sc.tubes[0].precurvature, [0, 8.0, 0])
    assert sc.n == [30]


def test_missing_field_names_it_with_line(tmp_path, capsys):
    text = SMALL.replace("    length: 120 mm\n", "")
    p = write(tmp_path, text)
    assert main(["solve", str(p), "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "length" in err
    m = re.search(re.escape(str(p)) + r":(\d+):", err)
    assert m and int(m.group(1)) == 5          # the tube entry that lacks it


def test_bad_value_points_at_its_line(tmp_path):
    p = write(tmp_path, SMALL.replace("inner_diameter: 6 mm", "inner_diameter: 6 parsecs"))
    with pytest.raises(ConfigError) as exc:
        load_config(p)
    assert exc.value.line == 11


def test_format_version_required(tmp_path):
    with pytest.raises(ConfigError, match="format_version"):
        load_config(write(tmp_path, SMALL.replace("format_version: 1", "format_version: 2")))


def test_yaml_syntax_error_has_line(tmp_path):
    with pytest.raises(ConfigError) as exc:
        load_config(write(tmp_path, SMALL + "  bad: [unclosed\n"))
    assert exc.value.line is not None


def test_sweep_rows_in_order():
    cfg = load_config("scenarios/planar_sweep.yaml")
    assert [r.label for r in cfg.rows] == [f"row{k:03d}" for k in range(9)]
    ids = [r.overrides["channel.inner_diameter"] for r in cfg.rows]
    ins = [r.overrides["tubes[0].insertion"] for r in cfg.rows]
    assert ids == ["10 mm"] * 3 + ["20 mm"] * 3 + ["30 mm"] * 3
    assert ins == ["157 mm", "167 mm", "177 mm"] * 3
    assert cfg.rows[4].scene().lengths[0] == pytest.approx(0.167)


def _solve(tmp_path, cfg, out, *extra):
    return main(["solve", str(cfg), "--out", str(out), *extra])


def test_solve_writes_bundle(tmp_path):
    cfg = write(tmp_path, SMALL)
    out = tmp_path / "out"
    assert _solve(tmp_path, cfg, out) == 0
    for model in ("lcic", "scm"):
        rep = json.loads((out / model / "report.json").read_text())
        assert rep["status"] == "converged"
        with open(out / model / "shape_inner.csv") as f:
            rows = list(csv.reader(f))
        assert rows[0] == SHAPE_HEADER
        assert len(rows) == 1 + 31          # header, base, 30 segment ends
        assert all(len(v.lstrip("-").replace(".", "").split("e")[0].lstrip("0")) <= 9
                   for r in rows[1:] for v in r)
        s, pts = read_shape_csv(out / model / "shape_inner.csv")
        assert s[0] == 0.0 and s[-1] == pytest.approx(0.12)
        np.testing.assert_allclose(pts[-1], rep["tip_m"], rtol=1e-8)


def test_env_var_sets_default_output(tmp_path, monkeypatch):
    cfg = write(tmp_path, SMALL.replace("model: both", "model: scm"))
    monkeypatch.setenv("LCIC_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["solve", str(cfg)]) == 0
    assert (tmp_path / "env" / "small" / "scm" / "shape_inner.csv").exists()


def test_rerun_and_jobs_are_byte_identical(tmp_path):
    sweep = SMALL + "sweep:\n  channel.inner_diameter: [4 mm, 6 mm, 8 mm, 10 mm]\n"
    cfg = write(tmp_path, sweep.replace("model: both", "model: lcic"))
    outs = []
    for k, jobs in enumerate(("1", "1", "4")):
        out = tmp_path / f"o{k}"
        assert _solve(tmp_path, cfg, out, "--jobs", jobs) == 0
        outs.append(out)
    for row in ("row000", "row001", "row002", "row003"):
        ref = (outs[0] / row / "lcic" / "shape_inner.csv").read_bytes()
        for o in outs[1:]:
            assert (o / row / "lcic" / "shape_inner.csv").read_bytes() == ref


def test_self_comparison_is_zero(tmp_path):
    cfg = write(tmp_path, SMALL)
    out = tmp_path / "cmp"
    assert main(["compare", str(cfg), "--out", str(out)]) == 0
    with open(out / "comparison.csv") as f:
        table = list(csv.DictReader(f))
    lcic = [r for r in table if r["model"] == "lcic"][0]
    assert lcic["reference"] == "lcic"
    assert float(lcic["e_max_m"]) == 0.0
    scm = [r for r in table if r["model"] == "scm"][0]
    assert float(scm["e_max_m"]) >= float(scm["e_mean_m"]) >= 0.0


def test_reference_file_round_trip(tmp_path):
    cfg = write(tmp_path, SMALL.replace("model: both", "model: lcic"))
    out = tmp_path / "a"
    assert _solve(tmp_path, cfg, out) == 0
    ref = out / "lcic" / "shape_inner.csv"
    cfg2 = write(tmp_path, SMALL.replace("model: both", f"model: lcic\nreference: {ref}"),
                 "cfg2.yaml")
    out2 = tmp_path / "b"
    assert main(["compare", str(cfg2), "--out", str(out2)]) == 0
    with open(out2 / "comparison.csv") as f:
        row = next(csv.DictReader(f))
    assert row["reference"] == "file"
    assert float(row["e_max_m"]) < 1e-9


def test_plot_markers_match_contacts(tmp_path):
    cfg = write(tmp_path, ELBOW)
    out = tmp_path / "el"
    assert _solve(tmp_path, cfg, out) == 0
    assert main(["plot", str(out)]) == 0
    rep = json.loads((out / "lcic" / "report.json").read_text())
    assert rep["n_contacts"] > 0
    svgs = sorted((out / "lcic").glob("plot_*.svg"))
    assert [p.name for p in svgs] == ["plot_xz.svg"]          # planar: one view
    svg = svgs[0].read_text()
    assert len(re.findall(r'id="contact-\d+"', svg)) == rep["n_contacts"]
    assert main(["plot", str(out)]) == 0
    assert svgs[0].read_text() == svg


def test_stall_exits_2_and_keeps_best_iterate(tmp_path):
    cfg = write(tmp_path, ELBOW.replace("  n: 40\n", "  n: 40\n  lcic: {max_iter: 1}\n"))
    out = tmp_path / "st"
    assert _solve(tmp_path, cfg, out) == 2
    rep = json.loads((out / "lcic" / "report.json").read_text())
    assert rep["status"] == "stalled"
    assert (out / "lcic" / "shape_inner.csv").exists()


def test_plot_without_bundle_is_an_error(tmp_path):
    assert main(["plot", str(tmp_path)]) == 1
