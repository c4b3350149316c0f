"""Command line interface: argument handling, output formats, exit codes,
and file artifacts, exercised in-process plus one console-script check."""

import json
import math
import shutil
import subprocess

import pytest

from lkspin.cli import _fmt, main, parse_u_range
from lkspin.expectations import e1_closed, expected_lk_spin
from lkspin.spinfield import FieldRealization


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def test_parse_u_range_single():
    assert parse_u_range("0.5") == [0.5]
    assert parse_u_range("-1") == [-1.0]


def test_parse_u_range_inclusive_endpoints():
    got = parse_u_range("-2:2:0.5")
    assert len(got) == 9
    assert got[0] == -2.0
    assert got[-1] == pytest.approx(2.0, abs=1e-12)
    assert parse_u_range("0:1:0.25")[-1] == pytest.approx(1.0, abs=1e-12)
    # a stop that is not on the lattice is simply not reached
    assert parse_u_range("0:1:0.3") == pytest.approx([0.0, 0.3, 0.6, 0.9])


def test_parse_u_range_errors():
    with pytest.raises(ValueError):
        parse_u_range("1:2")
    with pytest.raises(ValueError):
        parse_u_range("0:1:0")
    with pytest.raises(ValueError):
        parse_u_range("1:0:0.5")


def test_fmt():
    assert _fmt(None) == "nan"
    assert _fmt("closed") == "closed"
    assert _fmt(0.5) == "0.5"


# ---------------------------------------------------------------------------
# closed-form commands
# ---------------------------------------------------------------------------


def test_expect_csv_rows(capsys):
    code, out, _ = run_cli(capsys, "expect", "--xi", "3", "--s", "1",
                           "--u", "-2:2:0.5", "--out", "csv")
    assert code == 0
    lines = out.strip().split("\n")
    assert lines[0] == "u,L0,L1,L2,L3,regime"
    assert len(lines) == 10
    l3 = [float(line.split(",")[4]) for line in lines[1:]]
    assert all(a > b for a, b in zip(l3, l3[1:]))
    assert lines[1].endswith("exact-closed-form")


def test_expect_json_matches_library(capsys):
    code, out, _ = run_cli(capsys, "expect", "--xi", "3", "--s", "1", "--u", "-2")
    assert code == 0
    doc = json.loads(out)
    row = doc["rows"][0]
    vec = expected_lk_spin(3.0, 1.0, -2.0).values
    assert (row["L0"], row["L1"], row["L2"], row["L3"]) == (vec.l0, vec.l1, vec.l2, vec.l3)


def test_expect_su2_doubles(capsys):
    _, out_so3, _ = run_cli(capsys, "expect", "--xi", "3", "--s", "2", "--u", "0.7")
    _, out_su2, _ = run_cli(capsys, "expect", "--xi", "3", "--s", "2", "--u", "0.7",
                            "--manifold", "su2")
    a = json.loads(out_so3)["rows"][0]
    b = json.loads(out_su2)["rows"][0]
    assert all(b[k] == 2.0 * a[k] for k in ("L0", "L1", "L2", "L3"))


def test_geometry_json(capsys):
    code, out, _ = run_cli(capsys, "geometry", "--xi", "1", "--s", "1", "--theta", "1.1")
    assert code == 0
    doc = json.loads(out)
    assert doc["scalar_curvature"] == pytest.approx(1.5, abs=1e-12)
    g = doc["gram"]
    assert g[0][1] == g[1][0]
    assert doc["lk_so3"] == pytest.approx([0.0, 3.0 * math.pi, 0.0, 8.0 * math.pi**2])


def test_geometry_csv_flattens_tensors(capsys):
    code, out, _ = run_cli(capsys, "geometry", "--xi", "2", "--s", "1",
                           "--theta", "1.1", "--out", "csv")
    assert code == 0
    names = [line.split(",")[0] for line in out.strip().split("\n")[1:]]
    assert "gram[0][0]" in names
    assert "christoffel[2][0][1]" in names
    assert "sectional[12]" in names


def test_e_funcs_closed_branch(capsys):
    # two equal variances: the closed form for xi=2, s=1 applies
    code, out, _ = run_cli(capsys, "e-funcs", "--a", "4", "--b", "4", "--c", "1")
    assert code == 0
    doc = json.loads(out)
    assert doc["method"] == "closed"
    assert doc["e1"] == pytest.approx(e1_closed(2.0, 1.0), rel=1e-14)


def test_e_funcs_quadrature_branch(capsys):
    _, out, _ = run_cli(capsys, "e-funcs", "--a", "1", "--b", "2", "--c", "3")
    assert json.loads(out)["method"] == "quadrature"


def test_euclidean_json(capsys):
    code, out, _ = run_cli(capsys, "euclidean", "--a", "1", "--b", "1", "--c", "1",
                           "--u", "0")
    assert code == 0
    doc = json.loads(out)
    row = doc["rows"][0]
    assert row["L3"] == pytest.approx(0.5, abs=1e-14)
    assert row["L2"] == pytest.approx(1.0 / math.pi, rel=1e-12)
    assert doc["constants"] is not None


def test_repeat_invocations_byte_identical(capsys):
    args = ("expect", "--xi", "2.5", "--s", "2", "--u", "-1:1:0.5")
    _, first, _ = run_cli(capsys, *args)
    _, second, _ = run_cli(capsys, *args)
    assert first == second


# ---------------------------------------------------------------------------
# exit codes
# ---------------------------------------------------------------------------


def test_domain_error_exits_one(capsys):
    code, out, err = run_cli(capsys, "expect", "--xi", "0", "--s", "2", "--u", "0")
    assert code == 1
    assert out == ""
    assert "lkspin: error:" in err


def test_incomplete_spectrum_exits_one(capsys):
    code, _, err = run_cli(capsys, "synth", "--two-band", "--xi", "3")
    assert code == 1
    assert "requires" in err


def test_usage_error_exits_one(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["expect", "--xi", "3", "--s", "1"])  # missing --u
    assert exc.value.code == 1


def test_negative_range_is_not_an_option(capsys):
    code, out, _ = run_cli(capsys, "expect", "--xi", "3", "--s", "1", "--u", "-1:1:1")
    assert code == 0
    assert len(json.loads(out)["rows"]) == 3


# ---------------------------------------------------------------------------
# simulation and estimation commands
# ---------------------------------------------------------------------------


def test_synth_writes_realization(tmp_path, capsys):
    target = tmp_path / "real.json"
    code, out, _ = run_cli(capsys, "synth", "--two-band", "--xi", "2", "--s", "1",
                           "--seed", "5", "--resolution", "16",
                           "--save-realization", str(target))
    assert code == 0
    doc = json.loads(out)
    assert doc["xi_squared"] == pytest.approx(4.0, abs=1e-12)
    assert 0.5 < doc["field_std"] < 1.5
    assert doc["realization_file"] == str(target)
    restored = FieldRealization.from_json(target.read_text())
    assert restored.spec.s == 1


def test_estimate_json_and_mesh(tmp_path, capsys):
    mesh_file = tmp_path / "level.off"
    code, out, _ = run_cli(capsys, "estimate", "--two-band", "--xi", "2", "--s", "1",
                           "--seed", "3", "--resolution", "16", "--u", "0.2",
                           "--save-mesh", str(mesh_file))
    assert code == 0
    doc = json.loads(out)
    assert len(doc["rows"]) == 1
    row = doc["rows"][0]
    for key in ("u", "L0_gb", "L0_morse", "L1", "L2", "L3", "skipped_area_fraction"):
        assert key in row
    lines = mesh_file.read_text().strip().split("\n")
    assert lines[0] == "OFF"
    nv, nf, _ = (int(x) for x in lines[1].split())
    assert len(lines) == 2 + nv + nf
    for face in lines[2 + nv:]:
        parts = face.split()
        assert parts[0] == "3"
        assert all(0 <= int(i) < nv for i in parts[1:])


def test_estimate_mesh_needs_single_threshold(tmp_path, capsys):
    code, _, err = run_cli(capsys, "estimate", "--two-band", "--xi", "2", "--s", "1",
                           "--resolution", "16", "--u", "0:1:0.5",
                           "--save-mesh", str(tmp_path / "x.off"))
    assert code == 1
    assert "single threshold" in err


def test_estimate_csv_nan_for_disabled_column(capsys):
    code, out, _ = run_cli(capsys, "estimate", "--two-band", "--xi", "2", "--s", "1",
                           "--resolution", "16", "--u", "0:0.5:0.5",
                           "--l0-method", "gb", "--out", "csv")
    assert code == 0
    lines = out.strip().split("\n")
    assert len(lines) == 3
    header = lines[0].split(",")
    morse_col = header.index("L0_morse")
    assert all(line.split(",")[morse_col] == "nan" for line in lines[1:])


def test_output_file_instead_of_stdout(tmp_path, capsys):
    target = tmp_path / "rows.csv"
    code, out, _ = run_cli(capsys, "expect", "--xi", "2", "--s", "1", "--u", "0",
                           "--out", "csv", "--output", str(target))
    assert code == 0
    assert out == ""
    assert target.read_text().startswith("u,L0,")


# ---------------------------------------------------------------------------
# validation commands
# ---------------------------------------------------------------------------


def test_mc_validate_metric_ok(tmp_path, capsys):
    prefix = str(tmp_path / "metric")
    code, out, _ = run_cli(capsys, "mc-validate", "--check", "metric",
                           "--two-band", "--xi", "2", "--s", "1",
                           "--trials", "50", "--z-max", "50",
                           "--output-prefix", prefix)
    assert code == 0
    summary = json.loads(out)
    assert summary["status"] == "ok"
    stored = json.loads((tmp_path / "metric.json").read_text())
    assert stored["check"] == "metric"
    manifest = json.loads((tmp_path / "metric.manifest.json").read_text())
    assert manifest["config_hash"] == summary["config_hash"]
    assert manifest["files"] == ["metric.json"]


def test_mc_validate_breach_still_persists(tmp_path, capsys):
    prefix = str(tmp_path / "metric")
    code, out, _ = run_cli(capsys, "mc-validate", "--check", "metric",
                           "--two-band", "--xi", "2", "--s", "1",
                           "--trials", "50", "--z-max", "1e-9",
                           "--output-prefix", prefix)
    assert code == 2
    assert json.loads(out)["status"] == "breach"
    assert (tmp_path / "metric.json").exists()
    assert (tmp_path / "metric.manifest.json").exists()


def test_mc_validate_lk_writes_triplet(tmp_path, capsys):
    prefix = str(tmp_path / "lk")
    code, out, _ = run_cli(capsys, "mc-validate", "--check", "lk",
                           "--two-band", "--xi", "2", "--s", "1",
                           "--trials", "2", "--resolution", "16", "--u", "0",
                           "--z-max", "1e9", "--output-prefix", prefix)
    assert code == 0
    summary = json.loads(out)
    assert summary["check"] == "lk"
    for suffix in (".json", ".csv", ".manifest.json"):
        assert (tmp_path / ("lk" + suffix)).exists()
    stored = json.loads((tmp_path / "lk.json").read_text())
    assert stored["config_hash"] == summary["config_hash"]


def test_d1_test_micro(capsys):
    code, out, _ = run_cli(capsys, "d1-test", "--xi", "3", "--s", "1", "--u", "1.0",
                           "--trials", "2", "--coarse-resolution", "16",
                           "--resolution", "24", "--seed", "4")
    assert code == 0
    doc = json.loads(out)
    assert doc["verdict"] in ("integral-route", "density-route", "inconclusive")
    assert doc["xi"] == 3.0 and doc["s"] == 1
    assert doc["u_grid"] == [1.0]
    assert doc["trials_used"] + doc["excluded"] == 2


def test_console_script_version():
    exe = shutil.which("lkspin")
    assert exe is not None
    got = subprocess.run([exe, "--version"], capture_output=True, text=True)
    assert got.returncode == 0
    assert got.stdout.strip().startswith("lkspin ")
