import csv
import io
import math

import orjson
import pytest
from typer.testing import CliRunner

import result_writer as writer
from main import app

runner = CliRunner()


def invoke(*args: str):
    return runner.invoke(app, list(args))


def read_json(path):
    return orjson.loads(path.read_bytes())


def test_gaps_reports_type_one_gap(tmp_path):
    out = tmp_path / "gaps.json"
    result = invoke("gaps", "--a", "1,1,2", "--beta", "1.5707963", "--omega-max", "3.14159", "--out", str(out))
    assert result.exit_code == 0
    data = read_json(out)
    assert list(data) == ["command", "params", "window", "resolution", "zero_in_spectrum", "bands",
                          "embedded_points", "gaps", "sigma_points", "w_points"]
    gap = data["gaps"][0]
    assert gap["gap_type"] == "TypeI"
    assert gap["omega_b"] < math.pi / 2 < gap["omega_t"]
    assert gap["lambda_b"] == pytest.approx(gap["omega_b"] ** 2, rel=1e-12)
    assert data["w_points"] == pytest.approx([math.pi / 2])


def test_gaps_output_is_canonical(tmp_path):
    out = tmp_path / "gaps.json"
    invoke("gaps", "--a", "1,1,2", "--beta", "1.5707963", "--omega-max", "3.14159", "--out", str(out))
    raw = out.read_bytes()
    assert writer.dumps_json(orjson.loads(raw)) == raw
    assert b"\"omega_lo\": 5.000000000000e-02" in raw
    assert b"\"a3\": 2.000000000000e+00" in raw


def test_empty_window_is_a_config_error():
    result = invoke("gaps", "--a", "1,1,1", "--beta", "0", "--omega-max", "0")
    assert result.exit_code == 2


def test_malformed_periods_are_a_config_error():
    assert invoke("gaps", "--a", "1,1").exit_code == 2
    assert invoke("gaps", "--a", "1,x,2").exit_code == 2


def test_flags_override_config_file(tmp_path):
    config = tmp_path / "run.conf"
    config.write_text("# config A at beta = 0\na=1,1,1\nbeta=0\nomega_max=0\n")
    assert invoke("gaps", "--config", str(config)).exit_code == 2

    out = tmp_path / "gaps.json"
    result = invoke("gaps", "--config", str(config), "--omega-max", "3.0", "--out", str(out))
    assert result.exit_code == 0
    data = read_json(out)
    assert data["params"]["a3"] == 1.0
    assert data["zero_in_spectrum"] is True


def test_missing_config_file(tmp_path):
    assert invoke("gaps", "--config", str(tmp_path / "absent.conf")).exit_code == 2


def test_eigen_finds_two_modes(tmp_path):
    out = tmp_path / "modes.json"
    result = invoke("eigen", "--a", "1,1,2", "--beta", "1.5707963", "--mu", "0.5", "--gap", "0", "--out", str(out))
    assert result.exit_code == 0
    modes = read_json(out)["modes"]
    assert len(modes) == 2
    for mode in modes:
        assert mode["lambda"] == pytest.approx(mode["omega"] ** 2, rel=1e-12)
        assert mode["residual"] <= 1e-6
        assert "profile" not in mode


def test_eigen_heavy_defect_has_no_modes():
    result = invoke("eigen", "--a", "1,1,2", "--beta", "1.5707963", "--mu", "1.5")
    assert result.exit_code == 0
    assert orjson.loads(result.stdout)["modes"] == []


def test_eigen_reports_modes_below_double_precision(tmp_path):
    out = tmp_path / "modes.json"
    result = invoke("eigen", "--a", "1,1,1", "--beta", repr(math.pi / 2), "--mu", "0.95",
                    "--omega-max", "4.5", "--out", str(out))
    assert result.exit_code == 0
    data = read_json(out)
    assert data["modes"] == []
    assert [(entry["gap_index"], entry["edge"]) for entry in data["unresolved"]] == [(0, "bottom"), (1, "top")]
    for entry in data["unresolved"]:
        assert entry["note"] == "mode below double-precision resolution"


def test_eigen_missing_gap_index():
    assert invoke("eigen", "--gap", "5").exit_code == 4


def test_eigen_profile_attaches_field(tmp_path):
    out = tmp_path / "modes.json"
    result = invoke("eigen", "--gap", "0", "--profile", "20", "--out", str(out))
    assert result.exit_code == 0
    for mode in read_json(out)["modes"]:
        assert mode["profile"]["K"] == 20
        assert mode["profile"]["values"][20][20] == 1.0
        assert mode["decay_rate"] < 1.0


def test_eigen_csv_has_documented_header(tmp_path):
    out = tmp_path / "modes.csv"
    assert invoke("eigen", "--format", "csv", "--out", str(out)).exit_code == 0
    rows = list(csv.reader(io.StringIO(out.read_text())))
    assert rows[0] == ["beta", "gap_index", "gap_type", "omega_b", "omega_t",
                       "mode_omega", "mode_lambda", "F_value", "residual"]
    assert len(rows) == 3


def test_bands_endpoint_rows(tmp_path):
    out = tmp_path / "bands.json"
    result = invoke("bands", "--beta-samples", "2", "--out", str(out))
    assert result.exit_code == 0
    rows = read_json(out)["rows"]
    assert [row["beta"] for row in rows] == pytest.approx([0.0, math.pi])
    assert all(row["errors"] is None for row in rows)
    # beta = 0 keeps a type I gap around pi/2, beta = pi closes it
    assert [gap["gap_type"] for gap in rows[0]["gaps"]] == ["TypeI"]
    assert rows[1]["gaps"] == []


def test_bands_csv_and_json_agree(tmp_path):
    json_out, csv_out = tmp_path / "bands.json", tmp_path / "bands.csv"
    assert invoke("bands", "--beta-samples", "3", "--out", str(json_out)).exit_code == 0
    assert invoke("bands", "--beta-samples", "3", "--format", "csv", "--out", str(csv_out)).exit_code == 0

    from_json = [mode["omega"] for row in read_json(json_out)["rows"]
                 for gap in row["gaps"] for mode in gap["modes"]]
    reader = csv.DictReader(io.StringIO(csv_out.read_text()))
    assert reader.fieldnames[-1] == "errors"
    from_csv = [float(row["mode_omega"]) for row in reader if row["mode_omega"]]
    assert from_csv == from_json
    assert from_json


def test_bands_rejects_single_sample():
    assert invoke("bands", "--beta-samples", "1").exit_code == 2


def test_bands_bytes_do_not_depend_on_threads(tmp_path, monkeypatch):
    outputs = []
    for threads in ("1", "3"):
        monkeypatch.setenv("LATTICE_GUIDE_THREADS", threads)
        out = tmp_path / f"bands_{threads}.json"
        assert invoke("bands", "--beta-samples", "4", "--out", str(out)).exit_code == 0
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1]


def test_dispersion_table_shape_and_symmetry(tmp_path):
    out = tmp_path / "dispersion.json"
    assert invoke("dispersion", "--grid", "4", "--out", str(out)).exit_code == 0
    rows = read_json(out)["rows"]
    assert len(rows) == 16
    by_point = {(round(row["xi"], 6), round(row["eta"], 6)): row["roots"] for row in rows}
    quarter = round(math.pi / 2, 6)
    three_quarters = round(3 * math.pi / 2, 6)
    for eta in {key[1] for key in by_point}:
        assert by_point[(quarter, eta)] == pytest.approx(by_point[(three_quarters, eta)], abs=1e-9)


def test_dispersion_rejects_empty_grid():
    assert invoke("dispersion", "--grid", "0").exit_code == 2


def test_verify_unit_weight_is_vacuous(tmp_path):
    out = tmp_path / "verify.json"
    assert invoke("verify", "--mu", "1", "--out", str(out)).exit_code == 0
    report = read_json(out)
    assert report["note"] == "no modes, nothing to verify"
    assert report["checks"] == []


def test_verify_small_truncation_fails(tmp_path):
    out = tmp_path / "verify.json"
    result = invoke("verify", "--K", "4", "--out", str(out))
    assert result.exit_code == 6
    report = read_json(out)
    assert report["passed"] is False
    assert "K=4" in report["note"]
    assert any(not check["passed"] for check in report["checks"])


def test_verify_default_configuration_passes(tmp_path):
    out = tmp_path / "verify.json"
    result = invoke("verify", "--out", str(out))
    assert result.exit_code == 0
    report = read_json(out)
    assert report["passed"] is True
    deltas = [check["value"] for check in report["checks"] if check["quantity"] == "oracle_delta_omega"]
    assert len(deltas) == 2
    assert max(deltas) <= 1e-3
