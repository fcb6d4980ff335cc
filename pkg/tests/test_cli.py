import json
import subprocess
import sys

import numpy as np
import pytest

from dissflow.cli import MatrixFileError, format_matrix, main, parse_matrix_text
from dissflow.matcore import random_complex_matrix


def run(argv):
    return main([str(a) for a in argv])


def read_all(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_matrix_text_round_trip():
    m = random_complex_matrix(3, 1)
    assert np.array_equal(parse_matrix_text(format_matrix(m)), m)


@pytest.mark.parametrize("text, where", [
    ("", ":1:1:"),
    ("two\n", ":1:1:"),
    ("2\n1 0\n0 0\n0 0\n", ":5:1:"),
    ("1\n1.0 abc\n", ":2:5:"),
    ("1\n1.0 nan\n", ":2:5:"),
    ("1\n1.0\n", ":2:1:"),
    ("0\n", ":1:1:"),
])
def test_matrix_parse_errors_name_position(text, where):
    with pytest.raises(MatrixFileError) as info:
        parse_matrix_text(text, "m.txt")
    assert f"m.txt{where}" in str(info.value)


def test_random_command_outputs(tmp_path):
    out = tmp_path / "r"
    assert run(["random", "--dim", 6, "--seed", 3, "--lmax", 5, "--out", out]) == 0
    files = read_all(out)
    assert set(files) == {"matrix.txt", "trace.csv", "eigenvalues.csv", "summary.json", "manifest.json"}
    summary = json.loads(files["summary.json"])
    assert summary["dim"] == 6 and summary["seed"] == 3
    manifest = json.loads(files["manifest.json"])
    assert manifest["command"] == "random" and manifest["seed"] == 3
    assert manifest["parameters"]["flow"]["max_flow"] == 5.0
    assert "version" in manifest and manifest["output_dir"] == str(out)
    header = files["trace.csv"].decode().splitlines()[0].split(",")
    assert header[0] == "ell" and header[-1] == "dI_6"


def test_benchmark_untruncated(tmp_path):
    # default truncation is kept on the command line; switching it off recovers accuracy
    assert run(["random", "--dim", 15, "--seed", 1, "--truncate-frac", 0, "--out", tmp_path / "w"]) == 0
    white = json.loads((tmp_path / "w" / "summary.json").read_text())
    assert white["delta"] < 1e-4
    assert white["i2_off_log_slope"] == pytest.approx(-2, abs=0.05)
    assert run(["random", "--dim", 1, "--out", tmp_path / "one"]) == 0
    assert json.loads((tmp_path / "one" / "summary.json").read_text())["delta"] == 0


@pytest.mark.parametrize("argv", [
    ["random", "--dim", 5, "--seed", 7, "--lmax", 3],
    ["single-mode", "--g1", 0.8, "--g2", 0.3],
    ["scattering", "--j-cutoff", 4, "--lmax", 10],
    ["disordered", "--sites", 4, 6, "--realizations", 5, "--seed", 2],
    ["sw-compare", "--dim", 4, "--seed", 1],
])
def test_determinism(tmp_path, argv):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(argv + ["--out", a]) == 0
    assert run(argv + ["--out", b]) == 0
    fa, fb = read_all(a), read_all(b)
    assert fa.keys() == fb.keys()
    for name in fa:
        if name == "manifest.json":
            ma, mb = json.loads(fa[name]), json.loads(fb[name])
            ma.pop("output_dir"), mb.pop("output_dir")
            assert ma == mb
        else:
            assert fa[name] == fb[name], name


def test_flow_file_round_trip(tmp_path):
    m = random_complex_matrix(5, 11)
    path = tmp_path / "m.txt"
    path.write_text(format_matrix(m))
    assert run(["flow-file", path, "--truncate-frac", 0, "--out", tmp_path / "o"]) == 0
    assert json.loads((tmp_path / "o" / "summary.json").read_text())["delta"] < 1e-5


def test_flow_file_identity(tmp_path):
    path = tmp_path / "eye.txt"
    path.write_text(format_matrix(np.eye(4)))
    assert run(["flow-file", path, "--out", tmp_path / "o"]) == 0
    s = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert s["delta"] == 0 and s["stop_reason"] == "diagonal" and s["steps"] == 0


def test_malformed_file_leaves_no_outputs(tmp_path, capsys):
    path = tmp_path / "bad.txt"
    path.write_text("2\n1 0\n0 x\n0 0\n0 0\n")
    out = tmp_path / "o"
    assert run(["flow-file", path, "--out", out]) == 1
    assert not out.exists()
    assert "bad.txt:3:3:" in capsys.readouterr().err
    assert run(["flow-file", tmp_path / "missing.txt", "--out", out]) == 1
    assert not out.exists()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numerical_failure_exit_code(tmp_path):
    path = tmp_path / "huge.txt"
    path.write_text("2\n0 0\n1e200 0\n1e200 0\n1 0\n")
    out = tmp_path / "o"
    assert run(["flow-file", path, "--generator", "wegner", "--out", out]) == 2
    assert not out.exists()


@pytest.mark.parametrize("argv", [
    ["random", "--dim", 0],
    ["random", "--generator", "canonical"],
    ["random", "--dl", -1],
    ["single-mode", "--g1", -1],
    ["single-mode", "--g1", 0, "--g2", 0],
    ["scattering", "--j-cutoff", 0],
    ["disordered", "--realizations", 0],
    ["disordered", "--mode", "flow", "--generator", "wegner"],
    ["sw-compare", "--xi", 0],
    ["nosuchcommand"],
])
def test_input_errors_exit_one(tmp_path, argv):
    out = tmp_path / "o"
    assert run(argv + ["--out", out]) == 1
    assert not out.exists()


def test_single_mode_outputs(tmp_path):
    out = tmp_path / "s"
    assert run(["single-mode", "--g1", 1, "--g2", 3, "--n0", 0.2, "--out", out]) == 0
    s = json.loads((out / "summary.json").read_text())
    assert s["steady_density"] == pytest.approx(0.75, abs=1e-10)
    assert s["delta"] < 1e-8 and s["density_max_deviation"] < 1e-8
    first = (out / "density.csv").read_text().splitlines()[1].split(",")
    assert float(first[0]) == 0 and float(first[1]) == pytest.approx(0.2) and float(first[2]) == pytest.approx(0.2)


def test_single_mode_pure_loss_wegner_curve(tmp_path):
    out = tmp_path / "s"
    assert run(["single-mode", "--g1", 1, "--g2", 0, "--generator", "wegner", "--lmax", 5, "--out", out]) == 0
    s = json.loads((out / "summary.json").read_text())
    assert s["closed_form_max_deviation"] < 1e-8
    rows = (out / "flow.csv").read_text().splitlines()
    assert rows[0] == "ell,alpha,mu1,mu2,alpha_exact,mu1_exact,mu2_exact"


def test_scattering_outputs(tmp_path):
    out = tmp_path / "sc"
    assert run(["scattering", "--gamma", 0, "--j-cutoff", 3, "--out", out]) == 0
    spec = (out / "spectrum.csv").read_text().splitlines()[1:]
    assert all(float(r.split(",")[1]) == 0 for r in spec)
    assert run(["scattering", "--j-cutoff", 5, "--out", tmp_path / "g"]) == 0
    sec = json.loads((tmp_path / "g" / "secular.json").read_text())
    assert sec["branch"] == "strong"
    s = json.loads((tmp_path / "g" / "summary.json").read_text())
    assert s["delta"] < 1e-8


def test_disordered_modes(tmp_path):
    assert run(["disordered", "--sites", 5, "--realizations", 1, "--out", tmp_path / "e"]) == 0
    scan = json.loads((tmp_path / "e" / "scan.json").read_text())
    assert len(scan["per_size"]) == 1
    assert len((tmp_path / "e" / "spectra.csv").read_text().splitlines()) == 6
    assert run(["disordered", "--sites", 6, "--realizations", 2, "--gamma", 2, "--mode", "flow",
                "--out", tmp_path / "f"]) == 0
    s = json.loads((tmp_path / "f" / "summary.json").read_text())
    assert s["6"]["max_mean_im_error"] < 1e-2


def test_env_var_sets_default_output(tmp_path, monkeypatch):
    monkeypatch.setenv("DISSFLOW_OUT", str(tmp_path / "envout"))
    assert run(["sw-compare", "--dim", 3]) == 0
    assert (tmp_path / "envout" / "sw.json").exists()


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "dissflow.cli", "random", "--dim", "2", "--lmax", "1",
                           "--out", str(tmp_path / "x")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "delta=" in proc.stdout
