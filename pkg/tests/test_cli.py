import csv
import json
import math
import subprocess
import sys

import pytest

from ctrlcost import cli


def _write(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


FULL = """
mantissa_bits = 192
[problem]
length = "pi"
n_modes = 20
[observation]
intervals = [[0.0, 3.141592653589793]]
[params]
T = [1.0, 0.5, 0.25]
c = 4.0
"""


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_full_observation_cost_curve(tmp_path):
    cfg = _write(tmp_path, FULL)
    assert cli.main(["cost-curve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rows = _rows(tmp_path / "o" / "cost-curve.csv")
    assert [float(r["T"]) for r in rows] == [1.0, 0.5, 0.25]
    for r in rows:
        assert float(r["cost"]) == pytest.approx(1 / math.sqrt(float(r["T"])), rel=1e-12)
        assert int(r["mantissa_bits"]) == 192


def test_csv_is_reproducible_and_manifest_embeds_config(tmp_path):
    cfg = _write(tmp_path, FULL)
    for out in ("a", "b"):
        assert cli.main(["cost-curve", "--config", str(cfg), "--out", str(tmp_path / out), "--seed", "7"]) == 0
    first = (tmp_path / "a" / "cost-curve.csv").read_bytes()
    assert first == (tmp_path / "b" / "cost-curve.csv").read_bytes()
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["command"] == "cost-curve"
    assert manifest["seed"] == 7
    assert manifest["mantissa_bits"] == 192
    assert manifest["config"]["params"]["c"] == 4.0
    assert manifest["config"]["observation"]["intervals"] == [[0.0, math.pi]]
    assert manifest["rows"] == 3


def test_precision_flag_overrides_config(tmp_path):
    cfg = _write(tmp_path, FULL)
    assert cli.main(["cost-curve", "--config", str(cfg), "--out", str(tmp_path), "--precision", "128"]) == 0
    assert {r["mantissa_bits"] for r in _rows(tmp_path / "cost-curve.csv")} == {"128"}


def test_window_build_residual(tmp_path):
    cfg = _write(tmp_path, """
[params]
T = 1.0
window = {first = 1, last = 12}
""")
    assert cli.main(["window-build", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["summary"]["residual"] <= 1e-8
    rows = _rows(tmp_path / "window-build.csv")
    assert {int(r["n"]) for r in rows} == set(range(1, 13))


def test_eigen_command(tmp_path):
    cfg = _write(tmp_path, """
[problem]
length = "pi"
n_modes = 5
""")
    assert cli.main(["eigen", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "eigen.csv")
    assert [float(r["eigenvalue"]) for r in rows] == pytest.approx([1, 4, 9, 16, 25], rel=1e-12)


def test_overlapping_set_is_rejected(tmp_path, capsys):
    cfg = _write(tmp_path, """
[problem]
length = 1.0
n_modes = 20
[observation]
intervals = [[0.2, 0.5], [0.4, 0.9]]
[params]
T = [0.5]
c = 4.0
""")
    assert cli.main(["cost-curve", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "invalid input" in err and "observation.intervals" in err
    assert not (tmp_path / "cost-curve.csv").exists()


@pytest.mark.parametrize("body, field", [
    ('[problem]\nlength = -1.0\nn_modes = 4\n', "problem.length"),
    ('[problem]\nlength = 1.0\np = {polynomial = [1.0, -3.0]}\nn_modes = 4\n', "problem.p"),
    ('[problem]\nlength = "tau"\nn_modes = 4\n', "problem.length"),
    ('[problem]\nlength = 1.0\nn_modes = 0\n', "problem.n_modes"),
])
def test_invalid_problem_fields(tmp_path, capsys, body, field):
    cfg = _write(tmp_path, body)
    assert cli.main(["eigen", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert f"invalid input: {field}" in capsys.readouterr().err


def test_config_command_mismatch(tmp_path, capsys):
    cfg = _write(tmp_path, 'command = "eigen"\n' + FULL)
    assert cli.main(["cost-curve", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "command" in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    assert cli.main(["eigen", "--config", str(tmp_path / "nope.toml"), "--out", str(tmp_path)]) == 2


def test_degenerate_observation_exits_numeric(tmp_path, capsys):
    cfg = _write(tmp_path, """
[problem]
length = 1.0
n_modes = 10
[observation]
boundary = 1.0
order = 0
[params]
T = [0.5]
c = 4.0
""")
    assert cli.main(["cost-curve", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert "numerical failure (DegenerateGramianError)" in capsys.readouterr().err


def test_product_check_command(tmp_path):
    cfg = _write(tmp_path, """
[problem]
length = "pi"
n_modes = 8
[observation]
intervals = [[0.3, 3.141592653589793]]
[params]
T = [1.0]
window = [1, 2, 3]
companion = [0.0, 1.5, 4.0]
""")
    assert cli.main(["product-check", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["summary"]["max_rel_diff"] <= 1e-10


def test_module_entry_point(tmp_path):
    cfg = _write(tmp_path, "[problem]\nlength = 1.0\nn_modes = 3\n")
    proc = subprocess.run([sys.executable, "-m", "ctrlcost", "eigen", "--config", str(cfg), "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "eigen.csv").read_text().splitlines()[0] == "n,eigenvalue,frequency"
