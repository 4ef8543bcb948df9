import csv
import json
from pathlib import Path

import numpy as np
import pytest

from tclgen.cli import EXIT_INVALID, EXIT_NUMERICAL, EXIT_OK, halving_ratio, main, strip_timings

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

QUBIT_BATH = """
[bath]
kind = "discrete"
modes = [
    { frequency = 0.7, coupling = 0.5, kind = "qubit" },
    { frequency = 1.3, coupling = 0.4, kind = "qubit" },
    { frequency = 2.1, coupling = 0.3, kind = "qubit" },
]
"""

OHMIC_BATH = """
[bath]
kind = "ohmic"
eta = 0.1
omega_c = 5.0
"""


def _config(tmp_path, name, bath, order=2, coupling=1.0, n_steps=40, extra=""):
    text = f"""
[system]
d = 2
H_S = [[0.5, 0.0], [0.0, -0.5]]
S = [[0.0, 1.0], [1.0, 0.0]]
{bath}
[method]
tcl_order = {order}
coupling = {coupling}

[method.grid]
dt = 0.01
n_steps = {n_steps}

[initial_state]
rho = [[0.75, 0.25], [0.25, 0.25]]
{extra}
"""
    path = tmp_path / f"{name}.toml"
    path.write_text(text)
    return path


def _read_csv(path):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    return rows[0], np.array(rows[1:], dtype=float)


def _run(*argv):
    return main(["--quiet", *map(str, argv)])


@pytest.mark.parametrize("n, count", [(1, 1), (3, 4), (4, 8)])
def test_diagrams_file(n, count, tmp_path):
    assert _run("--output-dir", tmp_path, "diagrams", n) == EXIT_OK
    report = json.loads((tmp_path / f"diagrams_{n}.json").read_text(encoding="utf-8"))
    assert report["count"] == count
    if n == 3:
        assert [c["sign"] for c in report["compositions"]] == ["+", "-", "-", "+"]
        assert report["compositions"][1]["term"] == "Ṁ(2)·M(1)"


def test_diagrams_stdout(capsys):
    assert main(["diagrams", "3"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["count"] == 4


def test_diagrams_verify(tmp_path):
    assert _run("--output-dir", tmp_path, "--seed", 7, "diagrams", 6, "--verify") == EXIT_OK
    v = json.loads((tmp_path / "diagrams_6.json").read_text())["verification"]
    assert v["seed"] == 7 and v["max_relative_difference"] < 1e-12


def test_diagrams_out_of_range():
    assert _run("diagrams", 13) == EXIT_INVALID


def test_argument_errors_exit_invalid(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["simulate"])
    assert exc.value.code == EXIT_INVALID
    assert _run("simulate", tmp_path / "missing.toml") == EXIT_INVALID


def test_invalid_config_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text("[system]\nd = 1\n")
    assert _run("simulate", path) == EXIT_INVALID
    err = capsys.readouterr().err
    assert "system.d" in err and "bath.kind" in err and "[initial_state]" in err


def test_zero_coupling_keeps_populations(tmp_path):
    cfg = _config(tmp_path, "free", OHMIC_BATH, coupling=0.0)
    assert _run("--output-dir", tmp_path, "simulate", cfg) == EXIT_OK
    header, data = _read_csv(tmp_path / "free.csv")
    pops = data[:, [header.index("re_rho_00"), header.index("re_rho_11")]]
    np.testing.assert_allclose(pops, np.broadcast_to([0.75, 0.25], pops.shape), atol=1e-13)
    np.testing.assert_allclose(data[:, header.index("purity")], 0.75**2 + 0.25**2 + 2 * 0.25**2, atol=1e-13)


def test_simulate_trace_and_order_difference(tmp_path):
    for order in (2, 4):
        cfg = _config(tmp_path, f"sb{order}", OHMIC_BATH, order=order, coupling=2.0)
        assert _run("--output-dir", tmp_path, "simulate", cfg) == EXIT_OK
    h2, d2 = _read_csv(tmp_path / "sb2.csv")
    h4, d4 = _read_csv(tmp_path / "sb4.csv")
    assert h2 == h4
    np.testing.assert_allclose(d2[:, h2.index("trace")], 1.0, atol=1e-12)
    assert np.max(np.abs(d2 - d4)) > 1e-8
    report = json.loads((tmp_path / "sb4_report.json").read_text())
    assert report["diagnostics"]["trace_drift"] < 1e-10
    assert set(report["diagnostics"]["generator_norms"]) == {"1", "2", "3", "4"}


def test_simulate_resummed(tmp_path):
    cfg = _config(tmp_path, "rs", OHMIC_BATH, order=4, extra="[method.resummation]\nenabled = true\n")
    assert _run("--output-dir", tmp_path, "simulate", cfg) == EXIT_OK
    diag = json.loads((tmp_path / "rs_report.json").read_text())["diagnostics"]["resummation"]
    assert diag["lowest_order"] == 2 and diag["initial"] == "matched"


def test_oracle_compare_exit_codes(tmp_path):
    ok = _config(tmp_path, "sweep", QUBIT_BATH, order=4, n_steps=149, extra="[oracle]\nlambdas = [0.1, 0.05]\n")
    assert _run("--output-dir", tmp_path, "oracle-compare", ok) == EXIT_OK
    report = json.loads((tmp_path / "sweep_report.json").read_text())
    assert report["pass"] is True
    r = report["halving_ratios"][0]
    assert 8 <= r["tcl2"]["ratio"] <= 32 and 32 <= r["tcl4"]["ratio"] <= 128
    bad = _config(
        tmp_path, "strict", QUBIT_BATH, order=4, n_steps=149,
        extra="[oracle]\nlambdas = [0.1, 0.05]\nwindow_tcl2 = [1000.0, 2000.0]\n",
    )
    assert _run("--output-dir", tmp_path, "oracle-compare", bad) == EXIT_NUMERICAL
    assert _run("oracle-compare", _config(tmp_path, "ohm", OHMIC_BATH)) == EXIT_INVALID


def test_oracle_compare_without_coupling(tmp_path):
    cfg = _config(tmp_path, "free", QUBIT_BATH, order=4, extra="[oracle]\nlambdas = [0.0]\n")
    assert _run("--output-dir", tmp_path, "oracle-compare", cfg) == EXIT_OK
    (entry,) = json.loads((tmp_path / "free_report.json").read_text())["per_lambda"]
    assert entry["max_distance_tcl2"] < 1e-12 and entry["max_distance_tcl4"] < 1e-12


def test_halving_ratio_for_uneven_steps():
    assert halving_ratio(16.0, 1.0, 0.2, 0.1) == pytest.approx(16.0)
    assert halving_ratio(81.0, 1.0, 0.3, 0.1) == pytest.approx(81.0 ** (np.log(2) / np.log(3)))


def test_correlation_of_identities(tmp_path):
    extra = """
[correlation]
A = [[1.0, 0.0], [0.0, 1.0]]
B = [[1.0, 0.0], [0.0, 1.0]]
C = [[1.0, 0.0], [0.0, 1.0]]
times = [[0.2, 0.1]]
"""
    cfg = _config(tmp_path, "ident", QUBIT_BATH, extra=extra)
    assert _run("--output-dir", tmp_path, "correlation", cfg) == EXIT_OK
    _, data = _read_csv(tmp_path / "ident.csv")
    np.testing.assert_allclose(data[:, 1], 1.0, atol=1e-12)
    np.testing.assert_allclose(data[:, 2], 0.0, atol=1e-12)
    report = json.loads((tmp_path / "ident_report.json").read_text())
    assert report["three_point_max_gap"] < 1e-12


def test_correlation_gap_vanishes_without_coupling(tmp_path):
    extra = """
[correlation]
A = [[0.0, 1.0], [1.0, 0.0]]
B = [[1.0, 0.0], [0.0, -1.0]]
C = [[0.0, 1.0], [1.0, 0.0]]
times = [[0.3, 0.1], [0.4, 0.2]]
"""
    cfg = _config(tmp_path, "free", QUBIT_BATH, coupling=0.0, extra=extra)
    assert _run("--output-dir", tmp_path, "correlation", cfg) == EXIT_OK
    report = json.loads((tmp_path / "free_report.json").read_text())
    assert report["three_point_max_gap"] < 1e-13
    assert report["two_point_max_gap"] < 1e-13


def test_rerun_is_byte_identical(tmp_path):
    cfg = CONFIGS / "spin_boson_tcl2.toml"
    outs = []
    for run in ("a", "b"):
        out = tmp_path / run
        out.mkdir()
        assert _run("--output-dir", out, "simulate", cfg) == EXIT_OK
        report = json.loads((out / "spin_boson_tcl2_report.json").read_text())
        outs.append(((out / "spin_boson_tcl2.csv").read_bytes(), json.dumps(strip_timings(report), sort_keys=True)))
    assert outs[0] == outs[1]
    assert b"\r\n" in outs[0][0]
