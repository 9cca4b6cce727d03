import os
import subprocess
import sys

import pytest

from jacobi_entropy import cli
from jacobi_entropy import config as cfgmod
from jacobi_entropy.errors import ConfigError
from jacobi_entropy.records import csv_text, format_value, kv_text, read_csv

HARMONIC = """
system:
  n: 3
  E: 2.0
  Vc: "0.5*(x1^2 + x2^2 + x3^2)"
  Vtilde: "1 + x1^2"
  lam: 1e-3
ball:
  r: 0.05
  samples: 16
  seed: 7
solver:
  h: 0.005
  radius: 0.05
verify:
  samples: 16
  lambdas: [1e-2, 1e-3]
"""


def _write(tmp_path, text, name="run.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def _run(tmp_path, command, text=HARMONIC, out="out", extra=()):
    cfg = _write(tmp_path, text)
    return cli.run([command, "--config", cfg, "--out", str(tmp_path / out), *extra])


# -- config -------------------------------------------------------------------


def test_round_trip():
    cfg = cfgmod.loads(HARMONIC).validate()
    assert cfg.system.lam == 1e-3 and cfg.verify.lambdas == [1e-2, 1e-3]
    again = cfgmod.loads(cfg.dump()).validate()
    assert again == cfg


def test_defaults_fill_missing_sections():
    cfg = cfgmod.loads("system: {n: 2, E: 1, Vc: 'x1^2 + x2^2'}").validate()
    assert cfg.system.E == 1.0 and isinstance(cfg.system.E, float)
    assert cfg.ball.samples == 10000 and cfg.curvature.normalization == "oracle"


@pytest.mark.parametrize("text", [
    "system: {n: 1, E: 1, Vc: 'x1'}",
    "system: {n: 2, Vc: 'x1'}",
    "system: {n: 2, E: 1}",
    "system: {n: 2, E: 1, Vc: 'x1', colour: red}",
    "system: {n: 2, E: 1, Vc: 'x1'}\nextra: {}",
    "system: {n: 2, E: 1, Vc: 'x1'}\nball: {r: -1}",
    "system: {n: 2, E: 1, Vc: 'x1'}\nball: {samples: 0}",
    "system: {n: 2, E: 1, Vc: 'x1'}\nverify: {samples: 3}",
    "system: {n: 2, E: 1, Vc: 'x1'}\ncurvature: {normalization: other}",
    "system: {n: 2, E: 1, Vc: 'x1'}\ncritical: {seeds: [[0, 0, 0]]}",
    "system: {n: 2, E: abc, Vc: 'x1'}",
    "system: [1, 2]",
    "system: {n: 2, E: 1, Vc: 'x1'\n",
])
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        cfgmod.loads(text).validate()


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        cfgmod.load(tmp_path / "nope.yaml")


def test_records_format():
    assert format_value(0.1) == "0.1" and format_value(None) == "" and format_value(True) == "true"
    assert csv_text(["a", "b"], [[1, 2.5]]) == "# schema=1\na,b\n1,2.5\n"
    assert kv_text({"x": 1e-3}) == "x = 0.001\n"


# -- commands -----------------------------------------------------------------


def test_curvature_command(tmp_path, capsys):
    assert _run(tmp_path, "curvature") == 0
    cols, rows = read_csv(tmp_path / "out" / "curvature.csv")
    row = dict(zip(cols, rows[0]))
    # the perturbed potential enters: E - V(0) = 2 - lam
    assert float(row["E_minus_V"]) == pytest.approx(1.999)
    text = "system: {n: 3, E: 2.0, Vc: '0.5*(x1^2 + x2^2 + x3^2)'}\ncurvature: {points: [[0, 0, 0]]}"
    assert _run(tmp_path, "curvature", text, out="b") == 0
    cols, rows = read_csv(tmp_path / "b" / "curvature.csv")
    row = dict(zip(cols, rows[0]))
    assert float(row["scalar_eq7"]) == 3.0 and float(row["scalar_eq9"]) == 1.5
    assert float(row["scalar_oracle"]) == pytest.approx(0.75)
    assert "scalar_eq7 = 3.0" in capsys.readouterr().out


def test_entropy_and_perturb_commands(tmp_path):
    assert _run(tmp_path, "entropy") == 0
    cols, rows = read_csv(tmp_path / "out" / "entropy.csv")
    assert cols == ["n", "E", "r", "R_p", "R_p_source", "vol_exp", "vol_mc", "vol_mc_stderr",
                    "S_exp", "S_mc", "samples", "seed"]
    assert rows[0][cols.index("seed")] == "7"
    assert _run(tmp_path, "perturb", extra=("--normalization", "literal")) == 0
    kv = (tmp_path / "out" / "perturb.txt").read_text()
    assert "normalization = literal" in kv and "special_energy = 6.0" in kv


def test_solve_and_verify_commands(tmp_path):
    assert _run(tmp_path, "solve") == 0
    for name in ("solution.csv", "solution.bin", "solve.txt"):
        assert (tmp_path / "out" / name).exists()
    assert _run(tmp_path, "verify") == 0
    cols, rows = read_csv(tmp_path / "out" / "verify.csv")
    assert cols == ["lambda", "delta_S", "vol", "vol_stderr", "vol0", "slope"]
    # the zero solution leaves the entropy unchanged
    assert all(float(r[1]) == 0.0 for r in rows)


@pytest.mark.parametrize("command", ["curvature", "entropy", "perturb", "solve", "verify"])
def test_determinism(tmp_path, command):
    assert _run(tmp_path, command, out="a") == 0
    assert _run(tmp_path, command, out="b") == 0
    a, b = sorted(os.listdir(tmp_path / "a")), sorted(os.listdir(tmp_path / "b"))
    assert a == b and a
    for name in a:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_override_changes_output(tmp_path):
    text = HARMONIC.replace('Vc: "0.5*(x1^2 + x2^2 + x3^2)"', 'Vc: "0.5*(x1^2 + 2*x2^2 + x3^2) + 0.1*x1^3"')
    assert _run(tmp_path, "entropy", text, out="a") == 0
    assert _run(tmp_path, "entropy", text, out="b", extra=("--seed", "8")) == 0
    assert (tmp_path / "a" / "entropy.csv").read_bytes() != (tmp_path / "b" / "entropy.csv").read_bytes()


def test_exit_codes(tmp_path, capsys):
    assert cli.run(["curvature"]) == 1
    assert cli.run(["bogus", "--config", "x"]) == 1
    assert cli.run(["curvature", "--config", str(tmp_path / "missing.yaml")]) == 1
    assert _run(tmp_path, "entropy", "system: {n: 2, E: 1, Vc: 'x1', colour: 1}") == 1
    assert _run(tmp_path, "perturb", "system: {n: 2, E: 1, Vc: 'x1^2 + x2^2'}") == 1
    assert _run(tmp_path, "entropy", "system: {n: 2, E: 1, Vc: 'x1 +* x2'}") == 1
    # turning point at the critical point
    assert _run(tmp_path, "entropy", "system: {n: 2, E: -1, Vc: 'x1^2 + x2^2'}") == 2
    # degenerate critical point
    err = capsys.readouterr().err
    assert _run(tmp_path, "entropy", "system: {n: 2, E: 1, Vc: 'x1^4 + x2^2'}") == 2
    assert "eigenvalue" in capsys.readouterr().err
    # radius beyond the admissible cap
    assert _run(tmp_path, "entropy", "system: {n: 2, E: 2, Vc: '0.5*(x1^2 + x2^2)'}\nball: {r: 2.0}") == 2
    # no critical point anywhere
    assert _run(tmp_path, "entropy", "system: {n: 2, E: 1, Vc: 'x1'}") == 3
    assert err is not None


def test_no_partial_output_on_failure(tmp_path):
    text = "system: {n: 2, E: 2, Vc: '0.5*(x1^2 + x2^2)'}\nball: {r: 2.0, samples: 4}"
    assert _run(tmp_path, "entropy", text) == 2
    out = tmp_path / "out"
    assert not any(name.endswith((".csv", ".txt")) for name in os.listdir(out))


def test_console_entry_point(tmp_path):
    cfg = _write(tmp_path, "system: {n: 2, E: 1, Vc: 'x1^2 + x2^2'}")
    res = subprocess.run([sys.executable, "-m", "jacobi_entropy.cli", "curvature", "--config", cfg,
                          "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "o" / "curvature.csv").exists()
    res = subprocess.run([sys.executable, "-m", "jacobi_entropy.cli"], capture_output=True, text=True)
    assert res.returncode == 1 and "error" in res.stderr
