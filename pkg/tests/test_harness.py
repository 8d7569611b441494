import json
from pathlib import Path

import pytest

from crystal_tdl.cli import main
from crystal_tdl.config import parse_config
from crystal_tdl.harness import ExperimentError, reevaluate, run
from crystal_tdl.report import CSV_COLUMNS

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

FAST_KS = """
[experiment]
name = ks-fixedpoint
seed = 5
[model]
cutoff = 20.0
kgrid = 4
n_modes = 8
"""


def test_madelung_run_writes_reports(tmp_path):
    rep = run(CONFIGS / "madelung.ini", out_dir=tmp_path)
    assert rep.passed
    data = json.loads((tmp_path / "madelung.json").read_text())
    assert data["provenance"]["config_hash"] == parse_config((CONFIGS / "madelung.ini").read_text()).sha256
    assert data["provenance"]["seed"] == 0
    header = (tmp_path / "madelung.csv").read_text().splitlines()[0].split(",")
    assert header[: len(CSV_COLUMNS)] == list(CSV_COLUMNS)
    assert (tmp_path / "madelung.timing.json").exists()


def test_identical_config_and_seed_give_identical_json(tmp_path):
    run(FAST_KS, out_dir=tmp_path / "a")
    run(FAST_KS, out_dir=tmp_path / "b")
    a = (tmp_path / "a" / "ks-fixedpoint.json").read_bytes()
    b = (tmp_path / "b" / "ks-fixedpoint.json").read_bytes()
    assert a == b
    # a different seed changes the provenance, hence the bytes
    run(FAST_KS, out_dir=tmp_path / "c", seed=6)
    assert (tmp_path / "c" / "ks-fixedpoint.json").read_bytes() != a


def test_report_checks_recomputable_from_json(tmp_path):
    rep = run(FAST_KS, out_dir=tmp_path)
    again = reevaluate((tmp_path / "ks-fixedpoint.json").read_text())
    assert [c["passed"] for c in again] == [c["passed"] for c in rep.evaluate()]
    assert all(c["passed"] for c in again)


def test_trivial_deformation_sits_at_the_floor():
    cfg = "[experiment]\nname = tfw-scaling\n[model]\namplitude = 0.0\n[sweep]\neps = 1/2, 1/3, 1/4\n"
    rep = run(cfg, out_dir=False)
    assert rep.passed
    assert max(r.value for r in rep.records) < 1e-8


def test_solver_failure_names_the_sweep_point(tmp_path):
    cfg = "[experiment]\nname = rhf-supercell\n[scf]\nmax_iter = 1\n[sweep]\nL = 1, 2, 3\n"
    with pytest.raises(ExperimentError) as info:
        run(cfg, out_dir=tmp_path / "out", workers=1)
    assert info.value.sweep_point.startswith("reference L=")
    assert "ConvergenceError" in str(info.value)
    assert not (tmp_path / "out").exists()


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["run", str(CONFIGS / "madelung.ini"), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "madelung: passed" in out
    bad = tmp_path / "bad.ini"
    bad.write_text("[experiment]\nname = madelung\n[tolerances]\ntol = -1\n")
    assert main(["run", str(bad), "--out", str(tmp_path / "bad")]) == 2
    assert not (tmp_path / "bad").exists()
    assert "must be positive" in capsys.readouterr().err
    # tolerances below rounding cannot be met
    failing = tmp_path / "fail.ini"
    failing.write_text("[experiment]\nname = madelung\n[tolerances]\neta_tol = 1e-30\nscaling_tol = 1e-30\n")
    assert main(["run", str(failing), "--out", str(tmp_path / "fail")]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_cli_validate_and_experiments(capsys):
    assert main(["validate", str(CONFIGS / "ks-cb.ini"), "--show"]) == 0
    out = capsys.readouterr().out
    assert "valid ks-cb configuration" in out and "[sweep]" in out
    assert main(["experiments"]) == 0
    assert "tfw-thermo" in capsys.readouterr().out


def test_cli_fit(tmp_path, capsys):
    p = tmp_path / "r.csv"
    p.write_text("parameter,value,residual,time_s\n1,0.5,0,0\n2,0.0625,0,0\n4,0.0078125,0,0\n")
    assert main(["fit", str(p), "--model", "alg"]) == 0
    fit = json.loads(capsys.readouterr().out)
    assert fit["exponent"] == pytest.approx(-3.0, abs=1e-12)
    assert fit["r_squared"] == pytest.approx(1.0)
    assert main(["fit", str(tmp_path / "missing.csv"), "--model", "exp"]) == 2


def _fails_at_three(x):
    if x == 3:
        raise ValueError("boom")
    return x


@pytest.mark.parametrize("workers", [1, 2])
def test_sweep_failure_carries_its_label(workers):
    from crystal_tdl.sweep import run_points

    assert [r for r, _ in run_points(_fails_at_three, [1, 2], workers)] == [1, 2]
    with pytest.raises(ValueError) as info:
        run_points(_fails_at_three, [1, 2, 3, 4], workers, ["a", "b", "c", "d"])
    assert info.value.sweep_point == "c"
