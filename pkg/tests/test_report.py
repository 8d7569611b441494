import json
from pathlib import Path

import pytest

from crystal_tdl.report import CSV_COLUMNS, Check, ConvergenceReport, FitSpec, Record, emit, read_csv

GOLDEN = Path(__file__).parent / "golden"


def synthetic_report():
    records = [
        Record(4.0, 0.25, 1e-11, 0.5, {"gap": 0.9, "J": -1.5}),
        Record(2.0, 0.5, 2e-11, 0.25, {"gap": 0.8, "J": -1.25}),
        Record(8.0, 0.125, 3e-11, 1.0, {"gap": 0.95, "J": -1.625}),
    ]
    checks = [
        Check("rate", "fit:main:exponent", "in", (-1.1, -0.9)),
        Check("quality", "fit:main:r_squared", ">", 0.99),
        Check("monotone", "records:monotone:value", ">=", 1.0),
        Check("gap open", "records:min:gap", ">", 0.5),
        Check("metric", "metric:spread", "<", 1e-3),
    ]
    rep = ConvergenceReport("synthetic", records, [FitSpec("main", "algebraic")], checks,
                            {"config_hash": "0" * 64, "seed": 0, "grid_sizes": {"unit": [26]}})
    return rep.with_metrics({"spread": 1e-4})


def test_records_sorted_and_checks_pass():
    rep = synthetic_report()
    assert [r.parameter for r in rep.records] == [2.0, 4.0, 8.0]
    assert rep.passed
    assert rep.fits()["main"].exponent == pytest.approx(-1.0, abs=1e-12)


def test_csv_matches_golden():
    text = synthetic_report().to_csv()
    assert text == (GOLDEN / "synthetic.csv").read_text()
    header = text.splitlines()[0].split(",")
    assert tuple(header[:4]) == CSV_COLUMNS
    assert len(text.splitlines()) == 1 + 3


def test_json_matches_golden():
    assert synthetic_report().to_json() == (GOLDEN / "synthetic.json").read_text()


def test_json_round_trip():
    rep = synthetic_report()
    back = ConvergenceReport.from_json(rep.to_json())
    assert back.to_json() == rep.to_json()
    assert back.records == rep.records


def test_json_has_no_timing():
    d = json.loads(synthetic_report().to_json())
    assert all("time_s" not in r for r in d["records"])


def test_reevaluation_reproduces_pass_fail():
    rep = synthetic_report()
    d = json.loads(rep.to_json())
    d["metrics"]["spread"] = 1.0
    back = ConvergenceReport.from_dict(d)
    results = {c["name"]: c["passed"] for c in back.evaluate()}
    assert not results["metric"] and results["rate"]
    assert not back.passed


def test_monotone_band():
    rep = synthetic_report()
    rep.records[1].value = 0.54  # within the 10% band of 0.5
    assert rep.quantity("records:monotone:value") == 1.0
    rep.records[1].value = 0.6
    assert rep.quantity("records:monotone:value") == 0.0
    assert rep.quantity("records:increasing:gap") == 1.0


def test_emit_writes_json_csv_and_timing(tmp_path):
    rep = synthetic_report()
    paths = emit(rep, tmp_path)
    names = sorted(p.name for p in paths)
    assert names == ["synthetic.csv", "synthetic.json", "synthetic.timing.json"]
    xs, ys = read_csv(tmp_path / "synthetic.csv")
    assert xs == [2.0, 4.0, 8.0] and ys == [0.5, 0.25, 0.125]
    timing = json.loads((tmp_path / "synthetic.timing.json").read_text())
    assert timing["total_s"] == pytest.approx(1.75)


def test_failed_fit_fails_check():
    rep = synthetic_report()
    rep.records[0].value = 0.0
    assert rep.fits()["main"] is None
    assert not rep.passed
