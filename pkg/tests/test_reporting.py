import json
import math

import numpy as np
import pandas as pd
import pytest

from src.errors import LabError
from src.evolution import AmplitudeSeries
from src.reporting import format_float, summary_table, to_json, write_report
from src.schemas import CheckResult, ExperimentReport


def _series(label, samples=5):
    t = np.linspace(0.0, 1.0, samples)
    return AmplitudeSeries(t, np.exp(-1j * t - 0.1 * t), label)


def _report(series=(), **results):
    return ExperimentReport(command="speedup", config_echo={"grid": {"n_modes": 9, "dk": 0.25}},
                            results=dict(results), series=list(series))


def test_floats_keep_seventeen_digits():
    assert format_float(0.1) == "0.10000000000000001"
    assert format_float(1.0) == "1.0"
    assert format_float(1e-20) == "9.9999999999999995e-21"
    assert float(format_float(math.pi)) == math.pi
    assert format_float(math.inf) == "null"
    assert format_float(math.nan) == "null"


def test_json_keys_are_sorted_and_numpy_values_converted():
    text = to_json({"b": np.float64(0.5), "a": [np.int64(2), True, None], "c": np.array([1.5])})
    assert text.index('"a"') < text.index('"b"') < text.index('"c"')
    assert json.loads(text) == {"a": [2, True, None], "b": 0.5, "c": [1.5]}
    assert to_json({}) == "{}" and to_json([]) == "[]"


def test_empty_results_write_only_the_report(tmp_path):
    written = write_report(_report(), tmp_path / "run")
    assert [path.name for path in written] == ["report.json"]
    assert sorted(path.name for path in (tmp_path / "run").iterdir()) == ["report.json"]


def test_one_csv_per_series(tmp_path):
    written = write_report(_report([_series("V_v0.5"), _series("A_p0.5")]), tmp_path)
    assert sorted(path.name for path in written) == ["A_p0.5.csv", "V_v0.5.csv", "report.json"]
    raw = (tmp_path / "V_v0.5.csv").read_bytes()
    assert raw.startswith(b"t,re,im,abs2\n")
    assert b"\r" not in raw
    frame = pd.read_csv(tmp_path / "V_v0.5.csv")
    np.testing.assert_allclose(frame["abs2"], frame["re"] ** 2 + frame["im"] ** 2, rtol=1e-14)


def test_report_json_content(tmp_path):
    report = _report(ratio=math.inf, rows=[{"p": 0.5}])
    report.checks["speedup_v0.5"] = CheckResult(value=1e-13, tolerance=1e-10, passed=True)
    write_report(report, tmp_path)
    payload = json.loads((tmp_path / "report.json").read_text(encoding="utf-8"))
    assert payload["results"]["ratio"] is None
    assert payload["checks"]["speedup_v0.5"]["passed"] is True
    assert "series" not in payload
    assert list(payload) == sorted(payload)


def test_duplicate_series_labels_are_refused(tmp_path):
    with pytest.raises(LabError, match="duplicate"):
        write_report(_report([_series("V_v0.5"), _series("V_v0.5")]), tmp_path)


def test_rewrite_is_byte_identical(tmp_path):
    report = _report([_series("W_v0.2")], value=1 / 3)
    write_report(report, tmp_path / "one")
    write_report(report, tmp_path / "two")
    for name in ("report.json", "W_v0.2.csv"):
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()


def test_summary_table_lists_checks_and_fits():
    report = _report(fit_summary=[{"label": "A_p0", "p_or_v": 0.0, "m_eff": 1.004, "gamma_rate": 0.0108,
                                   "t1": 10.0, "t2": 270.0, "r_squared": 0.9999}])
    report.checks["golden_rule"] = CheckResult(value=0.02, tolerance=0.1, passed=True)
    report.checks["curve_p1"] = CheckResult(value=0.5, tolerance=0.02, passed=False)
    table = summary_table(report)
    assert "| golden_rule" in table and "FAIL" in table
    assert "A_p0" in table and "gamma_rate" in table
