import json
from pathlib import Path

import pytest

from run_experiment import build_parser, run_command


REFERENCE_CONFIG = Path(__file__).resolve().parents[1] / "data" / "configs" / "reference.json"


def _report(out_dir):
    return json.loads((Path(out_dir) / "report.json").read_text(encoding="utf-8"))


# ============================================
# Usage
# ============================================

def test_help_exits_zero(capsys):
    assert run_command(["--help"]) == 0
    assert "speedup" in capsys.readouterr().out


def test_every_subcommand_is_registered():
    parser = build_parser()
    for command in ("check-algebra", "boost-identity", "speedup", "dilation",
                    "moments", "mixture", "appendix", "scan"):
        args = parser.parse_args([command, "--config", "x.json"])
        assert args.command == command


@pytest.mark.parametrize("argv", [
    [],
    ["speedup"],
    ["launch", "--config", "x.json"],
    ["speedup", "--config", "x.json", "--verbose"],
])
def test_usage_errors_exit_two(argv):
    assert run_command(argv) == 2


def test_missing_config_exits_two(tmp_path, capsys):
    assert run_command(["speedup", "--config", str(tmp_path / "absent.json"), "--quiet"]) == 2
    assert capsys.readouterr().err.startswith("[error]")


def test_invalid_config_exits_two(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"model": {"m_a": 1.0}, "grid": {"n_modes": 9, "dk": 0.25}}), encoding="utf-8")
    assert run_command(["moments", "--config", str(path), "--quiet"]) == 2


# ============================================
# Runs
# ============================================

def test_speedup_on_reference_config(tmp_path):
    out = tmp_path / "speedup"
    assert run_command(["speedup", "--config", str(REFERENCE_CONFIG), "--out-dir", str(out), "--quiet"]) == 0
    report = _report(out)
    assert report["command"] == "speedup"
    assert all(check["passed"] for check in report["checks"].values())
    assert "speedup_v0.8" in report["checks"]
    for label in ("V_v0.2", "W_v0.5", "V_v0.8_explicit"):
        assert (out / f"{label}.csv").exists()
    assert report["sign_convention"].startswith("stencil=")
    assert report["residuals"]["r_HP"] == 0.0


def test_reference_lattice_dilation_fails_the_fit(tmp_path, capsys):
    out = tmp_path / "dilation"
    code = run_command(["dilation", "--config", str(REFERENCE_CONFIG), "--out-dir", str(out), "--quiet"])
    assert code == 1
    assert "[error]" in capsys.readouterr().err


def test_appendix_on_reference_config(tmp_path):
    out = tmp_path / "appendix"
    assert run_command(["appendix", "--config", str(REFERENCE_CONFIG), "--out-dir", str(out), "--quiet"]) == 0
    report = _report(out)
    assert report["results"]["bch"]["beta"] == 0.01
    errors = report["results"]["bch"]["errors"]
    assert len(errors) == 9
    assert report["checks"]["bch_order_2_to_4_drop"]["value"] >= 10.0
    assert report["checks"]["bch_order_8"]["value"] <= 1e-9
    assert all(check["passed"] for check in report["checks"].values())


@pytest.mark.parametrize("command", ["check-algebra", "appendix", "moments"])
def test_small_config_commands_pass(small_config, tmp_path, command):
    out = tmp_path / command
    assert run_command([command, "--config", str(small_config), "--out-dir", str(out), "--quiet"]) == 0
    report = _report(out)
    assert report["checks"]
    assert set(report["versions"]) >= {"boosted_decay_lab", "numpy", "scipy"}
    assert command in report["timing"]


def test_out_dir_defaults_to_config_output_dir(small_config, tmp_path):
    assert run_command(["moments", "--config", str(small_config), "--quiet"]) == 0
    assert (tmp_path / "out" / "report.json").exists()


def test_reruns_are_byte_identical(small_config, tmp_path):
    first, second = tmp_path / "first", tmp_path / "second"
    for out in (first, second):
        run_command(["speedup", "--config", str(small_config), "--out-dir", str(out), "--quiet"])
    csv_names = sorted(path.name for path in first.glob("*.csv"))
    assert csv_names == sorted(path.name for path in second.glob("*.csv"))
    assert csv_names
    for name in csv_names:
        assert (first / name).read_bytes() == (second / name).read_bytes()

    one, two = _report(first), _report(second)
    for report in (one, two):
        report.pop("timing")
        report["config_echo"].pop("output_dir")
    assert one == two


def test_scan_records_failed_cells_without_aborting(small_config, tmp_path):
    out = tmp_path / "scan"
    assert run_command(["scan", "--config", str(small_config), "--out-dir", str(out), "--quiet"]) == 0
    rows = _report(out)["results"]["scan"]
    assert [(row["v"], row["p"]) for row in rows] == [(v, p) for v in (0.2, 0.5, 0.8) for p in (0.5, 1.0)]
    for row in rows:
        assert row["status"] == "ok" or row["measured_ratio"] is None
        assert row["gamma_gamma_m"] == pytest.approx(row["gamma"] * row["gamma_m"])
        assert row["gamma_squared"] == pytest.approx(row["gamma"] ** 2)
        assert "predicted_ratio" not in row


def test_dump_operators(small_config, tmp_path):
    out = tmp_path / "dump"
    args = ["moments", "--config", str(small_config), "--out-dir", str(out), "--quiet", "--dump-operators"]
    assert run_command(args) == 0
    for name in ("H0", "H_int", "P", "N"):
        assert (out / f"operator_{name}.csv").exists()


def test_refine_boost_records_least_squares(small_config, tmp_path):
    out = tmp_path / "refined"
    args = ["check-algebra", "--config", str(small_config), "--out-dir", str(out), "--quiet", "--refine-boost"]
    run_command(args)
    report = _report(out)
    assert report["config_echo"]["boost"]["use_refined"] is True
    assert report["lsq_iterations"] is not None
    assert report["results"]["objective"]["refined"] <= report["results"]["objective"]["seed"]
