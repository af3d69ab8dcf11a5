"""
Boosted Decay Lab - Report Writing
Deterministic report.json (sorted keys, 17 significant digits), one CSV per
amplitude series, and console summary tables
"""

import json
import math
from pathlib import Path
from typing import Any, Dict, List, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel
from tabulate import tabulate

from .errors import LabError
from .schemas import ExperimentReport


SERIES_COLUMNS = ["t", "re", "im", "abs2"]


# ============================================
# 1. JSON Encoding
# ============================================

def format_float(value: float) -> str:
    if not math.isfinite(value):
        return "null"
    text = format(value, ".17g")
    if not any(mark in text for mark in ".en"):
        text += ".0"
    return text


def to_json(value: Any, level: int = 0) -> str:
    """Serialize with sorted keys and 17-digit floats; NaN and inf become null."""
    pad = "  " * (level + 1)
    closing = "  " * level
    if isinstance(value, BaseModel):
        value = value.model_dump(mode="python")
    if isinstance(value, np.ndarray):
        value = value.tolist()
    if value is None:
        return "null"
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(float(value))
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = [f"{pad}{json.dumps(str(key), ensure_ascii=False)}: {to_json(value[key], level + 1)}"
                 for key in sorted(value, key=str)]
        return "{\n" + ",\n".join(items) + "\n" + closing + "}"
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        items = [pad + to_json(item, level + 1) for item in value]
        return "[\n" + ",\n".join(items) + "\n" + closing + "]"
    return json.dumps(str(value), ensure_ascii=False)


# ============================================
# 2. Files
# ============================================

def series_frame(series) -> pd.DataFrame:
    values = np.asarray(series.values)
    return pd.DataFrame({
        "t": np.asarray(series.t_grid, dtype=float),
        "re": values.real,
        "im": values.imag,
        "abs2": np.abs(values) ** 2,
    }, columns=SERIES_COLUMNS)


def write_report(report: ExperimentReport, out_dir: Union[str, Path]) -> List[Path]:
    """report.json plus <label>.csv per amplitude series; returns written paths."""
    out = Path(out_dir)
    labels = [series.label for series in report.series]
    duplicates = sorted({label for label in labels if labels.count(label) > 1})
    if duplicates:
        raise LabError(f"duplicate series labels: {duplicates}")
    out.mkdir(parents=True, exist_ok=True)
    written = []
    report_path = out / "report.json"
    report_path.write_text(to_json(report.model_dump(mode="python")) + "\n", encoding="utf-8")
    written.append(report_path)
    for series in report.series:
        path = out / f"{series.label}.csv"
        series_frame(series).to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
        written.append(path)
    return written


# ============================================
# 3. Console Tables
# ============================================

def _cell(value: Any) -> Any:
    if isinstance(value, float):
        return f"{value:.6g}"
    return "-" if value is None else value


def summary_table(report: ExperimentReport) -> str:
    """Markdown tables of checks and fits for the console."""
    sections = [f"## {report.command}"]
    if report.sign_convention:
        sections.append(f"sign convention: {report.sign_convention}")
    if report.checks:
        rows = [[name, _cell(check.value), _cell(check.tolerance), "pass" if check.passed else "FAIL"]
                for name, check in report.checks.items()]
        sections.append(tabulate(rows, headers=["check", "value", "tolerance", "status"], tablefmt="github"))
    fits: List[Dict[str, Any]] = report.results.get("fit_summary", [])
    if fits:
        headers = ["label", "p_or_v", "m_eff", "gamma_rate", "t1", "t2", "r_squared"]
        rows = [[_cell(row.get(key)) for key in headers] for row in fits]
        sections.append(tabulate(rows, headers=headers, tablefmt="github"))
    return "\n\n".join(sections)
