"""Report and calibration-file serialization.

Every artifact is written atomically (temp file in the target directory,
then ``os.replace``) and embeds the resolved run configuration.  Infinite
thresholds are written as the literal ``"+inf"``.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, Sequence, Union

from conformal.calibrator import CalibrationResult, PredictionSet
from experiments.evaluation import ExperimentReport, SweepReport
from system.errors import ConfigError
from system.logger import get_logger

LOGGER = get_logger("reports")

PathLike = Union[str, Path]


def atomic_write_text(path: PathLike, text: str) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp_name, target)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    LOGGER.debug("wrote %s (%d bytes)", target, len(text))
    return target


def _finite_or_literal(value: Any) -> Any:
    if isinstance(value, float):
        if math.isinf(value):
            return "+inf" if value > 0 else "-inf"
        if math.isnan(value):
            return "nan"
    if isinstance(value, dict):
        return {key: _finite_or_literal(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_finite_or_literal(item) for item in value]
    return value


def dumps_json(document: Dict[str, Any]) -> str:
    return json.dumps(_finite_or_literal(document), indent=2, sort_keys=False) + "\n"


def _rows_to_csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(value) for value in row])
    return buffer.getvalue()


def _cell(value: Any) -> str:
    if isinstance(value, float):
        if math.isinf(value):
            return "+inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


# ── Calibration ───────────────────────────────────────────────────────────────

def calibration_document(calib: CalibrationResult, config: Dict[str, Any]) -> Dict[str, Any]:
    document = calib.to_dict()
    document["q_percent"] = calib.q_percent
    document["config"] = config
    return document


def write_calibration(path: PathLike, calib: CalibrationResult, config: Dict[str, Any]) -> Path:
    return atomic_write_text(path, dumps_json(calibration_document(calib, config)))


def read_calibration(path: PathLike) -> CalibrationResult:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read calibration file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"calibration file {path} is not a JSON object")
    return CalibrationResult.from_dict(data)


# ── Prediction sets ───────────────────────────────────────────────────────────

def dumps_prediction_sets(sets: Sequence[PredictionSet]) -> str:
    return _rows_to_csv(
        ("sample_index", "set_size", "members"),
        ((index, len(s), ";".join(str(m) for m in s)) for index, s in enumerate(sets)),
    )


# ── Experiments ───────────────────────────────────────────────────────────────

def _summary_rows(report: ExperimentReport) -> Dict[str, Any]:
    methods: Dict[str, Any] = {}
    for method, summary in report.summaries.items():
        methods[method.value] = {
            "mean_size": summary.mean_size,
            "std_size": summary.std_size,
            "mean_coverage": summary.mean_coverage,
            "std_coverage": summary.std_coverage,
            "mean_q": summary.mean_q,
            "std_q": summary.std_q,
            "mean_q_percent": summary.mean_q_percent,
            "std_q_percent": summary.std_q_percent,
            "empty_rate": summary.empty_rate,
        }
    return methods


def experiment_block(report: ExperimentReport) -> Dict[str, Any]:
    return {
        "epsilon": report.config.epsilon,
        "n_pool": report.n_pool,
        "n_calib": report.n_calib,
        "n_test": report.n_test,
        "k": report.k,
        "protocol": report.config.to_dict(),
        "methods": _summary_rows(report),
    }


def experiment_document(report: ExperimentReport, config: Dict[str, Any]) -> Dict[str, Any]:
    document = experiment_block(report)
    document["config"] = config
    return document


def sweep_document(sweep: SweepReport, config: Dict[str, Any]) -> Dict[str, Any]:
    return {
        "eps_grid": list(sweep.eps_grid),
        "reports": [experiment_block(report) for report in sweep.reports],
        "config": config,
    }


def write_long_form(path: PathLike, report: ExperimentReport) -> Path:
    return atomic_write_text(path, _rows_to_csv(("method", "metric", "mean", "std"), report.long_form()))


def write_sweep_long_form(path: PathLike, sweep: SweepReport) -> Path:
    return atomic_write_text(
        path, _rows_to_csv(("epsilon", "method", "metric", "value"), sweep.long_form())
    )


def write_split_table(path: PathLike, report: ExperimentReport) -> Path:
    rows = (
        (r.split, r.method.value, r.size, r.coverage, r.empty_rate, r.q)
        for r in report.splits
    )
    return atomic_write_text(
        path, _rows_to_csv(("split", "method", "size", "coverage", "empty_rate", "q"), rows)
    )
