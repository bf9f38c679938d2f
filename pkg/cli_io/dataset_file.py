"""CSV dataset format: ``p_0,...,p_{k-1},label[,clean_label]``.

One header row, then one row per sample.  Probabilities are written with
``repr`` (shortest round-trip decimal), so a file written here reads back to
bit-identical floats.
"""
from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from cli_io.reports import atomic_write_text
from conformal.noise_model import LabeledPool
from conformal.score_kernels import softmax, validate_probs
from system.errors import InputError
from system.logger import get_logger

LOGGER = get_logger("dataset_file")

LABEL = "label"
CLEAN_LABEL = "clean_label"


class DatasetError(InputError):
    """A malformed dataset file; ``line`` is the 1-based line number."""

    def __init__(self, message: str, line: Optional[int] = None) -> None:
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line


def _parse_header(header: List[str]) -> tuple[int, bool]:
    names = [name.strip() for name in header]
    has_clean = bool(names) and names[-1] == CLEAN_LABEL
    label_at = len(names) - (2 if has_clean else 1)
    if label_at < 2 or names[label_at] != LABEL:
        raise DatasetError(
            f"header must be p_0..p_{{k-1}},{LABEL}[,{CLEAN_LABEL}] with k >= 2, got {','.join(names)}",
            line=1,
        )
    expected = [f"p_{i}" for i in range(label_at)]
    if names[:label_at] != expected:
        raise DatasetError(f"probability columns must be named {','.join(expected)}", line=1)
    return label_at, has_clean


def _parse_prob(text: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError as exc:
        raise DatasetError(f"not a number: {text!r}", line=line) from exc
    if not math.isfinite(value):
        raise DatasetError(f"non-finite probability: {text!r}", line=line)
    return value


def _parse_label(text: str, k: int, line: int) -> int:
    try:
        value = int(text.strip())
    except ValueError as exc:
        raise DatasetError(f"label is not an integer: {text!r}", line=line) from exc
    if not 0 <= value < k:
        raise DatasetError(f"label {value} outside [0, {k})", line=line)
    return value


def read_dataset(path: Union[str, Path], apply_softmax: bool = False) -> LabeledPool:
    """Parse and validate a dataset file.

    With ``apply_softmax`` the probability columns are treated as raw scores
    and normalized; otherwise rows must sum to 1 within tolerance.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise DatasetError(f"{path} is not UTF-8 text: {exc}") from exc
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc

    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        raise DatasetError("empty file", line=1)
    k, has_clean = _parse_header(header)
    width = k + (2 if has_clean else 1)

    rows: List[List[float]] = []
    labels: List[int] = []
    clean: List[int] = []
    lines: List[int] = []
    for record in reader:
        line = reader.line_num
        if not record or all(not cell.strip() for cell in record):
            continue
        if len(record) != width:
            raise DatasetError(f"expected {width} fields, got {len(record)}", line=line)
        rows.append([_parse_prob(cell, line) for cell in record[:k]])
        labels.append(_parse_label(record[k], k, line))
        if has_clean:
            clean.append(_parse_label(record[k + 1], k, line))
        lines.append(line)

    if not rows:
        raise DatasetError("no samples after the header", line=2)

    try:
        probs = softmax(rows) if apply_softmax else validate_probs(rows)
    except InputError as exc:
        line = lines[exc.row] if exc.row is not None else None
        raise DatasetError(str(exc), line=line) from exc

    LOGGER.info("read_dataset: %s n=%d k=%d clean=%s", path, len(rows), k, has_clean)
    return LabeledPool(
        probs=probs,
        observed_labels=np.array(labels, dtype=np.int64),
        clean_labels=np.array(clean, dtype=np.int64) if has_clean else None,
    )


def dumps_dataset(pool: LabeledPool) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    header = [f"p_{i}" for i in range(pool.k)] + [LABEL]
    if pool.clean_labels is not None:
        header.append(CLEAN_LABEL)
    writer.writerow(header)
    for index in range(pool.n):
        row = [repr(float(value)) for value in pool.probs[index]]
        row.append(str(int(pool.observed_labels[index])))
        if pool.clean_labels is not None:
            row.append(str(int(pool.clean_labels[index])))
        writer.writerow(row)
    return buffer.getvalue()


def write_dataset(path: Union[str, Path], pool: LabeledPool) -> Path:
    return atomic_write_text(path, dumps_dataset(pool))
