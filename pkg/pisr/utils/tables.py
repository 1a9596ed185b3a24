"""Small CSV helpers for the numeric tables the CLI emits.

Values are written with 17 significant digits and every file is read back
once after writing, so a table that does not parse under its own header
never leaves this module.
"""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from pisr.core.errors import DataError


def format_value(value: float) -> str:
    return format(float(value), ".17g")


def write_csv(path: Path | str, header: Sequence[str], rows: Sequence[Sequence[float]]) -> Path:
    """Write `rows` under `header` and validate the result.

    Raises
    ------
    DataError
        If a row has the wrong width or the written file does not read back.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise DataError(f"{path}: row has {len(row)} values, header has {len(header)}")
            writer.writerow([v if isinstance(v, (int, np.integer)) else format_value(v) for v in row])
    columns = read_csv_columns(path, header)
    if any(col.size != len(rows) for col in columns.values()):
        raise DataError(f"{path}: row count changed on read-back")
    return path


def write_columns(path: Path | str, columns: Mapping[str, np.ndarray]) -> Path:
    """Column-oriented variant of `write_csv`."""
    header = list(columns)
    arrays = [np.asarray(columns[h], dtype=float) for h in header]
    if len({a.size for a in arrays}) > 1:
        raise DataError(f"{path}: columns differ in length")
    return write_csv(path, header, list(zip(*arrays)))


def read_csv_columns(path: Path | str, header: Sequence[str]) -> dict[str, np.ndarray]:
    """Read a numeric CSV whose first row equals `header`.

    Raises
    ------
    DataError
        On a missing file, a header mismatch or a non-numeric cell.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows or [h.strip() for h in rows[0]] != list(header):
        raise DataError(f"{path}: expected header {','.join(header)}")
    body = [r for r in rows[1:] if r]
    try:
        values = np.array([[float(v) for v in r] for r in body], dtype=float).reshape(len(body), len(header))
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    return {name: values[:, i].copy() for i, name in enumerate(header)}
