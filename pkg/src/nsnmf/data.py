"""CSV reading and min-max normalisation."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from os import PathLike

import numpy as np


class DataFormatError(ValueError):
    """Malformed or incomplete input file."""


TRUE_LABELS = {"1", "1.0", "true", "yes", "y", "outlier", "anomaly", "o"}
FALSE_LABELS = {"0", "0.0", "false", "no", "n", "inlier", "normal", "i"}


@dataclass
class Table:
    values: np.ndarray
    columns: list[str]
    row_ids: list[str]
    labels: np.ndarray | None = None


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def _column_index(spec, columns: list[str], ncols: int) -> int:
    if isinstance(spec, int) or (isinstance(spec, str) and spec.lstrip("-").isdigit()):
        idx = int(spec)
        if not -ncols <= idx < ncols:
            raise DataFormatError(f"column index {idx} out of range for {ncols} columns")
        return idx % ncols
    if spec in columns:
        return columns.index(spec)
    raise DataFormatError(f"no column named {spec!r}")


def _parse_label(text: str, line: int) -> bool:
    t = text.strip().strip("'\"").lower()
    if t in TRUE_LABELS:
        return True
    if t in FALSE_LABELS:
        return False
    raise DataFormatError(f"line {line}: unrecognised label {text!r}")


def read_table(path: str | PathLike, id_col=None, label_col=None, header: bool | None = None) -> Table:
    """Read a numeric CSV.

    ``header=None`` detects a header from a non-numeric first row. ``id_col``
    and ``label_col`` are column names or indices (``id_col=True`` means the
    first column). Every remaining cell must parse as a finite number; the
    first offending cell is reported with its 1-based line number.
    """
    with open(path, newline="") as fh:
        rows = [(n, r) for n, r in enumerate(csv.reader(fh), start=1) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    first = rows[0][1]
    ncols = len(first)
    if header is None:
        special = set()
        if id_col is True:
            special.add(0)
        header = not all(_is_number(c) for i, c in enumerate(first) if i not in special and c.strip())
        if isinstance(label_col, str) and not label_col.lstrip("-").isdigit():
            header = True
    columns = [c.strip() for c in first] if header else [f"x{i}" for i in range(ncols)]
    body = rows[1:] if header else rows

    id_idx = 0 if id_col is True else (None if id_col in (None, False) else _column_index(id_col, columns, ncols))
    label_idx = None if label_col is None else _column_index(label_col, columns, ncols)
    keep = [i for i in range(ncols) if i not in (id_idx, label_idx)]

    values = np.empty((len(body), len(keep)))
    ids, labels = [], []
    for r, (line, row) in enumerate(body):
        if len(row) != ncols:
            raise DataFormatError(f"line {line}: expected {ncols} fields, found {len(row)}")
        for c, i in enumerate(keep):
            cell = row[i].strip()
            try:
                v = float(cell)
            except ValueError:
                raise DataFormatError(f"line {line}: non-numeric value {cell!r} in column {columns[i]!r}") from None
            if not np.isfinite(v):
                raise DataFormatError(f"line {line}: missing or non-finite value in column {columns[i]!r}")
            values[r, c] = v
        ids.append(row[id_idx].strip() if id_idx is not None else str(r))
        if label_idx is not None:
            labels.append(_parse_label(row[label_idx], line))
    return Table(values, [columns[i] for i in keep], ids,
                 np.array(labels, dtype=bool) if label_idx is not None else None)


def normalize_minmax(X) -> np.ndarray:
    """Scale every column to ``[0, 1]``; constant columns become all zeros."""
    X = np.asarray(X, dtype=np.float64)
    lo = X.min(axis=0)
    span = X.max(axis=0) - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (X - lo) / safe, 0.0)


def write_matrix_csv(path, X, columns=None, row_ids=None, labels=None) -> None:
    X = np.asarray(X)
    columns = columns or [f"x{i}" for i in range(X.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = (["id"] if row_ids is not None else []) + list(columns) + (["label"] if labels is not None else [])
        w.writerow(head)
        for r in range(X.shape[0]):
            row = [row_ids[r]] if row_ids is not None else []
            row += [f"{v:.17g}" for v in X[r]]
            if labels is not None:
                row.append(int(labels[r]))
            w.writerow(row)
