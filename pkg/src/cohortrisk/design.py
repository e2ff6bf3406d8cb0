"""Named design matrix container and its CSV form."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ColumnMismatch, DegenerateDesign

AGE_COLUMN = "age"


@dataclass(frozen=True)
class DesignMatrix:
    """Rows are cohort members, columns are dummy-expanded features.

    ``labels`` is 1 for cases and 0 for controls.
    """

    row_ids: tuple[str, ...]
    column_names: tuple[str, ...]
    values: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        labels = np.asarray(self.labels, dtype=float)
        if values.ndim != 2:
            raise DegenerateDesign("design values must be two-dimensional")
        if values.shape != (len(self.row_ids), len(self.column_names)):
            raise ColumnMismatch(
                f"values shape {values.shape} does not match "
                f"{len(self.row_ids)} rows x {len(self.column_names)} columns"
            )
        if labels.shape != (len(self.row_ids),):
            raise ColumnMismatch("labels must align with rows")
        if len(set(self.column_names)) != len(self.column_names):
            raise ColumnMismatch("column names must be unique")
        object.__setattr__(self, "row_ids", tuple(self.row_ids))
        object.__setattr__(self, "column_names", tuple(self.column_names))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)

    @property
    def n_rows(self) -> int:
        return len(self.row_ids)

    def column_index(self, name: str) -> int:
        try:
            return self.column_names.index(name)
        except ValueError:
            raise ColumnMismatch(f"unknown column {name!r}") from None

    def select(self, columns: Iterable[str]) -> "DesignMatrix":
        columns = list(columns)
        idx = [self.column_index(c) for c in columns]
        return DesignMatrix(self.row_ids, tuple(columns), self.values[:, idx], self.labels)

    def take(self, rows: Sequence[int]) -> "DesignMatrix":
        rows = np.asarray(rows, dtype=int)
        return DesignMatrix(
            tuple(self.row_ids[i] for i in rows),
            self.column_names,
            self.values[rows],
            self.labels[rows],
        )

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.column_index(name)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["patient_id", "label", *self.column_names])
        is_age = [c == AGE_COLUMN for c in self.column_names]
        for rid, label, row in zip(self.row_ids, self.labels, self.values):
            cells = [_format_cell(v, age) for v, age in zip(row, is_age)]
            writer.writerow([rid, int(label), *cells])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    @classmethod
    def from_csv(cls, text: str) -> "DesignMatrix":
        reader = csv.reader(io.StringIO(text))
        try:
            header = next(reader)
        except StopIteration:
            raise DegenerateDesign("empty design file") from None
        if header[:2] != ["patient_id", "label"]:
            raise ColumnMismatch("design header must start with patient_id,label")
        ids, labels, rows = [], [], []
        for line in reader:
            if not line:
                continue
            if len(line) != len(header):
                raise ColumnMismatch(f"row for {line[0]!r} has {len(line)} cells, expected {len(header)}")
            ids.append(line[0])
            labels.append(int(line[1]))
            rows.append([float(v) for v in line[2:]])
        values = np.array(rows, dtype=float).reshape(len(ids), len(header) - 2)
        return cls(tuple(ids), tuple(header[2:]), values, np.array(labels, dtype=float))

    @classmethod
    def read_csv(cls, path) -> "DesignMatrix":
        return cls.from_csv(Path(path).read_text(encoding="utf-8"))


def _format_cell(value: float, is_age: bool) -> str:
    if not is_age and float(value).is_integer():
        return str(int(value))
    return repr(float(value))
