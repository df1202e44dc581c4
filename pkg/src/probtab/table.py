"""Generated tables: column-major storage, per-cell flags, provenance."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

from probtab.schema import DatasetSchema


@dataclass
class Table:
    """Rows of category labels plus bookkeeping the evaluator needs.

    Storage is column-major (one label list per feature, schema order).
    ``flags`` marks cells whose label is outside the category list; they
    are kept verbatim and excluded from frequency denominators downstream.
    ``realized`` holds integer values drawn for numeric_range features.
    ``provenance`` records, per cell, the id of the context whose
    distribution produced it; ``context_registry`` maps id -> rendered
    context string. Strategies that never sample leave provenance None.
    """

    schema: DatasetSchema
    columns: list[list[str]]
    flags: dict[tuple[int, str], str] = field(default_factory=dict)
    realized: dict[str, list[int]] = field(default_factory=dict)
    provenance: dict[str, list[int]] | None = None
    context_registry: list[str] | None = None

    @property
    def n_rows(self) -> int:
        return len(self.columns[0]) if self.columns else 0

    def row(self, i: int) -> tuple[str, ...]:
        return tuple(col[i] for col in self.columns)

    def iter_rows(self) -> Iterator[tuple[str, ...]]:
        return zip(*self.columns) if self.columns else iter(())

    def column(self, feature_name: str) -> list[str]:
        return self.columns[self.schema.feature_index(feature_name)]

    def is_flagged(self, row: int, feature_name: str) -> bool:
        return (row, feature_name) in self.flags

    @property
    def invalid_cell_count(self) -> int:
        return len(self.flags)

    @classmethod
    def from_rows(
        cls,
        schema: DatasetSchema,
        rows: list[list[str]],
        flags: dict[tuple[int, str], str] | None = None,
    ) -> "Table":
        columns: list[list[str]] = [[] for _ in schema.features]
        for row in rows:
            for j, value in enumerate(row):
                columns[j].append(value)
        return cls(schema=schema, columns=columns, flags=flags or {})


def write_rows_csv(table: Table, path: str | Path) -> None:
    """Write header + rows; fixed "\\n" line endings keep output byte-stable."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(table.schema.feature_names)
        writer.writerows(table.iter_rows())


def read_rows_csv(schema: DatasetSchema, path: str | Path) -> Table:
    """Read a table written by write_rows_csv, revalidating labels.

    The CSV header must equal the schema's feature names; labels outside
    a feature's category list are re-flagged on load.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != schema.feature_names:
            raise ValueError(
                f"{path}: header {header!r} does not match schema features "
                f"{list(schema.feature_names)}"
            )
        rows = [list(r) for r in reader]
    flags: dict[tuple[int, str], str] = {}
    for i, row in enumerate(rows):
        if len(row) != len(schema.features):
            raise ValueError(f"{path}: row {i} has {len(row)} cells, expected {len(schema.features)}")
        for feature, value in zip(schema.features, row):
            if value not in feature.categories:
                flags[(i, feature.name)] = "invalid_label"
    return Table.from_rows(schema, rows, flags)
