"""Columnar tables over encoded tensors, a named catalog, and CSV/JSON I/O.

Tables are immutable once registered; re-registering a name replaces the
previous table (the training loop registers a fresh input table every
iteration).  The catalog takes a lock for registrations and is safe for
concurrent readers.
"""

from __future__ import annotations

import csv
import io
import json
import threading
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .encodings import (
    EncodedTensor,
    ProbabilityEncoding,
    dict_decode,
    dict_encode,
    plain,
)
from .tensor import Tensor


class StorageError(ValueError):
    """Schema violation, ingestion failure or unknown catalog entry."""


@dataclass(frozen=True)
class ColumnType:
    """Logical column type: int | float | string | tensor[k] | image[h,w]."""

    kind: str
    dims: tuple[int, ...] = ()

    _KINDS = ("int", "float", "string", "tensor", "image")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise StorageError(f"unknown column type {self.kind!r}")
        if self.kind == "tensor" and len(self.dims) != 1:
            raise StorageError("tensor column type needs one extent")
        if self.kind == "image" and len(self.dims) != 2:
            raise StorageError("image column type needs two extents")

    def __str__(self) -> str:
        if self.dims:
            return f"{self.kind}[{','.join(str(d) for d in self.dims)}]"
        return self.kind

    @classmethod
    def parse(cls, text: str) -> "ColumnType":
        text = text.strip()
        if "[" in text:
            base, _, rest = text.partition("[")
            if not rest.endswith("]"):
                raise StorageError(f"malformed column type {text!r}")
            dims = tuple(int(d) for d in rest[:-1].split(","))
            return cls(base.strip(), dims)
        return cls(text)


INT = ColumnType("int")
FLOAT = ColumnType("float")
STRING = ColumnType("string")


def tensor_type(k: int) -> ColumnType:
    return ColumnType("tensor", (k,))


def image_type(h: int, w: int) -> ColumnType:
    return ColumnType("image", (h, w))


@dataclass(frozen=True)
class Schema:
    columns: tuple[tuple[str, ColumnType], ...]

    def __post_init__(self):
        names = [n for n, _ in self.columns]
        for n in names:
            if not n:
                raise StorageError("column names must be non-empty")
        if len(set(names)) != len(names):
            raise StorageError(f"duplicate column names in schema: {names}")

    @classmethod
    def of(cls, *columns: tuple[str, ColumnType]) -> "Schema":
        return cls(tuple(columns))

    @classmethod
    def parse(cls, text: str) -> "Schema":
        """Parse ``name:type,name:type`` (the CLI --schema format)."""
        cols = []
        for part in text.split(","):
            name, sep, typ = part.partition(":")
            if not sep:
                raise StorageError(f"schema entry {part!r} is not name:type")
            cols.append((name.strip(), ColumnType.parse(typ)))
        return cls(tuple(cols))

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.columns]

    def index_of(self, name: str) -> int:
        for i, (n, _) in enumerate(self.columns):
            if n == name:
                return i
        raise StorageError(f"no column {name!r} in schema {self.names}")


@dataclass(frozen=True)
class Table:
    schema: Schema
    columns: tuple[EncodedTensor, ...]
    row_count: int
    device: str = "cpu"

    def __post_init__(self):
        if len(self.columns) != len(self.schema.columns):
            raise StorageError(
                f"{len(self.columns)} columns for schema of {len(self.schema.columns)}"
            )
        for (name, _), col in zip(self.schema.columns, self.columns):
            n = col.values.shape[0] if col.values.data.ndim else None
            if n != self.row_count:
                raise StorageError(
                    f"column {name!r} has {n} rows, table declares {self.row_count}"
                )

    def column(self, name: str) -> EncodedTensor:
        return self.columns[self.schema.index_of(name)]


def _column_type_for(col: EncodedTensor) -> ColumnType:
    if col.is_dictionary():
        return STRING
    if col.is_pe():
        return tensor_type(col.encoding.num_classes)
    data = col.values.data
    if data.ndim == 3:
        return image_type(data.shape[1], data.shape[2])
    if data.ndim == 2:
        return tensor_type(data.shape[1])
    return INT if col.values.dtype == "int64" else FLOAT


def table_from_columns(names: Sequence[str], columns: Sequence[EncodedTensor],
                       device: str = "cpu") -> Table:
    """Assemble a table, deriving logical types from the encodings."""
    cols = tuple(columns)
    schema = Schema(tuple((n, _column_type_for(c)) for n, c in zip(names, cols)))
    rows = cols[0].values.shape[0] if cols else 0
    return Table(schema, cols, int(rows), device)


class Catalog:
    """Named tables; registrations replace, readers never block each other."""

    def __init__(self):
        self._tables: dict[str, Table] = {}
        self._lock = threading.Lock()

    def register(self, name: str, table: Table) -> Table:
        with self._lock:
            self._tables[name] = table
        return table

    def get(self, name: str) -> Table:
        table = self._tables.get(name)
        if table is None:
            raise StorageError(
                f"unknown table {name!r}; registered: {sorted(self._tables)}"
            )
        return table

    def __contains__(self, name: str) -> bool:
        return name in self._tables

    def names(self) -> list[str]:
        return sorted(self._tables)

    def register_csv(self, path: str, table_name: str, schema: Schema,
                     device: str = "cpu") -> Table:
        """Ingest a comma-separated, double-quoted, UTF-8 file with a header."""
        with open(path, newline="", encoding="utf-8") as fh:
            table = read_csv(fh, schema, device=device, source=path)
        return self.register(table_name, table)

    def register_tensor(self, values: Tensor | EncodedTensor, table_name: str,
                        column_name: str = "value", device: str = "cpu") -> Table:
        """Register a tensor as a one-column table; axis 0 is the row axis."""
        col = values if isinstance(values, EncodedTensor) else plain(values)
        if col.values.data.ndim == 0:
            raise StorageError("cannot register a zero-dimensional tensor as a table")
        table = table_from_columns([column_name], [col], device=device)
        return self.register(table_name, table)


def read_csv(fh, schema: Schema, device: str = "cpu", source: str = "<csv>") -> Table:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise StorageError(f"{source}: empty file (header required)") from None
    if [h.strip() for h in header] != schema.names:
        raise StorageError(
            f"{source}: header {header} does not match schema columns {schema.names}"
        )

    raw: list[list[str]] = [[] for _ in schema.columns]
    for lineno, row in enumerate(reader, start=2):
        if len(row) != len(schema.columns):
            raise StorageError(
                f"{source}:{lineno}: expected {len(schema.columns)} fields, got {len(row)}"
            )
        for cell, bucket in zip(row, raw):
            bucket.append(cell)

    columns: list[EncodedTensor] = []
    for (name, ctype), cells in zip(schema.columns, raw):
        if ctype.kind == "string":
            columns.append(dict_encode(cells))
            continue
        if ctype.kind not in ("int", "float"):
            raise StorageError(f"{source}: cannot ingest {ctype} column {name!r} from CSV")
        values = []
        for i, cell in enumerate(cells):
            text = cell.strip()
            if not text:
                raise StorageError(f"{source}:{i + 2}: empty cell in {ctype} column {name!r}")
            try:
                values.append(int(text) if ctype.kind == "int" else float(text))
            except ValueError:
                raise StorageError(
                    f"{source}:{i + 2}: {text!r} is not a valid {ctype.kind} for column {name!r}"
                ) from None
        dtype = "int64" if ctype.kind == "int" else "float64"
        columns.append(plain(Tensor(np.asarray(values, dtype=dtype))))

    row_count = len(raw[0]) if raw else 0
    return Table(schema, tuple(columns), row_count, device)


def _format_float(x: float) -> str:
    return f"{x:.6g}"


def _cell_values(col: EncodedTensor, ctype: ColumnType, for_csv: bool) -> list:
    if col.is_dictionary():
        return dict_decode(col)
    data = col.values.data
    if col.is_pe():
        rows = [[float(v) for v in row] for row in data.tolist()]
        if for_csv:
            return [json.dumps([float(_format_float(v)) for v in row]) for row in rows]
        return rows
    if ctype.kind == "image" or data.ndim >= 2:
        if for_csv:
            raise StorageError(f"cannot export {ctype} column to CSV")
        return data.tolist()
    if col.values.dtype == "int64":
        return [int(v) for v in data.tolist()]
    return [_format_float(v) if for_csv else float(v) for v in data.tolist()]


def export(table: Table, format: str = "csv") -> bytes:
    """Serialize a table; dictionary columns decode, floats use 6 sig. digits."""
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(table.schema.names)
        cells = [
            _cell_values(col, ctype, for_csv=True)
            for col, (_, ctype) in zip(table.columns, table.schema.columns)
        ]
        for r in range(table.row_count):
            writer.writerow([c[r] for c in cells])
        return buf.getvalue().encode("utf-8")
    if format == "json":
        cells = [
            _cell_values(col, ctype, for_csv=False)
            for col, (_, ctype) in zip(table.columns, table.schema.columns)
        ]
        rows = [
            {name: cells[i][r] for i, name in enumerate(table.schema.names)}
            for r in range(table.row_count)
        ]
        return json.dumps(rows).encode("utf-8")
    raise StorageError(f"unsupported export format {format!r}")
