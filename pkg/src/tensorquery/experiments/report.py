"""Experiment reports: tidy (metric, config, step, value) rows as CSV."""

from __future__ import annotations

import io
from dataclasses import dataclass, field


@dataclass
class ExperimentReport:
    columns: tuple[str, ...]
    rows: list[tuple] = field(default_factory=list)

    def add(self, *values) -> None:
        if len(values) != len(self.columns):
            raise ValueError(f"expected {len(self.columns)} values, got {len(values)}")
        self.rows.append(tuple(values))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(self.columns) + "\n")
        for row in self.rows:
            buf.write(",".join(_fmt(v) for v in row) + "\n")
        return buf.getvalue()

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv())

    def value(self, **filters) -> float:
        """Single value of the rows matching the given column=value filters."""
        idx = {c: i for i, c in enumerate(self.columns)}
        matches = [
            row for row in self.rows
            if all(row[idx[k]] == v for k, v in filters.items())
        ]
        if len(matches) != 1:
            raise KeyError(f"{len(matches)} rows match {filters}")
        return matches[0][-1]


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)
