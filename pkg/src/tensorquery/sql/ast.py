"""AST for the supported SQL subset, plus a canonical pretty-printer.

Shapes covered: column/aggregate/star select lists, a table, table-valued
function call or subquery in FROM, conjunctive comparison filters, GROUP BY,
single-key ORDER BY and LIMIT.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union


@dataclass(frozen=True)
class ColumnRef:
    name: str


@dataclass(frozen=True)
class Aggregate:
    func: str  # "count" | "sum" | "avg"
    arg: Optional[str]  # column name; None only for count(*)

    def __post_init__(self):
        if self.func not in ("count", "sum", "avg"):
            raise ValueError(f"unknown aggregate {self.func!r}")
        if (self.arg is None) != (self.func == "count"):
            raise ValueError("count takes *, sum/avg take a column")


@dataclass(frozen=True)
class FuncCall:
    """TVF invocation; args are bare identifiers (tables or columns)."""

    name: str
    args: tuple[str, ...]


@dataclass(frozen=True)
class Star:
    pass


SelectItem = Union[ColumnRef, Aggregate, FuncCall, Star]

COMPARISON_OPS = ("=", "<>", "<", ">", "<=", ">=")


@dataclass(frozen=True)
class Comparison:
    column: str
    op: str
    literal: Union[int, float, str]

    def __post_init__(self):
        if self.op not in COMPARISON_OPS:
            raise ValueError(f"unknown comparison operator {self.op!r}")


@dataclass(frozen=True)
class TableRef:
    name: str


@dataclass(frozen=True)
class SubquerySource:
    query: "SelectQuery"


FromSource = Union[TableRef, FuncCall, SubquerySource]


@dataclass(frozen=True)
class OrderSpec:
    column: str
    descending: bool = False


@dataclass(frozen=True)
class SelectQuery:
    items: tuple[SelectItem, ...]
    source: FromSource
    where: tuple[Comparison, ...] = ()
    group_by: tuple[str, ...] = ()
    order_by: Optional[OrderSpec] = None
    limit: Optional[int] = None


def _literal_sql(value: Union[int, float, str]) -> str:
    if isinstance(value, str):
        return '"' + value + '"'
    return repr(value)


def _item_sql(item: SelectItem) -> str:
    if isinstance(item, Star):
        return "*"
    if isinstance(item, ColumnRef):
        return item.name
    if isinstance(item, Aggregate):
        return f"{item.func.upper()}({item.arg if item.arg is not None else '*'})"
    if isinstance(item, FuncCall):
        return f"{item.name}({', '.join(item.args)})"
    raise TypeError(f"not a select item: {item!r}")


def to_sql(query: SelectQuery) -> str:
    """Canonical SQL text; parse(to_sql(q)) reproduces q exactly."""
    parts = ["SELECT " + ", ".join(_item_sql(i) for i in query.items)]
    src = query.source
    if isinstance(src, TableRef):
        parts.append("FROM " + src.name)
    elif isinstance(src, FuncCall):
        parts.append(f"FROM {src.name}({', '.join(src.args)})")
    else:
        parts.append("FROM (" + to_sql(src.query) + ")")
    if query.where:
        parts.append(
            "WHERE "
            + " AND ".join(f"{c.column} {c.op} {_literal_sql(c.literal)}" for c in query.where)
        )
    if query.group_by:
        parts.append("GROUP BY " + ", ".join(query.group_by))
    if query.order_by is not None:
        parts.append(
            "ORDER BY " + query.order_by.column + (" DESC" if query.order_by.descending else " ASC")
        )
    if query.limit is not None:
        parts.append(f"LIMIT {query.limit}")
    return " ".join(parts)
