"""Name resolution: AST -> logical plan with resolved columns and encodings."""

from __future__ import annotations

import difflib
from dataclasses import dataclass
from typing import Optional, Union

from ..storage import Catalog, ColumnType, FLOAT, INT, Schema, Table
from .ast import (
    Aggregate,
    ColumnRef,
    Comparison,
    FuncCall,
    SelectQuery,
    Star,
    SubquerySource,
    TableRef,
)


class BindError(ValueError):
    """Unknown name or semantic rule violation."""


@dataclass(frozen=True)
class PlanColumn:
    name: str
    ctype: ColumnType
    encoding: str  # "plain" | "dict" | "pe"

    @property
    def num_classes(self) -> int:
        if self.encoding != "pe":
            raise BindError(f"column {self.name!r} is not probability-encoded")
        return self.ctype.dims[0]


OutputSchema = tuple[PlanColumn, ...]


@dataclass(frozen=True)
class Scan:
    table: str
    out: OutputSchema


@dataclass(frozen=True)
class TvfSource:
    """TVF in FROM; children scan the (single-column) argument tables."""

    name: str
    children: tuple[Scan, ...]
    out: OutputSchema


@dataclass(frozen=True)
class TvfMap:
    """TVF in the select list, applied to columns of the child relation."""

    name: str
    child: "LogicalNode"
    arg_indices: tuple[int, ...]
    out: OutputSchema


@dataclass(frozen=True)
class Predicate:
    column_index: int
    op: str
    literal: Union[int, float, str]


@dataclass(frozen=True)
class Filter:
    child: "LogicalNode"
    predicates: tuple[Predicate, ...]
    out: OutputSchema


@dataclass(frozen=True)
class Project:
    child: "LogicalNode"
    indices: tuple[int, ...]
    out: OutputSchema


@dataclass(frozen=True)
class AggSpec:
    func: str  # "count" | "sum" | "avg"
    column_index: Optional[int]
    out_name: str


@dataclass(frozen=True)
class GroupAggregate:
    child: "LogicalNode"
    key_indices: tuple[int, ...]  # group-by order, into child output
    aggs: tuple[AggSpec, ...]
    # select-list order: ("key", position in key_indices) or ("agg", position in aggs)
    items: tuple[tuple[str, int], ...]
    out: OutputSchema


@dataclass(frozen=True)
class Sort:
    child: "LogicalNode"
    key_index: int
    descending: bool
    out: OutputSchema


@dataclass(frozen=True)
class Limit:
    child: "LogicalNode"
    count: int
    out: OutputSchema


LogicalNode = Union[Scan, TvfSource, TvfMap, Filter, Project, GroupAggregate, Sort, Limit]


def _suggest(name: str, candidates: list[str]) -> str:
    close = difflib.get_close_matches(name, candidates, n=3)
    if close:
        return f"; did you mean {', '.join(repr(c) for c in close)}?"
    return f"; available: {sorted(candidates)}"


def _columns_of_table(table: Table) -> OutputSchema:
    cols = []
    for (name, ctype), col in zip(table.schema.columns, table.columns):
        if col.is_dictionary():
            enc = "dict"
        elif col.is_pe():
            enc = "pe"
        else:
            enc = "plain"
        cols.append(PlanColumn(name, ctype, enc))
    return tuple(cols)


def _columns_of_udf(entry) -> OutputSchema:
    cols = []
    for name, ctype in entry.output_schema:
        enc = "pe" if ctype.kind == "tensor" and entry.pe_outputs else "plain"
        cols.append(PlanColumn(name, ctype, enc))
    return tuple(cols)


def _resolve(name: str, out: OutputSchema, what: str = "column") -> int:
    names = [c.name for c in out]
    try:
        return names.index(name)
    except ValueError:
        raise BindError(f"unknown {what} {name!r}{_suggest(name, names)}") from None


def _lookup_udf(registry, name: str):
    entry = registry.lookup(name)
    if entry is None:
        raise BindError(f"unknown function {name!r}{_suggest(name, registry.names())}")
    return entry


def _bind_source(source, catalog: Catalog, registry) -> LogicalNode:
    if isinstance(source, TableRef):
        if source.name not in catalog:
            raise BindError(
                f"unknown table {source.name!r}{_suggest(source.name, catalog.names())}"
            )
        table = catalog.get(source.name)
        return Scan(source.name, _columns_of_table(table))
    if isinstance(source, FuncCall):
        entry = _lookup_udf(registry, source.name)
        if len(source.args) != entry.arity:
            raise BindError(
                f"function {source.name!r} takes {entry.arity} argument(s), got {len(source.args)}"
            )
        children = []
        for arg in source.args:
            if arg not in catalog:
                raise BindError(
                    f"unknown table {arg!r} (argument of {source.name!r})"
                    f"{_suggest(arg, catalog.names())}"
                )
            table = catalog.get(arg)
            if len(table.columns) != 1:
                raise BindError(
                    f"table {arg!r} has {len(table.columns)} columns; a bare identifier "
                    f"argument must name a single-column table"
                )
            children.append(Scan(arg, _columns_of_table(table)))
        return TvfSource(source.name, tuple(children), _columns_of_udf(entry))
    if isinstance(source, SubquerySource):
        return bind(source.query, catalog, registry)
    raise BindError(f"unsupported FROM source {source!r}")


def _agg_out_name(agg: Aggregate) -> str:
    if agg.func == "count":
        return "count"
    return f"{agg.func}_{agg.arg}"


def bind(ast: SelectQuery, catalog: Catalog, registry) -> LogicalNode:
    """Resolve names and semantic rules, producing a logical operator tree."""
    node = _bind_source(ast.source, catalog, registry)

    if ast.where:
        preds = []
        for cmp in ast.where:
            idx = _resolve(cmp.column, node.out)
            col = node.out[idx]
            if col.encoding == "pe" or col.ctype.kind in ("tensor", "image"):
                raise BindError(f"cannot filter on {col.ctype} column {cmp.column!r}")
            if col.ctype.kind == "string" and not isinstance(cmp.literal, str):
                raise BindError(
                    f"column {cmp.column!r} is string but literal {cmp.literal!r} is numeric"
                )
            if col.ctype.kind in ("int", "float") and isinstance(cmp.literal, str):
                raise BindError(
                    f"column {cmp.column!r} is numeric but literal {cmp.literal!r} is a string"
                )
            preds.append(Predicate(idx, cmp.op, cmp.literal))
        node = Filter(node, tuple(preds), node.out)

    # A TVF in the select list must be the whole list; it rewrites the relation.
    func_items = [i for i in ast.items if isinstance(i, FuncCall)]
    if func_items:
        if len(ast.items) != 1:
            raise BindError("a function call in the select list must be the only item")
        call = func_items[0]
        entry = _lookup_udf(registry, call.name)
        if len(call.args) != entry.arity:
            raise BindError(
                f"function {call.name!r} takes {entry.arity} argument(s), got {len(call.args)}"
            )
        arg_indices = tuple(_resolve(a, node.out) for a in call.args)
        node = TvfMap(call.name, node, arg_indices, _columns_of_udf(entry))
        if ast.group_by or ast.order_by or ast.limit is not None:
            raise BindError("GROUP BY / ORDER BY / LIMIT not supported with a select-list function")
        return node

    aggregates = [i for i in ast.items if isinstance(i, Aggregate)]
    plain_refs = [i for i in ast.items if isinstance(i, ColumnRef)]
    has_star = any(isinstance(i, Star) for i in ast.items)

    if ast.group_by and not aggregates:
        raise BindError("GROUP BY requires at least one aggregate in the select list")
    if has_star and (aggregates or ast.group_by):
        raise BindError("SELECT * cannot be combined with aggregates or GROUP BY")

    if aggregates:
        key_indices = tuple(_resolve(k, node.out) for k in ast.group_by)
        for k, idx in zip(ast.group_by, key_indices):
            col = node.out[idx]
            if col.ctype.kind == "image":
                raise BindError(f"cannot group by image column {k!r}")
        for ref in plain_refs:
            if ref.name not in ast.group_by:
                raise BindError(
                    f"select item {ref.name!r} is not an aggregate and not in GROUP BY"
                )
        aggs: list[AggSpec] = []
        items: list[tuple[str, int]] = []
        out_cols: list[PlanColumn] = []
        for item in ast.items:
            if isinstance(item, ColumnRef):
                pos = ast.group_by.index(item.name)
                items.append(("key", pos))
                src = node.out[key_indices[pos]]
                out_cols.append(src)
                continue
            assert isinstance(item, Aggregate)
            if item.func == "count":
                col_idx = None
                ctype = INT
            else:
                col_idx = _resolve(item.arg, node.out)
                src = node.out[col_idx]
                if src.ctype.kind not in ("int", "float"):
                    raise BindError(
                        f"{item.func.upper()} needs a numeric column, {item.arg!r} is {src.ctype}"
                    )
                ctype = FLOAT if (item.func == "avg" or src.ctype.kind == "float") else INT
            name = _agg_out_name(item)
            if name in [c.name for c in out_cols]:
                raise BindError(f"duplicate output column {name!r} in select list")
            items.append(("agg", len(aggs)))
            aggs.append(AggSpec(item.func, col_idx, name))
            out_cols.append(PlanColumn(name, ctype, "plain"))
        node = GroupAggregate(node, key_indices, tuple(aggs), tuple(items), tuple(out_cols))
    else:
        if has_star:
            indices = tuple(range(len(node.out)))
        else:
            indices = tuple(_resolve(ref.name, node.out) for ref in plain_refs)
        out = tuple(node.out[i] for i in indices)
        node = Project(node, indices, out)

    if ast.order_by is not None:
        idx = _resolve(ast.order_by.column, node.out, "order-by column")
        col = node.out[idx]
        if col.encoding == "pe" or col.ctype.kind in ("tensor", "image"):
            raise BindError(f"cannot order by {col.ctype} column {col.name!r}")
        node = Sort(node, idx, ast.order_by.descending, node.out)

    if ast.limit is not None:
        if ast.limit < 0:
            raise BindError("LIMIT must be non-negative")
        node = Limit(node, ast.limit, node.out)

    return node


def validate_resolved(node: LogicalNode) -> None:
    """Walk the plan asserting every reference targets its child's output."""
    def width_of(n) -> int:
        return len(n.out)

    def check(n: LogicalNode) -> None:
        if isinstance(n, Scan):
            return
        if isinstance(n, TvfSource):
            for c in n.children:
                check(c)
            return
        child = n.child
        check(child)
        w = width_of(child)
        if isinstance(n, TvfMap):
            refs = n.arg_indices
        elif isinstance(n, Filter):
            refs = tuple(p.column_index for p in n.predicates)
        elif isinstance(n, Project):
            refs = n.indices
        elif isinstance(n, GroupAggregate):
            refs = n.key_indices + tuple(
                a.column_index for a in n.aggs if a.column_index is not None
            )
        elif isinstance(n, Sort):
            refs = (n.key_index,)
        elif isinstance(n, Limit):
            refs = ()
        else:
            raise BindError(f"unknown plan node {type(n).__name__}")
        for r in refs:
            if not 0 <= r < w:
                raise BindError(
                    f"{type(n).__name__} references column {r} of a {w}-column child"
                )

    check(node)
