"""Lowering: logical plan -> physical plan with implementation tags.

The physical tree mirrors the logical one; each node carries an ``impl``
tag, defaulting to "exact".  Query compilation retags nodes (and inserts
decode steps) according to the trainable flag.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .binder import (
    Filter,
    GroupAggregate,
    Limit,
    LogicalNode,
    OutputSchema,
    Project,
    Scan,
    Sort,
    TvfMap,
    TvfSource,
)


@dataclass(frozen=True)
class PhysicalNode:
    kind: str  # scan | tvf_source | tvf_map | filter | project | group_aggregate | sort | limit | pe_decode
    impl: str  # "exact" | "soft"
    logical: LogicalNode | None
    children: tuple["PhysicalNode", ...]
    out: OutputSchema


_KINDS = {
    Scan: "scan",
    TvfSource: "tvf_source",
    TvfMap: "tvf_map",
    Filter: "filter",
    Project: "project",
    GroupAggregate: "group_aggregate",
    Sort: "sort",
    Limit: "limit",
}


def lower(logical: LogicalNode) -> PhysicalNode:
    """Tag every node with the default exact implementation."""
    kind = _KINDS[type(logical)]
    if isinstance(logical, Scan):
        children: tuple[PhysicalNode, ...] = ()
    elif isinstance(logical, TvfSource):
        children = tuple(lower(c) for c in logical.children)
    else:
        children = (lower(logical.child),)
    return PhysicalNode(kind, "exact", logical, children, logical.out)


def retag(node: PhysicalNode, impl: str) -> PhysicalNode:
    return replace(node, impl=impl)


def _describe(node: PhysicalNode) -> str:
    log = node.logical
    if node.kind == "scan":
        return log.table
    if node.kind in ("tvf_source", "tvf_map"):
        return log.name
    if node.kind == "filter":
        return " AND ".join(
            f"{log.out[p.column_index].name} {p.op} {p.literal!r}" for p in log.predicates
        )
    if node.kind == "project":
        return ", ".join(c.name for c in node.out)
    if node.kind == "group_aggregate":
        keys = ", ".join(log.child.out[i].name for i in log.key_indices)
        aggs = ", ".join(a.out_name for a in log.aggs)
        return f"keys=[{keys}] aggs=[{aggs}]"
    if node.kind == "sort":
        direction = "desc" if log.descending else "asc"
        return f"{log.out[log.key_index].name} {direction}"
    if node.kind == "limit":
        return str(log.count)
    if node.kind == "pe_decode":
        return ", ".join(c.name for c in node.out)
    return ""


def explain(node: PhysicalNode, indent: int = 0) -> str:
    """Indented plan tree; format is stable and covered by golden tests."""
    detail = _describe(node)
    line = "  " * indent + node.kind + (f"({detail})" if detail else "()")
    lines = [line]
    for child in node.children:
        lines.append(explain(child, indent + 1))
    return "\n".join(lines)
