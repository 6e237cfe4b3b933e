"""SQL frontend: tokenizer, parser, binder and logical-to-physical planner."""

from .ast import (
    Aggregate,
    ColumnRef,
    Comparison,
    FuncCall,
    OrderSpec,
    SelectQuery,
    Star,
    SubquerySource,
    TableRef,
    to_sql,
)
from .parser import SqlSyntaxError, parse
from .binder import BindError, bind
from .planner import explain, lower

__all__ = [
    "Aggregate",
    "BindError",
    "ColumnRef",
    "Comparison",
    "FuncCall",
    "OrderSpec",
    "SelectQuery",
    "SqlSyntaxError",
    "Star",
    "SubquerySource",
    "TableRef",
    "bind",
    "explain",
    "lower",
    "parse",
    "to_sql",
]
