"""Relational operator kernels (exact and soft) and the UDF/TVF registry.

Exact kernels work on raw column buffers with numpy.  Soft kernels are
built from differentiable tensor ops so gradients flow from aggregate
outputs back into any model embedded in the query: a soft count of a
PE column is simply its column sums, and a soft grouped count is the sum
of per-row outer products across the key columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .encodings import EncodedTensor, EncodingError, plain
from .storage import ColumnType
from .tensor import (
    FLOAT_DTYPES,
    Parameter,
    Tensor,
    add,
    div,
    gather,
    mul,
    reduce_sum,
    reshape,
    tensor,
)

AVG_STABILIZER = 1e-12


class KernelError(ValueError):
    """Kernel precondition violation (types, shapes, arity)."""


# ---------------------------------------------------------------------------
# Row selection shared by filter / sort / limit
# ---------------------------------------------------------------------------


def take_rows(col: EncodedTensor, indices: np.ndarray) -> EncodedTensor:
    """Compact a column to the given row indices, preserving gradients."""
    v = col.values
    if v.dtype in FLOAT_DTYPES:
        out = gather(v, Tensor(indices.astype(np.int64)), axis=0)
    else:
        out = Tensor(v.data[indices].copy())
    return EncodedTensor(out, col.encoding)


def comparison_mask(col: EncodedTensor, op: str, literal) -> np.ndarray:
    """Boolean row mask for ``col <op> literal``.

    String comparisons run on dictionary codes; a literal missing from the
    dictionary matches nothing.
    """
    ops = {
        "=": np.equal,
        "<>": np.not_equal,
        "<": np.less,
        ">": np.greater,
        "<=": np.less_equal,
        ">=": np.greater_equal,
    }
    if op not in ops:
        raise KernelError(f"unknown comparison operator {op!r}")
    n = col.row_count
    if col.is_dictionary():
        if not isinstance(literal, str):
            raise KernelError(f"string column compared against {literal!r}")
        code = col.encoding.dictionary.code_of(literal)
        if code is None:
            return np.zeros(n, dtype=bool)
        return ops[op](col.values.data, code)
    if col.is_pe():
        raise KernelError("cannot filter on a probability-encoded column")
    if isinstance(literal, str):
        raise KernelError(f"numeric column compared against string {literal!r}")
    if col.values.data.ndim != 1:
        raise KernelError("filters require scalar columns")
    return ops[op](col.values.data, literal)


def filter_exact(columns: Sequence[EncodedTensor],
                 predicates: Sequence[tuple[int, str, object]]) -> list[EncodedTensor]:
    """Conjunctive filter: AND of per-predicate masks, then row compaction."""
    if not columns:
        return []
    n = columns[0].row_count
    mask = np.ones(n, dtype=bool)
    for idx, op, literal in predicates:
        mask &= comparison_mask(columns[idx], op, literal)
    indices = np.nonzero(mask)[0]
    return [take_rows(c, indices) for c in columns]


# ---------------------------------------------------------------------------
# Exact group-by
# ---------------------------------------------------------------------------


AggInput = tuple[str, Optional[np.ndarray]]  # ("count", None) | ("sum"/"avg", values)


def groupby_exact(keys: Sequence[EncodedTensor],
                  aggs: Sequence[AggInput]) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Group rows by the key columns and aggregate.

    Returns key-value arrays and aggregate arrays over the non-empty groups,
    ordered by ascending combined key (lexicographic over the key columns).
    """
    if not keys:
        raise KernelError("groupby_exact requires at least one key column")
    n = keys[0].row_count
    uniqs: list[np.ndarray] = []
    codes: list[np.ndarray] = []
    for k in keys:
        data = k.values.data
        if k.is_pe():
            raise KernelError("exact group-by cannot consume PE keys; decode first")
        if data.ndim != 1 or data.dtype.kind not in "i":
            raise KernelError(
                f"group-by keys must be integer or dictionary columns, got {k.values.dtype}"
            )
        u, inv = np.unique(data, return_inverse=True)
        uniqs.append(u)
        codes.append(inv.astype(np.int64))
    spaces = [max(1, len(u)) for u in uniqs]
    combined = np.zeros(n, dtype=np.int64)
    for c, s in zip(codes, spaces):
        combined = combined * s + c
    total = int(np.prod(spaces))
    occupied = np.unique(combined) if n else np.array([], dtype=np.int64)

    counts = np.bincount(combined, minlength=total)[occupied] if n else np.array([], dtype=np.int64)
    agg_out: list[np.ndarray] = []
    for func, values in aggs:
        if func == "count":
            agg_out.append(counts.astype(np.int64))
            continue
        if values is None or len(values) != n:
            raise KernelError(f"{func} aggregate needs a value column of {n} rows")
        if values.dtype.kind == "f":
            sums = np.zeros(total, dtype=np.float64)
            np.add.at(sums, combined, values)
            sums = sums[occupied]
        else:
            isums = np.zeros(total, dtype=np.int64)
            np.add.at(isums, combined, values)
            sums = isums[occupied]
        if func == "sum":
            agg_out.append(sums)
        elif func == "avg":
            agg_out.append(sums.astype(np.float64) / counts)
        else:
            raise KernelError(f"unknown aggregate {func!r}")

    key_values: list[np.ndarray] = []
    rem = occupied.copy()
    for u, s in zip(reversed(uniqs), reversed(spaces)):
        key_values.append(u[rem % s])
        rem //= s
    key_values.reverse()
    return key_values, agg_out


# ---------------------------------------------------------------------------
# Soft aggregates over PE columns
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GroupedCounts:
    """Dense aggregate grid over the cross-product of the key spaces."""

    key_spaces: tuple[int, ...]
    counts: Tensor


def soft_count(pe: EncodedTensor) -> Tensor:
    """Differentiable count per class: column sums of the PE matrix."""
    if not pe.is_pe():
        raise EncodingError("soft_count requires a probability-encoded column")
    return reduce_sum(pe.values, axis=0)


def _joint_probabilities(pes: Sequence[EncodedTensor]) -> tuple[Tensor, tuple[int, ...], int]:
    if not pes:
        raise KernelError("soft_groupby requires at least one PE column")
    n = pes[0].row_count
    spaces = []
    for p in pes:
        if not p.is_pe():
            raise EncodingError("soft_groupby keys must be probability-encoded")
        if p.row_count != n:
            raise KernelError(
                f"soft_groupby keys disagree on row count ({p.row_count} vs {n})"
            )
        spaces.append(p.encoding.num_classes)
    joint = pes[0].values
    for j, p in enumerate(pes[1:], start=1):
        joint = mul(
            reshape(joint, joint.shape + (1,)),
            reshape(p.values, (n,) + (1,) * j + (spaces[j],)),
        )
    return joint, tuple(spaces), n


def soft_groupby(pes: Sequence[EncodedTensor], agg: str = "count",
                 values: Optional[Tensor] = None) -> GroupedCounts:
    """Differentiable grouped aggregation over PE key columns.

    counts[c1..cm] = sum_i prod_j P_j[i, c_j]; every cell of the dense grid
    is emitted, including (near-)zero ones.  sum/avg weight each row's joint
    probability by a plain numeric column.
    """
    joint, spaces, n = _joint_probabilities(pes)
    counts = reduce_sum(joint, axis=0)
    if agg == "count":
        return GroupedCounts(spaces, counts)
    if values is None:
        raise KernelError(f"soft {agg} needs a value column")
    if values.shape != (n,):
        raise KernelError(f"value column shape {list(values.shape)} != [{n}]")
    w = values if values.dtype in FLOAT_DTYPES else values.astype("float64")
    weighted = reduce_sum(mul(joint, reshape(w, (n,) + (1,) * len(spaces))), axis=0)
    if agg == "sum":
        return GroupedCounts(spaces, weighted)
    if agg == "avg":
        eps = tensor(AVG_STABILIZER, dtype=counts.dtype)
        return GroupedCounts(spaces, div(weighted, add(counts, eps)))
    raise KernelError(f"unknown soft aggregate {agg!r}")


def dense_exact_counts(codes: Sequence[np.ndarray], spaces: Sequence[int]) -> np.ndarray:
    """Exact contingency grid over fixed key spaces (densified group-by)."""
    spaces = tuple(int(s) for s in spaces)
    n = len(codes[0]) if codes else 0
    combined = np.zeros(n, dtype=np.int64)
    for c, s in zip(codes, spaces):
        if n and (c.min() < 0 or c.max() >= s):
            raise KernelError(f"key code out of range [0, {s})")
        combined = combined * s + c
    total = int(np.prod(spaces))
    return np.bincount(combined, minlength=total).reshape(spaces)


# ---------------------------------------------------------------------------
# Sort / limit
# ---------------------------------------------------------------------------


def stable_order(key: EncodedTensor, descending: bool = False) -> np.ndarray:
    """Stable row order by a numeric or dictionary key."""
    if key.is_pe():
        raise KernelError("cannot sort by a probability-encoded column")
    arr = key.values.data
    if arr.ndim != 1:
        raise KernelError("sort keys must be scalar columns")
    # Negation keeps ties in input order under a stable sort.
    return np.argsort(-arr if descending else arr, kind="stable")


def sort_limit(columns: Sequence[EncodedTensor], key_index: int,
               descending: bool = False, limit: Optional[int] = None) -> list[EncodedTensor]:
    order = stable_order(columns[key_index], descending)
    if limit is not None:
        order = order[: max(0, limit)]
    return [take_rows(c, order) for c in columns]


def limit_rows(columns: Sequence[EncodedTensor], count: int) -> list[EncodedTensor]:
    if not columns:
        return []
    n = columns[0].row_count
    indices = np.arange(min(max(0, count), n))
    return [take_rows(c, indices) for c in columns]


# ---------------------------------------------------------------------------
# UDF / TVF registry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UdfEntry:
    """A registered function: declared outputs, arity, body and parameters.

    ``pe_outputs`` marks tensor[k] outputs as probability-encoded so the
    planner can route them to soft operators.
    """

    name: str
    output_schema: tuple[tuple[str, ColumnType], ...]
    arity: int
    body: Callable[..., tuple[EncodedTensor, ...]]
    params: tuple[Parameter, ...] = ()
    pe_outputs: bool = True


class UdfRegistry:
    """Insertion-ordered function registry; registrations are exclusive."""

    def __init__(self):
        self._entries: dict[str, UdfEntry] = {}

    def register(self, entry: UdfEntry) -> UdfEntry:
        if entry.name in self._entries:
            raise KernelError(f"function {entry.name!r} is already registered")
        seen = set()
        for p in entry.params:
            if p.name in seen:
                raise KernelError(f"duplicate parameter name {p.name!r} in {entry.name!r}")
            seen.add(p.name)
        self._entries[entry.name] = entry
        return entry

    def lookup(self, name: str) -> Optional[UdfEntry]:
        return self._entries.get(name)

    def names(self) -> list[str]:
        return list(self._entries)

    def entries(self) -> list[UdfEntry]:
        return list(self._entries.values())

    def invoke(self, name: str, inputs: Sequence[EncodedTensor]) -> tuple[EncodedTensor, ...]:
        entry = self._entries.get(name)
        if entry is None:
            raise KernelError(f"unknown function {name!r}")
        if len(inputs) != entry.arity:
            raise KernelError(
                f"function {name!r} takes {entry.arity} argument(s), got {len(inputs)}"
            )
        outputs = entry.body(*inputs)
        if isinstance(outputs, EncodedTensor):
            outputs = (outputs,)
        outputs = tuple(outputs)
        self._validate_outputs(entry, outputs)
        return outputs

    @staticmethod
    def _validate_outputs(entry: UdfEntry, outputs: tuple[EncodedTensor, ...]) -> None:
        declared = entry.output_schema
        if len(outputs) != len(declared):
            raise KernelError(
                f"function {entry.name!r} declared {len(declared)} output column(s), "
                f"returned {len(outputs)}"
            )
        rows = {o.row_count for o in outputs}
        if len(rows) > 1:
            raise KernelError(
                f"function {entry.name!r} returned columns with differing row counts {sorted(rows)}"
            )
        for (name, ctype), out in zip(declared, outputs):
            if ctype.kind == "tensor" and entry.pe_outputs:
                if not out.is_pe() or out.encoding.num_classes != ctype.dims[0]:
                    raise KernelError(
                        f"output {name!r} of {entry.name!r} must be PE over {ctype.dims[0]} classes"
                    )
            elif ctype.kind == "string":
                if not out.is_dictionary():
                    raise KernelError(f"output {name!r} of {entry.name!r} must be a string column")
            elif ctype.kind in ("int", "float"):
                if out.values.data.ndim != 1:
                    raise KernelError(f"output {name!r} of {entry.name!r} must be a scalar column")


def make_scoring_udf(name: str, weights: Tensor, scale: float = 1.0,
                     column: str = "Score") -> UdfEntry:
    """Generic scoring hook: rows -> plain float score, x . w / scale.

    Stands in for pretrained similarity models in top-k query shapes; the
    score scale divisor is a caller-supplied parameter.
    """
    if weights.data.ndim != 1:
        raise KernelError("scoring weights must be a vector")
    d = int(weights.shape[0])

    def body(col: EncodedTensor) -> tuple[EncodedTensor, ...]:
        x = col.values
        if x.data.ndim != 2 or x.shape[1] != d:
            raise KernelError(f"scoring input must be [n, {d}]")
        from .tensor import matmul  # local to keep module import light

        scores = mul(
            reshape(matmul(x, reshape(weights, (d, 1))), (x.shape[0],)),
            tensor(1.0 / scale, dtype=x.dtype),
        )
        return (plain(scores),)

    return UdfEntry(name, ((column, ColumnType("float")),), 1, body, (), pe_outputs=False)
