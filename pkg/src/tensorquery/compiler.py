"""Query compilation: physical plan -> executable tensor-operator program.

A compiled query is a post-order list of operator instances driving a value
stack of intermediate relations.  The trainable flag picks implementations:

* trainable=True: group aggregation over probability-encoded keys runs the
  soft (differentiable) kernels, and running the query records a tape so a
  loss over its output can backpropagate into embedded model parameters.
  Sort and Limit have no soft variant and are rejected.
* trainable=False: every operator is exact; a decode step is inserted after
  each PE-producing node (per-row argmax), removing approximation error.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .encodings import EncodedTensor, pe_decode, plain
from .kernels import (
    KernelError,
    UdfRegistry,
    filter_exact,
    groupby_exact,
    limit_rows,
    soft_count,
    soft_groupby,
    sort_limit,
    take_rows,
)
from .sql.binder import (
    Filter,
    GroupAggregate,
    Limit,
    LogicalNode,
    Project,
    Scan,
    Sort,
    TvfMap,
    TvfSource,
)
from .sql.planner import PhysicalNode, lower
from .storage import Catalog, StorageError, Table, table_from_columns
from .tensor import FLOAT_DTYPES, Parameter, Tape, Tensor, reduce_mean, reduce_sum, tensor


class CompileError(ValueError):
    """Plan cannot be compiled under the given configuration."""


@dataclass(frozen=True)
class CompileConfig:
    trainable: bool = False
    device: str = "cpu"


@dataclass(frozen=True)
class Relation:
    """Intermediate execution value: named encoded columns."""

    names: tuple[str, ...]
    columns: tuple[EncodedTensor, ...]

    @property
    def row_count(self) -> int:
        return self.columns[0].row_count if self.columns else 0


class Op:
    kind = "op"
    impl = "exact"

    def execute(self, stack: list[Relation], ctx: "RunContext") -> None:
        raise NotImplementedError

    def describe(self) -> str:
        return f"{self.kind}[{self.impl}]"


@dataclass
class RunContext:
    catalog: Catalog
    registry: UdfRegistry
    device: str


class ScanOp(Op):
    kind = "scan"

    def __init__(self, table: str):
        self.table = table

    def execute(self, stack, ctx):
        table = ctx.catalog.get(self.table)
        if table.device != "cpu":
            raise StorageError(
                f"table {self.table!r} is placed on {table.device!r}; only cpu executes"
            )
        stack.append(Relation(tuple(table.schema.names), tuple(table.columns)))


class TvfOp(Op):
    kind = "tvf_call"

    def __init__(self, name: str, arity: int, arg_indices: Optional[tuple[int, ...]],
                 out_names: tuple[str, ...]):
        self.name = name
        self.arity = arity
        self.arg_indices = arg_indices  # None: consume whole relations (FROM position)
        self.out_names = out_names

    def execute(self, stack, ctx):
        if self.arg_indices is None:
            rels = [stack.pop() for _ in range(self.arity)][::-1]
            inputs = [r.columns[0] for r in rels]
        else:
            rel = stack.pop()
            inputs = [rel.columns[i] for i in self.arg_indices]
        outputs = ctx.registry.invoke(self.name, inputs)
        stack.append(Relation(self.out_names, tuple(outputs)))


class PeDecodeOp(Op):
    kind = "pe_decode"

    def __init__(self, indices: tuple[int, ...]):
        self.indices = indices

    def execute(self, stack, ctx):
        rel = stack.pop()
        cols = list(rel.columns)
        for i in self.indices:
            cols[i] = pe_decode(cols[i])
        stack.append(Relation(rel.names, tuple(cols)))


class FilterOp(Op):
    kind = "filter"

    def __init__(self, predicates: tuple, impl: str):
        self.predicates = predicates
        self.impl = impl

    def execute(self, stack, ctx):
        rel = stack.pop()
        preds = [(p.column_index, p.op, p.literal) for p in self.predicates]
        cols = filter_exact(rel.columns, preds)
        stack.append(Relation(rel.names, tuple(cols)))


class ProjectOp(Op):
    kind = "project"

    def __init__(self, indices: tuple[int, ...], impl: str):
        self.indices = indices
        self.impl = impl

    def execute(self, stack, ctx):
        rel = stack.pop()
        stack.append(
            Relation(
                tuple(rel.names[i] for i in self.indices),
                tuple(rel.columns[i] for i in self.indices),
            )
        )


class GroupAggExactOp(Op):
    kind = "group_aggregate"

    def __init__(self, node: GroupAggregate):
        self.node = node

    def execute(self, stack, ctx):
        rel = stack.pop()
        node = self.node
        keys = [rel.columns[i] for i in node.key_indices]
        agg_inputs = []
        for a in node.aggs:
            if a.func == "count":
                agg_inputs.append(("count", None))
            else:
                col = rel.columns[a.column_index]
                agg_inputs.append((a.func, col.values.data))
        if keys:
            key_values, agg_values = groupby_exact(keys, agg_inputs)
        else:
            key_values, agg_values = [], _global_aggregate(rel, agg_inputs)
        names, cols = [], []
        for role, pos in node.items:
            if role == "key":
                src = keys[pos]
                out_name = node.out[len(cols)].name
                values = Tensor(key_values[pos])
                cols.append(EncodedTensor(values, src.encoding))
                names.append(out_name)
            else:
                spec = node.aggs[pos]
                names.append(spec.out_name)
                cols.append(plain(Tensor(np.asarray(agg_values[pos]))))
        stack.append(Relation(tuple(names), tuple(cols)))


def _global_aggregate(rel: Relation, agg_inputs) -> list[np.ndarray]:
    out = []
    for func, values in agg_inputs:
        if func == "count":
            out.append(np.asarray([rel.row_count], dtype=np.int64))
        elif func == "sum":
            out.append(np.asarray([values.sum()], dtype=values.dtype))
        else:
            out.append(np.asarray([values.mean() if len(values) else np.nan]))
    return out


class GroupAggSoftOp(Op):
    kind = "group_aggregate"
    impl = "soft"

    def __init__(self, node: GroupAggregate):
        self.node = node

    def execute(self, stack, ctx):
        rel = stack.pop()
        node = self.node
        pes = [rel.columns[i] for i in node.key_indices]
        spaces = tuple(p.encoding.num_classes for p in pes)
        grids = []
        for a in node.aggs:
            if a.func == "count":
                grids.append(soft_groupby(pes, "count"))
            else:
                values = rel.columns[a.column_index].values
                grids.append(soft_groupby(pes, a.func, values))
        total = int(np.prod(spaces))
        key_grids = _dense_key_grids(spaces)
        names, cols = [], []
        for role, pos in node.items:
            if role == "key":
                out_name = node.out[len(cols)].name
                names.append(out_name)
                cols.append(plain(Tensor(key_grids[pos])))
            else:
                spec = node.aggs[pos]
                names.append(spec.out_name)
                flat = _flatten_grid(grids[pos].counts, total)
                cols.append(plain(flat))
        stack.append(Relation(tuple(names), tuple(cols)))


def _dense_key_grids(spaces: tuple[int, ...]) -> list[np.ndarray]:
    """Row-major enumeration of the key cross-product, one array per key."""
    grids = np.meshgrid(*[np.arange(s, dtype=np.int64) for s in spaces], indexing="ij")
    return [g.reshape(-1) for g in grids]


def _flatten_grid(counts: Tensor, total: int) -> Tensor:
    from .tensor import reshape

    return reshape(counts, (total,))


class GlobalAggSoftOp(Op):
    """Trainable-path global aggregates built from differentiable reductions."""

    kind = "group_aggregate"
    impl = "soft"

    def __init__(self, node: GroupAggregate):
        self.node = node

    def execute(self, stack, ctx):
        rel = stack.pop()
        names, cols = [], []
        for spec in self.node.aggs:
            names.append(spec.out_name)
            if spec.func == "count":
                cols.append(plain(tensor([float(rel.row_count)])))
                continue
            v = rel.columns[spec.column_index].values
            v = v if v.dtype in FLOAT_DTYPES else v.astype("float64")
            red = reduce_sum(v) if spec.func == "sum" else reduce_mean(v)
            from .tensor import reshape

            cols.append(plain(reshape(red, (1,))))
        stack.append(Relation(tuple(names), tuple(cols)))


class SortOp(Op):
    kind = "sort"

    def __init__(self, key_index: int, descending: bool):
        self.key_index = key_index
        self.descending = descending

    def execute(self, stack, ctx):
        rel = stack.pop()
        cols = sort_limit(rel.columns, self.key_index, self.descending, limit=None)
        stack.append(Relation(rel.names, tuple(cols)))


class LimitOp(Op):
    kind = "limit"

    def __init__(self, count: int):
        self.count = count

    def execute(self, stack, ctx):
        rel = stack.pop()
        stack.append(Relation(rel.names, tuple(limit_rows(rel.columns, self.count))))


# ---------------------------------------------------------------------------
# Compilation
# ---------------------------------------------------------------------------


class CompiledQuery:
    """Runnable operator program with enumerable trainable parameters."""

    def __init__(self, program: list[Op], params: tuple[Parameter, ...],
                 output_names: tuple[str, ...], plan: PhysicalNode,
                 config: CompileConfig, registry: UdfRegistry):
        self.program = program
        self._params = params
        self.output_names = output_names
        self.plan = plan
        self.config = config
        self.registry = registry
        self._tape: Optional[Tape] = None

    def parameters(self) -> list[Parameter]:
        """Parameters of referenced functions, in registration order."""
        return list(self._params)

    @property
    def tape(self) -> Optional[Tape]:
        return self._tape

    def end_session(self) -> None:
        if self._tape is not None:
            self._tape.deactivate()
            self._tape = None

    def run(self, catalog: Catalog, record: Optional[bool] = None) -> Table:
        """Execute against the catalog; trainable queries record a tape.

        ``record=False`` forces tape-free execution (evaluation loops);
        the default records exactly when a gradient could be wanted.
        """
        if self.config.device != "cpu":
            raise CompileError(f"device {self.config.device!r} is not executable; use cpu")
        should_record = self.config.trainable and any(
            p.requires_grad for p in self._params
        )
        if record is not None:
            should_record = should_record and record
        self.end_session()
        if should_record:
            self._tape = Tape().activate()
        try:
            ctx = RunContext(catalog, self.registry, self.config.device)
            stack: list[Relation] = []
            for op in self.program:
                op.execute(stack, ctx)
            if len(stack) != 1:
                raise CompileError(f"program left {len(stack)} values on the stack")
            rel = stack[0]
            return table_from_columns(rel.names, rel.columns)
        finally:
            # Keep the tape active for a downstream loss while training;
            # tape-free runs have nothing to keep.
            if not should_record:
                self.end_session()

    def swap_to_exact(self) -> "CompiledQuery":
        """Recompile with exact operators, sharing the trained parameters."""
        self.end_session()
        return compile_plan(self.plan, replace(self.config, trainable=False), self.registry)

    def explain_compiled(self) -> str:
        return "\n".join(op.describe() for op in self.program)


def compile_query(logical: LogicalNode, config: CompileConfig,
                  registry: UdfRegistry) -> CompiledQuery:
    return compile_plan(lower(logical), config, registry)


def compile_plan(plan: PhysicalNode, config: CompileConfig,
                 registry: UdfRegistry) -> CompiledQuery:
    program: list[Op] = []
    referenced: set[str] = set()
    _emit(plan, config, registry, program, referenced)
    params: list[Parameter] = []
    for entry in registry.entries():
        if entry.name in referenced:
            params.extend(entry.params)
    out_names = tuple(c.name for c in plan.out)
    return CompiledQuery(program, tuple(params), out_names, plan, config, registry)


def _pe_indices(node: PhysicalNode) -> tuple[int, ...]:
    return tuple(i for i, c in enumerate(node.out) if c.encoding == "pe")


def _emit(node: PhysicalNode, config: CompileConfig, registry: UdfRegistry,
          program: list[Op], referenced: set[str]) -> None:
    log = node.logical
    if node.kind == "scan":
        program.append(ScanOp(log.table))
        return

    if node.kind in ("tvf_source", "tvf_map"):
        entry = registry.lookup(log.name)
        if entry is None:
            raise CompileError(f"unknown function {log.name!r}")
        referenced.add(log.name)
        if node.kind == "tvf_source":
            for child in node.children:
                _emit(child, config, registry, program, referenced)
            program.append(
                TvfOp(log.name, entry.arity, None, tuple(c.name for c in node.out))
            )
        else:
            _emit(node.children[0], config, registry, program, referenced)
            program.append(
                TvfOp(log.name, entry.arity, log.arg_indices, tuple(c.name for c in node.out))
            )
        if not config.trainable:
            pe = _pe_indices(node)
            if pe:
                program.append(PeDecodeOp(pe))
        return

    _emit(node.children[0], config, registry, program, referenced)
    child = node.children[0]
    downstream_of_pe = bool(_pe_indices(child)) and config.trainable

    if node.kind == "filter":
        program.append(FilterOp(log.predicates, "soft" if downstream_of_pe else "exact"))
        return
    if node.kind == "project":
        program.append(ProjectOp(log.indices, "soft" if downstream_of_pe else "exact"))
        return
    if node.kind == "group_aggregate":
        key_cols = [child.out[i] for i in log.key_indices]
        if config.trainable:
            if not key_cols:
                program.append(GlobalAggSoftOp(log))
                return
            non_pe = [c.name for c in key_cols if c.encoding != "pe"]
            if non_pe:
                raise CompileError(
                    f"trainable group-by requires probability-encoded keys; "
                    f"{non_pe} are plain"
                )
            program.append(GroupAggSoftOp(log))
            return
        program.append(GroupAggExactOp(log))
        return
    if node.kind == "sort":
        if config.trainable:
            raise CompileError("Sort has no differentiable implementation; "
                               "compile with trainable=False")
        program.append(SortOp(log.key_index, log.descending))
        return
    if node.kind == "limit":
        if config.trainable:
            raise CompileError("Limit has no differentiable implementation; "
                               "compile with trainable=False")
        program.append(LimitOp(log.count))
        return
    raise CompileError(f"cannot compile plan node kind {node.kind!r}")
