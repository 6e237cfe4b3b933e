"""tensorquery: a columnar query engine over tensors with trainable queries.

Relational data lives in encoded tensor columns; a SQL subset compiles to
a program of tensor operators.  When compiled trainable, grouped counts
run as differentiable soft operators so models embedded in the query can
be optimized from query outputs alone, then swapped back to exact
operators for inference.
"""

from .compiler import CompileConfig, CompiledQuery, CompileError, compile_plan, compile_query
from .encodings import (
    DictionaryEncoding,
    EncodedTensor,
    EncodingError,
    PlainEncoding,
    ProbabilityEncoding,
    StringDictionary,
    dict_decode,
    dict_encode,
    one_hot_pe,
    pe_decode,
    pe_encode,
    plain,
)
from .kernels import (
    GroupedCounts,
    KernelError,
    UdfEntry,
    UdfRegistry,
    make_scoring_udf,
    soft_count,
    soft_groupby,
)
from .models import MLP, Linear, classifier_tvf
from .sql import BindError, SqlSyntaxError, bind, explain, lower, parse, to_sql
from .storage import (
    Catalog,
    ColumnType,
    Schema,
    StorageError,
    Table,
    export,
    table_from_columns,
)
from .tensor import (
    Parameter,
    Tape,
    Tensor,
    TensorError,
    backward,
    create,
    grad_check,
    tensor,
)
from .training import (
    AdamState,
    PrivacyParams,
    TrainConfig,
    TrainError,
    adam_step,
    laplace_noise,
    mse_loss,
    sgd_step,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "BindError",
    "Catalog",
    "ColumnType",
    "CompileConfig",
    "CompileError",
    "CompiledQuery",
    "DictionaryEncoding",
    "EncodedTensor",
    "EncodingError",
    "GroupedCounts",
    "KernelError",
    "Linear",
    "MLP",
    "Parameter",
    "PlainEncoding",
    "PrivacyParams",
    "ProbabilityEncoding",
    "Schema",
    "SqlSyntaxError",
    "StorageError",
    "StringDictionary",
    "Table",
    "Tape",
    "Tensor",
    "TensorError",
    "TrainConfig",
    "TrainError",
    "UdfEntry",
    "UdfRegistry",
    "adam_step",
    "backward",
    "bind",
    "classifier_tvf",
    "compile_plan",
    "compile_query",
    "create",
    "dict_decode",
    "dict_encode",
    "explain",
    "export",
    "grad_check",
    "laplace_noise",
    "lower",
    "make_scoring_udf",
    "mse_loss",
    "one_hot_pe",
    "parse",
    "pe_decode",
    "pe_encode",
    "plain",
    "sgd_step",
    "soft_count",
    "soft_groupby",
    "table_from_columns",
    "tensor",
    "to_sql",
    "train",
]
