"""Small parametric models embedded in queries through TVFs."""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from .encodings import EncodedTensor, pe_encode
from .kernels import UdfEntry
from .storage import ColumnType, tensor_type
from .tensor import Parameter, Tensor, add, matmul, relu, tensor


class Linear:
    """Affine map x @ W + b with uniform Glorot-style init."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 name: str = "linear", dtype: str = "float32"):
        bound = math.sqrt(6.0 / (in_features + out_features))
        w = rng.uniform(-bound, bound, size=(in_features, out_features))
        self.weight = Parameter(f"{name}.weight", tensor(w, dtype=dtype))
        self.bias = Parameter(f"{name}.bias", tensor(np.zeros(out_features), dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.weight.value), self.bias.value)

    @property
    def parameters(self) -> tuple[Parameter, ...]:
        return (self.weight, self.bias)


class MLP:
    """Fully-connected stack with rectifier hidden activations."""

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator,
                 name: str = "mlp", dtype: str = "float32"):
        if len(sizes) < 2:
            raise ValueError("MLP needs at least input and output sizes")
        self.layers = [
            Linear(sizes[i], sizes[i + 1], rng, name=f"{name}.{i}", dtype=dtype)
            for i in range(len(sizes) - 1)
        ]

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers[:-1]:
            x = relu(layer(x))
        return self.layers[-1](x)

    @property
    def parameters(self) -> tuple[Parameter, ...]:
        return tuple(p for layer in self.layers for p in layer.parameters)


def flatten_rows(x: Tensor) -> Tensor:
    """Collapse each row's trailing dimensions into a feature vector."""
    from .tensor import reshape

    n = int(x.shape[0])
    features = int(np.prod(x.shape[1:], dtype=np.int64)) if x.data.ndim > 1 else 1
    return reshape(x, (n, features))


def classifier_tvf(name: str, model, num_classes: int, out_column: str,
                   flatten: bool = False) -> UdfEntry:
    """TVF wrapping a classifier: rows -> one PE column of class probabilities."""

    def body(col: EncodedTensor) -> tuple[EncodedTensor, ...]:
        x = col.values
        if flatten:
            x = flatten_rows(x)
        return (pe_encode(model(x)),)

    return UdfEntry(
        name,
        ((out_column, tensor_type(num_classes)),),
        1,
        body,
        tuple(model.parameters),
    )
