"""Gradient training of compiled queries and Laplace noise for label privacy.

The loop mirrors the usual pattern: fresh gradients, register the
iteration's input table, run the query, mean-squared loss against the
target counts, backpropagate through the recorded tape, optimizer step.
Targets follow the query output layout: the dense aggregate grid flattened
in key order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .compiler import CompiledQuery
from .encodings import EncodedTensor, plain
from .storage import Catalog
from .tensor import Parameter, Tensor, backward, reduce_mean, square, sub


class TrainError(ValueError):
    """Training configuration or loop misuse."""


@dataclass(frozen=True)
class TrainConfig:
    iterations: int
    lr: float = 0.01
    optimizer: str = "adam"
    seed: int = 0
    loss: str = "mse"

    def __post_init__(self):
        if self.lr <= 0:
            raise TrainError(f"lr must be positive, got {self.lr}")
        if self.iterations < 0:
            raise TrainError(f"iterations must be >= 0, got {self.iterations}")
        if self.optimizer not in ("sgd", "adam"):
            raise TrainError(f"unknown optimizer {self.optimizer!r}")
        if self.loss != "mse":
            raise TrainError(f"unknown loss {self.loss!r}")


@dataclass(frozen=True)
class PrivacyParams:
    """Laplace mechanism budget; noise scale is sensitivity / epsilon.

    Default sensitivity 2: changing one instance's label moves one group
    count down by one and another up by one (L1 distance 2).
    """

    epsilon: float
    sensitivity: float = 2.0

    def __post_init__(self):
        if self.epsilon <= 0:
            raise TrainError(f"epsilon must be positive, got {self.epsilon}")
        if self.sensitivity <= 0:
            raise TrainError(f"sensitivity must be positive, got {self.sensitivity}")

    @property
    def scale(self) -> float:
        return self.sensitivity / self.epsilon


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise TrainError(
            f"loss shapes differ: prediction {list(pred.shape)} vs target {list(target.shape)}"
        )
    return reduce_mean(square(sub(pred, target)))


def sgd_step(params: Sequence[Parameter], grads: Sequence[Tensor], lr: float) -> None:
    for p, g in zip(params, grads):
        if not p.requires_grad:
            continue
        if g is None:
            raise TrainError(f"missing gradient for parameter {p.name!r}")
        p.value.data -= (lr * g.data).astype(p.value.data.dtype, copy=False)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: Sequence[Parameter]) -> "AdamState":
        return cls(
            m=[np.zeros_like(p.value.data) for p in params],
            v=[np.zeros_like(p.value.data) for p in params],
        )


def adam_step(params: Sequence[Parameter], grads: Sequence[Tensor], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    state.t += 1
    t = state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if not p.requires_grad:
            continue
        if g is None:
            raise TrainError(f"missing gradient for parameter {p.name!r}")
        gd = g.data.astype(np.float64, copy=False)
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * gd
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * gd * gd
        m_hat = state.m[i] / (1.0 - beta1**t)
        v_hat = state.v[i] / (1.0 - beta2**t)
        update = lr * m_hat / (np.sqrt(v_hat) + eps)
        p.value.data -= update.astype(p.value.data.dtype, copy=False)


Batch = tuple[str, "Tensor | EncodedTensor", Tensor]  # table name, input, target counts


def train(query: CompiledQuery, catalog: Catalog, batches: Iterable[Batch],
          cfg: TrainConfig) -> list[float]:
    """Optimize a trainable query against per-batch target counts.

    Each iteration registers one batch input under its table name (cycling
    through the batches), runs the query, and regresses the aggregate output
    onto the batch target.  Returns the per-iteration losses.
    """
    if not query.config.trainable:
        raise TrainError("query was not compiled with trainable=True")
    params = query.parameters()
    if not params:
        raise TrainError("query has no trainable parameters")
    data = list(batches)
    if cfg.iterations > 0 and not data:
        raise TrainError("no batches supplied")
    state = AdamState.for_params(params) if cfg.optimizer == "adam" else None

    losses: list[float] = []
    try:
        for i in range(cfg.iterations):
            table_name, values, target = data[i % len(data)]
            catalog.register_tensor(values, table_name)
            result = query.run(catalog)
            pred = prediction_vector(result, query)
            if pred.shape != target.shape:
                raise TrainError(
                    f"target shape {list(target.shape)} does not match query output "
                    f"{list(pred.shape)}"
                )
            loss = mse_loss(pred, target)
            backward(loss)
            tape = query.tape
            grads = [tape.gradient(p.value) if p.requires_grad else None for p in params]
            for p, g in zip(params, grads):
                if p.requires_grad and g is None:
                    raise TrainError(f"missing gradient for parameter {p.name!r}")
            if cfg.optimizer == "adam":
                adam_step(params, grads, state, cfg.lr)
            else:
                sgd_step(params, grads, cfg.lr)
            losses.append(float(loss.item()))
            query.end_session()
    finally:
        query.end_session()
    return losses


def prediction_vector(result, query: CompiledQuery) -> Tensor:
    """The trainable output of a query result: its single float aggregate."""
    float_cols = [
        col.values
        for col in result.columns
        if col.is_plain() and col.values.dtype in ("float64", "float32")
        and col.values.data.ndim == 1
    ]
    if len(float_cols) != 1:
        raise TrainError(
            f"expected exactly one float aggregate column to train on, found {len(float_cols)}"
        )
    return float_cols[0]


def laplace_noise(counts: Tensor, pp: PrivacyParams, rng: np.random.Generator) -> Tensor:
    """Add i.i.d. Laplace(0, sensitivity/epsilon) noise to each count.

    Sampled by inverse CDF: x = -b * sign(u) * ln(1 - 2|u|) with
    u ~ Uniform(-1/2, 1/2), so results are reproducible under a seeded rng.
    """
    b = pp.scale
    u = rng.uniform(-0.5, 0.5, size=counts.shape)
    inner = np.maximum(1.0 - 2.0 * np.abs(u), np.finfo(np.float64).tiny)
    noise = -b * np.sign(u) * np.log(inner)
    return Tensor((counts.data + noise).astype(counts.data.dtype, copy=False))
