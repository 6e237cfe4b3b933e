"""Count-supervised glyph-grid experiment and its monolithic baseline.

The neurosymbolic route embeds two small classifiers in a grouped-count
query and trains them from the 10x2 count grid alone; afterwards the digit
classifier is extracted and scored on individually labeled tiles.  The
baseline regresses the same 20 counts directly from raw pixels with one
MLP, sharing loss, optimizer and iteration budget.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Optional

import numpy as np

from ..compiler import CompileConfig, CompiledQuery, compile_query
from ..encodings import EncodedTensor, pe_encode
from ..kernels import UdfEntry, UdfRegistry
from ..models import MLP
from ..sql import bind, parse
from ..storage import Catalog, tensor_type
from ..tensor import Tape, Tensor, backward, no_recording, reshape, transpose
from ..training import AdamState, TrainConfig, adam_step, mse_loss, sgd_step, train
from .datasets import (
    GRID_SIDE,
    GRID_TILES,
    NUM_DIGITS,
    NUM_SIZES,
    TILE,
    GlyphGridSample,
    gen_glyph_grids,
    grid_tiles,
)
from .report import ExperimentReport

GRID_QUERY = "SELECT Digit, Size, COUNT(*) FROM parse_grid(Grids) GROUP BY Digit, Size"
TABLE_NAME = "Grids"
TILE_FEATURES = TILE * TILE


def tiles_of(x: Tensor) -> Tensor:
    """[g, 24, 24] grid batch -> [g*9, 64] tile feature rows (row-major tiles)."""
    g = int(x.shape[0])
    split = reshape(x, (g, GRID_TILES, TILE, GRID_TILES, TILE))
    ordered = transpose(split, (0, 1, 3, 2, 4))
    return reshape(ordered, (g * GRID_TILES * GRID_TILES, TILE_FEATURES))


def grid_parser_tvf(digit_model: MLP, size_model: MLP,
                    name: str = "parse_grid") -> UdfEntry:
    """TVF turning grid images into per-tile digit and size PE columns."""

    def body(col: EncodedTensor) -> tuple[EncodedTensor, ...]:
        tiles = tiles_of(col.values)
        return (pe_encode(digit_model(tiles)), pe_encode(size_model(tiles)))

    return UdfEntry(
        name,
        (("Digit", tensor_type(NUM_DIGITS)), ("Size", tensor_type(NUM_SIZES))),
        1,
        body,
        digit_model.parameters + size_model.parameters,
    )


def build_grid_query(digit_model: MLP, size_model: MLP,
                     first_grid: Tensor) -> tuple[CompiledQuery, Catalog, UdfRegistry]:
    catalog = Catalog()
    registry = UdfRegistry()
    registry.register(grid_parser_tvf(digit_model, size_model))
    catalog.register_tensor(reshape(first_grid, (1, GRID_SIDE, GRID_SIDE)), TABLE_NAME)
    query = compile_query(
        bind(parse(GRID_QUERY), catalog, registry), CompileConfig(trainable=True), registry
    )
    return query, catalog, registry


def _grid_batches(samples: list[GlyphGridSample]):
    batches = []
    for s in samples:
        image = Tensor(s.image.data.reshape((1, GRID_SIDE, GRID_SIDE)))
        target = Tensor(s.target.data.reshape(-1))
        batches.append((TABLE_NAME, image, target))
    return batches


def heldout_count_mae(query: CompiledQuery, catalog: Catalog,
                      samples: list[GlyphGridSample]) -> float:
    """Mean absolute error of predicted vs true counts over held-out grids."""
    total = 0.0
    for s in samples:
        catalog.register_tensor(
            Tensor(s.image.data.reshape((1, GRID_SIDE, GRID_SIDE))), TABLE_NAME
        )
        result = query.run(catalog, record=False)
        pred = result.column("count").values.data
        total += float(np.mean(np.abs(pred - s.target.data.reshape(-1))))
    return total / len(samples)


def tile_accuracy(model: MLP, tiles: np.ndarray, labels: np.ndarray) -> float:
    with no_recording():
        logits = model(Tensor(tiles.reshape(len(tiles), TILE_FEATURES)))
    return float(np.mean(np.argmax(logits.data, axis=1) == labels))


def dense_counts_of(result) -> np.ndarray:
    """Densify an exact grouped-count result into the full 10x2 grid."""
    digits = result.column("Digit").values.data
    sizes = result.column("Size").values.data
    counts = result.column("count").values.data
    grid = np.zeros((NUM_DIGITS, NUM_SIZES), dtype=np.int64)
    grid[digits, sizes] = counts
    return grid


def swap_match_rate(query: CompiledQuery, catalog: Catalog,
                    samples: list[GlyphGridSample]) -> float:
    """Share of grids where exact counts equal rounded soft counts cellwise."""
    exact = query.swap_to_exact()
    matches = 0
    for s in samples:
        catalog.register_tensor(
            Tensor(s.image.data.reshape((1, GRID_SIDE, GRID_SIDE))), TABLE_NAME
        )
        soft = query.run(catalog, record=False).column("count").values.data
        soft_grid = np.rint(soft).astype(np.int64).reshape(NUM_DIGITS, NUM_SIZES)
        exact_grid = dense_counts_of(exact.run(catalog))
        if np.array_equal(soft_grid, exact_grid):
            matches += 1
    return matches / len(samples)


def _checkpoints(iters: int, eval_every: Optional[int]) -> list[int]:
    if iters == 0:
        return []
    step = eval_every or max(1, iters // 8)
    points = list(range(step, iters, step))
    if not points or points[-1] != iters:
        points.append(iters)
    return points


def run_grid_experiment(iters: int, cfg: Optional[TrainConfig] = None,
                        n_train: int = 500, n_test: int = 100,
                        eval_every: Optional[int] = None):
    """Train the grouped-count query on glyph grids; returns (report, models).

    The report logs held-out count MAE per checkpoint, the extracted digit
    classifier's held-out tile accuracy, and the exact-vs-rounded-soft
    agreement rate after the inference swap.
    """
    cfg = cfg or TrainConfig(iterations=iters)
    ss = np.random.SeedSequence(cfg.seed)
    data_seed, test_seed, model_seed = [int(s.generate_state(1)[0]) for s in ss.spawn(3)]
    train_samples = gen_glyph_grids(n_train, data_seed)
    test_samples = gen_glyph_grids(n_test, test_seed)

    model_rng = np.random.default_rng(model_seed)
    digit_model = MLP((TILE_FEATURES, 32, NUM_DIGITS), model_rng, name="digit")
    size_model = MLP((TILE_FEATURES, 32, NUM_SIZES), model_rng, name="size")
    query, catalog, _ = build_grid_query(digit_model, size_model, train_samples[0].image)
    batches = _grid_batches(train_samples)

    report = ExperimentReport(("model", "metric", "step", "value"))
    report.add("neurosymbolic", "heldout_mae", 0, heldout_count_mae(query, catalog, test_samples))

    done = 0
    for point in _checkpoints(iters, eval_every):
        chunk = replace(cfg, iterations=point - done)
        rotated = batches[done % len(batches):] + batches[: done % len(batches)]
        train(query, catalog, rotated, chunk)
        done = point
        report.add(
            "neurosymbolic", "heldout_mae", done, heldout_count_mae(query, catalog, test_samples)
        )

    tiles, tile_digits, _ = grid_tiles(test_samples)
    report.add("neurosymbolic", "tile_accuracy", iters,
               tile_accuracy(digit_model, tiles, tile_digits))
    report.add("neurosymbolic", "swap_match_rate", iters,
               swap_match_rate(query, catalog, test_samples))
    return report, {"digit": digit_model, "size": size_model, "query": query,
                    "catalog": catalog, "test_samples": test_samples}


def run_baseline_regression(iters: int, cfg: Optional[TrainConfig] = None,
                            n_train: int = 500, n_test: int = 100,
                            eval_every: Optional[int] = None) -> ExperimentReport:
    """Monolithic MLP regressing the 20 counts straight from pixels."""
    cfg = cfg or TrainConfig(iterations=iters)
    ss = np.random.SeedSequence(cfg.seed)
    data_seed, test_seed, model_seed = [int(s.generate_state(1)[0]) for s in ss.spawn(3)]
    train_samples = gen_glyph_grids(n_train, data_seed)
    test_samples = gen_glyph_grids(n_test, test_seed)

    features = GRID_SIDE * GRID_SIDE
    model = MLP((features, 128, 64, NUM_DIGITS * NUM_SIZES),
                np.random.default_rng(model_seed), name="regressor")
    params = model.parameters
    state = AdamState.for_params(params)

    def predict(sample: GlyphGridSample) -> np.ndarray:
        with no_recording():
            out = model(Tensor(sample.image.data.reshape(1, features)))
        return out.data.reshape(-1)

    def mae() -> float:
        return float(
            np.mean(
                [np.mean(np.abs(predict(s) - s.target.data.reshape(-1))) for s in test_samples]
            )
        )

    report = ExperimentReport(("model", "metric", "step", "value"))
    report.add("regression", "heldout_mae", 0, mae())

    done = 0
    for point in _checkpoints(iters, eval_every):
        for i in range(done, point):
            s = train_samples[i % len(train_samples)]
            with Tape() as tape:
                pred = model(Tensor(s.image.data.reshape(1, features)))
                loss = mse_loss(reshape(pred, (NUM_DIGITS * NUM_SIZES,)),
                                Tensor(s.target.data.reshape(-1)))
                backward(loss)
                grads = [tape.gradient(p.value) for p in params]
            if cfg.optimizer == "adam":
                adam_step(params, grads, state, cfg.lr)
            else:
                sgd_step(params, grads, cfg.lr)
        done = point
        report.add("regression", "heldout_mae", done, mae())
    return report
