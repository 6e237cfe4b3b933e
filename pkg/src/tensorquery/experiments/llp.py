"""Learning-from-label-proportions harness over the synthetic cluster data.

For each bag size, a linear classifier TVF is embedded in a trainable
grouped-count query and optimized against per-bag class counts only; test
error is measured per instance on held-out data.  A fully supervised
baseline is the degenerate bag size 1 without noise.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ..compiler import CompileConfig, compile_query
from ..encodings import pe_decode, plain
from ..kernels import UdfRegistry
from ..models import Linear, classifier_tvf
from ..sql import bind, parse
from ..storage import Catalog
from ..tensor import Tensor, no_recording
from ..training import PrivacyParams, TrainConfig, train
from .datasets import BagSpec, gen_llp_dataset, make_bags
from .report import ExperimentReport

DEFAULT_BAG_SIZES = (1, 8, 16, 32, 64, 128, 256, 512)
LLP_QUERY = "SELECT Income, COUNT(*) FROM classify_incomes(Income_Bag) GROUP BY Income"
TABLE_NAME = "Income_Bag"
N_TRAIN = 4000
N_TEST = 1000


def _train_classifier(bags, cfg: TrainConfig, model_seed: int) -> Linear:
    catalog = Catalog()
    registry = UdfRegistry()
    model = Linear(2, 2, np.random.default_rng(model_seed), name="classify_incomes")
    registry.register(classifier_tvf("classify_incomes", model, 2, "Income"))
    catalog.register_tensor(Tensor(bags[0][0]), TABLE_NAME)
    query = compile_query(
        bind(parse(LLP_QUERY), catalog, registry), CompileConfig(trainable=True), registry
    )
    batches = [(TABLE_NAME, Tensor(x), Tensor(counts)) for x, counts in bags]
    train(query, catalog, batches, cfg)
    return model


def instance_error(model: Linear, features: np.ndarray, labels: np.ndarray) -> float:
    """Share of held-out instances whose decoded class disagrees with the label."""
    from ..encodings import pe_encode

    with no_recording():
        pe = pe_encode(model(Tensor(features)))
    pred = pe_decode(pe).values.data
    return float(np.mean(pred != labels))


def run_llp_experiment(bag_sizes: Sequence[int] = DEFAULT_BAG_SIZES,
                       cfg: Optional[TrainConfig] = None,
                       privacy: Optional[PrivacyParams] = None,
                       n_train: int = N_TRAIN, n_test: int = N_TEST,
                       data: Optional[tuple[np.ndarray, np.ndarray]] = None) -> ExperimentReport:
    """Bag-size sweep; returns rows (setting, bag_size, test_error).

    ``data`` may supply (features, labels) from an external CSV in place of
    the synthetic generator.
    """
    cfg = cfg or TrainConfig(iterations=2000)
    ss = np.random.SeedSequence(cfg.seed)
    data_seed, baseline_seed, *size_seeds = [
        int(s.generate_state(1)[0]) for s in ss.spawn(2 + len(bag_sizes))
    ]
    if data is None:
        features, labels = gen_llp_dataset(n_train + n_test, data_seed)
    else:
        features, labels = data
        if len(features) < n_train + n_test:
            raise ValueError(
                f"supplied data has {len(features)} rows, need {n_train + n_test}"
            )
    train_x, train_y = features[:n_train], labels[:n_train]
    test_x, test_y = features[n_train : n_train + n_test], labels[n_train : n_train + n_test]

    report = ExperimentReport(("setting", "bag_size", "test_error"))

    baseline_rng = np.random.default_rng(baseline_seed)
    baseline_bags = make_bags(
        train_x, train_y, BagSpec(1, n_train), privacy=None, rng=baseline_rng
    )
    baseline = _train_classifier(baseline_bags, cfg, baseline_seed)
    report.add("supervised", 1, instance_error(baseline, test_x, test_y))

    setting = "llp_dp" if privacy is not None else "llp"
    for bag_size, seed in zip(bag_sizes, size_seeds):
        rng = np.random.default_rng(seed)
        spec = BagSpec(bag_size, n_train // bag_size)
        bags = make_bags(train_x, train_y, spec, privacy, rng)
        model = _train_classifier(bags, cfg, seed)
        report.add(setting, bag_size, instance_error(model, test_x, test_y))
    return report
