"""Command-line interface: ingest CSVs, run queries, train, run demos.

Exit codes: 0 success, 1 user error (bad flags, bad SQL, unknown tables),
2 internal error.  ``--seed`` wins over the TENSORQUERY_SEED environment
variable.  Demo reports land in ``./out/<demo>-<timestamp>.csv`` unless
``--out`` is given; a fixed seed reproduces a report byte for byte.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
import traceback
from pathlib import Path

import numpy as np

SEED_ENV_VAR = "TENSORQUERY_SEED"


class UsageError(ValueError):
    pass


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits with 2; we use 1
        raise UsageError(f"{self.prog}: {message}")


def _build_parser() -> _ArgumentParser:
    parser = _ArgumentParser(prog="tensorquery", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load a CSV into the data directory")
    p.add_argument("--csv", required=True)
    p.add_argument("--table", required=True)
    p.add_argument("--schema", required=True, help="name:type,... e.g. Digits:int,Name:string")
    p.add_argument("--data-dir", default="./tqdata")

    p = sub.add_parser("query", help="run a SQL query over ingested tables")
    p.add_argument("sql")
    p.add_argument("--trainable", action="store_true")
    p.add_argument("--explain", action="store_true", help="print the plan, do not execute")
    p.add_argument("--explain-compiled", action="store_true",
                   help="print the compiled operator list, do not execute")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--device", default="cpu")
    p.add_argument("--data-dir", default="./tqdata")

    p = sub.add_parser("train", help="train a trainable query from files")
    p.add_argument("--query-file", required=True)
    p.add_argument("--data", required=True, help=".npy input batches [B, ...]")
    p.add_argument("--targets", required=True, help=".npy target counts [B, k]")
    p.add_argument("--config", required=True, help="JSON training configuration")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("demo", help="run a built-in experiment")
    demo_sub = p.add_subparsers(dest="demo", required=True)

    d = demo_sub.add_parser("llp", help="learning from label proportions sweep")
    d.add_argument("--bag-size", type=int, default=None, help="single bag size (default: sweep)")
    d.add_argument("--epsilon", type=float, default=None, help="enable label privacy")
    d.add_argument("--sensitivity", type=float, default=2.0)
    d.add_argument("--iters", type=int, default=2000)
    d.add_argument("--train-size", type=int, default=4000)
    d.add_argument("--test-size", type=int, default=1000)
    d.add_argument("--data", default=None, help="optional CSV with feature1,feature2,label")
    d.add_argument("--seed", type=int, default=None)
    d.add_argument("--out", default=None)

    d = demo_sub.add_parser("grid", help="count-supervised glyph grid training")
    d.add_argument("--iters", type=int, default=2000)
    d.add_argument("--baseline", action="store_true", help="also run the monolithic regressor")
    d.add_argument("--train-size", type=int, default=500)
    d.add_argument("--test-size", type=int, default=100)
    d.add_argument("--eval-every", type=int, default=None)
    d.add_argument("--seed", type=int, default=None)
    d.add_argument("--out", default=None)
    return parser


def _resolve_seed(flag_value) -> int:
    if flag_value is not None:
        return int(flag_value)
    env = os.environ.get(SEED_ENV_VAR)
    return int(env) if env else 0


def _schema_path(data_dir: Path, table: str) -> Path:
    return data_dir / f"{table}.schema"


def _cmd_ingest(args) -> int:
    from .storage import Catalog, Schema

    schema = Schema.parse(args.schema)
    catalog = Catalog()
    catalog.register_csv(args.csv, args.table, schema)  # validates the file
    data_dir = Path(args.data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    (data_dir / f"{args.table}.csv").write_bytes(Path(args.csv).read_bytes())
    _schema_path(data_dir, args.table).write_text(args.schema, encoding="utf-8")
    print(f"registered table {args.table!r} in {data_dir}")
    return 0


def _load_catalog(data_dir: Path):
    from .storage import Catalog, Schema

    catalog = Catalog()
    if data_dir.is_dir():
        for schema_file in sorted(data_dir.glob("*.schema")):
            table = schema_file.stem
            schema = Schema.parse(schema_file.read_text(encoding="utf-8"))
            catalog.register_csv(str(data_dir / f"{table}.csv"), table, schema)
    return catalog


def _cmd_query(args) -> int:
    from .compiler import CompileConfig, compile_query
    from .kernels import UdfRegistry
    from .sql import bind, explain, lower, parse
    from .storage import export

    catalog = _load_catalog(Path(args.data_dir))
    registry = UdfRegistry()
    plan = lower(bind(parse(args.sql), catalog, registry))
    if args.explain:
        print(explain(plan))
        return 0
    from .compiler import compile_plan

    query = compile_plan(plan, CompileConfig(args.trainable, args.device), registry)
    if args.explain_compiled:
        print(query.explain_compiled())
        return 0
    result = query.run(catalog)
    sys.stdout.write(export(result, args.format).decode("utf-8"))
    if args.format == "json":
        sys.stdout.write("\n")
    return 0


def _cmd_train(args) -> int:
    from .compiler import CompileConfig, compile_query
    from .kernels import UdfRegistry
    from .models import MLP, Linear, classifier_tvf
    from .sql import bind, parse
    from .storage import Catalog
    from .tensor import Tensor
    from .training import TrainConfig, train

    config = json.loads(Path(args.config).read_text(encoding="utf-8"))
    seed = _resolve_seed(args.seed if args.seed is not None else config.get("seed"))
    cfg = TrainConfig(
        iterations=int(config.get("iterations", 10)),
        lr=float(config.get("lr", 0.01)),
        optimizer=config.get("optimizer", "adam"),
        seed=seed,
        loss=config.get("loss", "mse"),
    )
    table = config.get("table")
    tvfs = config.get("tvfs", [])
    if not table or not tvfs:
        raise UsageError("config JSON needs a 'table' name and a 'tvfs' list")

    registry = UdfRegistry()
    rng = np.random.default_rng(seed)
    for spec in tvfs:
        sizes = [int(s) for s in spec["sizes"]]
        if spec.get("model", "linear") == "mlp":
            model = MLP(sizes, rng, name=spec["name"])
        else:
            if len(sizes) != 2:
                raise UsageError("linear model takes sizes [in, out]")
            model = Linear(sizes[0], sizes[1], rng, name=spec["name"])
        registry.register(
            classifier_tvf(spec["name"], model, sizes[-1], spec.get("column", "Class"),
                           flatten=bool(spec.get("flatten", False)))
        )

    inputs = np.load(args.data)
    targets = np.load(args.targets)
    if len(inputs) != len(targets):
        raise UsageError(
            f"data has {len(inputs)} batches but targets has {len(targets)}"
        )
    catalog = Catalog()
    catalog.register_tensor(Tensor(inputs[0].astype(np.float32)), table)
    query = compile_query(
        bind(parse(Path(args.query_file).read_text(encoding="utf-8").strip()),
             catalog, registry),
        CompileConfig(trainable=True),
        registry,
    )
    batches = [
        (table, Tensor(x.astype(np.float32)), Tensor(t.astype(np.float32).reshape(-1)))
        for x, t in zip(inputs, targets)
    ]
    losses = train(query, catalog, batches, cfg)
    print("iteration,loss")
    for i, loss in enumerate(losses):
        print(f"{i},{loss!r}")
    return 0


def _report_path(args, demo: str) -> Path:
    if args.out:
        path = Path(args.out)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        path = Path("out") / f"{demo}-{stamp}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _cmd_demo_llp(args) -> int:
    from .experiments import run_llp_experiment
    from .experiments.llp import DEFAULT_BAG_SIZES
    from .training import PrivacyParams, TrainConfig

    if args.bag_size is not None and args.bag_size < 1:
        raise UsageError(f"--bag-size must be >= 1, got {args.bag_size}")
    seed = _resolve_seed(args.seed)
    bag_sizes = (args.bag_size,) if args.bag_size is not None else DEFAULT_BAG_SIZES
    privacy = (
        PrivacyParams(args.epsilon, args.sensitivity) if args.epsilon is not None else None
    )
    data = None
    if args.data:
        raw = np.loadtxt(args.data, delimiter=",", skiprows=1)
        data = (raw[:, :2].astype(np.float32), raw[:, 2].astype(np.int64))
    report = run_llp_experiment(
        bag_sizes,
        TrainConfig(iterations=args.iters, seed=seed),
        privacy,
        n_train=args.train_size,
        n_test=args.test_size,
        data=data,
    )
    path = _report_path(args, "llp")
    report.write(str(path))
    sys.stdout.write(report.to_csv())
    print(f"report written to {path}")
    return 0


def _cmd_demo_grid(args) -> int:
    from .experiments import run_baseline_regression, run_grid_experiment
    from .training import TrainConfig

    if args.iters < 0:
        raise UsageError(f"--iters must be >= 0, got {args.iters}")
    seed = _resolve_seed(args.seed)
    cfg = TrainConfig(iterations=args.iters, seed=seed)
    report, _ = run_grid_experiment(
        args.iters, cfg, n_train=args.train_size, n_test=args.test_size,
        eval_every=args.eval_every,
    )
    if args.baseline:
        baseline = run_baseline_regression(
            args.iters, cfg, n_train=args.train_size, n_test=args.test_size,
            eval_every=args.eval_every,
        )
        report.rows.extend(baseline.rows)
    path = _report_path(args, "grid")
    report.write(str(path))
    sys.stdout.write(report.to_csv())
    print(f"report written to {path}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "ingest":
            return _cmd_ingest(args)
        if args.command == "query":
            return _cmd_query(args)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "demo":
            return _cmd_demo_llp(args) if args.demo == "llp" else _cmd_demo_grid(args)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
