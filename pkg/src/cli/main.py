"""``nodedrop`` command line: train, eval, scan, compact, report.

Exit codes: 0 success, 2 usage/config, 3 format/version, 4 runtime.
Command results go to stdout; diagnostics are structlog events on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd
import structlog
from pydantic import ValidationError

from data.datasets import Dataset, load_cifar10_dir, load_mnist_dir
from data.synthetic import SyntheticConfig, make_synthetic
from models import checkpoint
from models.network import Network
from src.cli.config import DATA_DIR_ENV, RunConfig, merge_sources, parse_config_file
from src.errors import ConfigError, NodeDropError
from src.nodedrop.compact import compact
from src.nodedrop.scan import scan_network
from src.tensor.ops import dtype_for, make_rng
from src.training.engine import MetricsLog, evaluate, train

log = structlog.get_logger()

LOG_LEVEL_ENV = "NODEDROP_LOG_LEVEL"
RUN_CONFIG_FILE = "run_config.json"
METRICS_FILE = "metrics.csv"
LIVENESS_FILE = "liveness.csv"
CHECKPOINT_FILE = "final.ckpt"
REPORT_COLUMNS = [
    "run",
    "preset",
    "mode",
    "lambda",
    "epochs",
    "test_acc",
    "live_nodes",
    "live_params",
    "total_params",
    "pruned_pct",
    "factor",
]


def configure_logging(level: str = "info") -> None:
    numeric = logging.getLevelName(level.upper())
    if not isinstance(numeric, int):
        raise ConfigError(f"unknown log level '{level}'")
    structlog.configure(
        processors=[
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.dev.ConsoleRenderer(colors=False),
        ],
        wrapper_class=structlog.make_filtering_bound_logger(numeric),
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=False,
    )


# ------------------------------- Datasets ----------------------------------------


def load_datasets(
    kind: str, data_dir: Optional[Path], input_shape: Tuple[int, ...], limits: Tuple[Any, Any]
) -> Tuple[Dataset, Dataset]:
    train_limit, test_limit = limits
    if kind == "synthetic":
        cfg = SyntheticConfig(
            n_train=train_limit or SyntheticConfig.n_train,
            n_test=test_limit or SyntheticConfig.n_test,
            image_shape=tuple(input_shape),
        )
        return make_synthetic(cfg)
    if data_dir is None:
        raise ConfigError(f"--dataset-dir (or ${DATA_DIR_ENV}) is required for {kind}")
    if not data_dir.is_dir():
        raise ConfigError(f"dataset directory not found: {data_dir}")
    loader = load_mnist_dir if kind == "mnist" else load_cifar10_dir
    train_set, test_set = loader(data_dir)
    if train_limit:
        train_set = train_set.subset(train_limit)
    if test_limit:
        test_set = test_set.subset(test_limit)
    return train_set, test_set


def _dataset_for_shape(input_shape: Sequence[int]) -> str:
    return "cifar10" if tuple(input_shape) == (3, 32, 32) else "mnist"


# ------------------------------- Commands ----------------------------------------


def _run_config(args: argparse.Namespace) -> RunConfig:
    file_values = parse_config_file(args.config) if getattr(args, "config", None) else None
    cli_values = {
        k: v for k, v in vars(args).items() if k not in {"command", "config", "log_level", "func"}
    }
    return merge_sources(file_values, cli_values)


def cmd_train(args: argparse.Namespace) -> int:
    run = _run_config(args)
    preset = run.resolve_preset()
    config = run.train_config(preset)
    kind = run.dataset or preset.dataset
    train_set, test_set = load_datasets(
        kind, run.data_dir(), preset.input_shape, (run.train_limit, run.test_limit)
    )
    model = Network.build(
        preset.specs,
        preset.input_shape,
        preset.num_classes,
        rng=make_rng(run.seed),
        dtype=dtype_for(run.precision),
    )
    out_dir = Path(run.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sidecar = {
        "run": run.model_dump(mode="json", by_alias=True),
        "preset": preset.name,
        "dataset": kind,
        "train": config.model_dump(mode="json", by_alias=True),
        "initial_params": model.param_count(),
        "prunable_nodes": preset.prunable_nodes,
    }
    (out_dir / RUN_CONFIG_FILE).write_text(json.dumps(sidecar, indent=2, sort_keys=True))

    model, metrics = train(model, train_set, test_set, config)
    metrics.to_csv(out_dir / METRICS_FILE)
    report = scan_network(model, config.nodedrop)
    report.to_csv(out_dir / LIVENESS_FILE)
    meta = checkpoint.CheckpointMeta(
        epoch=config.epochs,
        seed=config.seed,
        nodedrop=config.nodedrop,
        metrics=metrics.last() or {},
        preset=preset.name,
    )
    checkpoint.save(model, meta, out_dir / CHECKPOINT_FILE)
    print(report.summary())
    print(f"wrote {out_dir / METRICS_FILE}, {out_dir / LIVENESS_FILE}, {out_dir / CHECKPOINT_FILE}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    model, meta = checkpoint.load(args.checkpoint)
    kind = args.dataset or _dataset_for_shape(model.input_shape)
    data_dir = args.dataset_dir or os.environ.get(DATA_DIR_ENV)
    _, test_set = load_datasets(
        kind, Path(data_dir) if data_dir else None, model.input_shape, (None, args.test_limit)
    )
    accuracy = evaluate(model, test_set)
    correct = int(round(accuracy * len(test_set)))
    print(f"accuracy: {accuracy!r} ({correct}/{len(test_set)})")
    return 0


def _scan_config(meta: checkpoint.CheckpointMeta, batch_size: Optional[int]):
    if batch_size is None:
        return meta.nodedrop
    return meta.nodedrop.model_copy(update={"batch_size": batch_size})


def cmd_scan(args: argparse.Namespace) -> int:
    model, meta = checkpoint.load(args.checkpoint)
    report = scan_network(model, _scan_config(meta, args.batch_size))
    print(report.summary())
    if args.out:
        report.to_csv(args.out)
        print(f"wrote {args.out}")
    return 0


def cmd_compact(args: argparse.Namespace) -> int:
    source = Path(args.checkpoint)
    out = Path(args.out)
    if out.exists() and out.resolve() == source.resolve():
        raise ConfigError("compact refuses to overwrite its input checkpoint; pick another --out")
    model, meta = checkpoint.load(source)
    report = scan_network(model, _scan_config(meta, args.batch_size))
    pruned, _ = compact(model, report, allow_degenerate=args.allow_degenerate)
    checkpoint.save(pruned, meta, out)
    before, after = model.param_count(), pruned.param_count()
    factor = f"{before / after:.2f}x" if after else "inf"
    print(f"parameters: {before} -> {after} (factor {factor})")
    print(f"nodes removed: {report.dead_nodes} of {report.total_nodes} prunable")
    print(f"wrote {out}")
    return 0


def _run_row(path: Path) -> Dict[str, Any]:
    run_dir = path if path.is_dir() else path.parent
    metrics_path = path if path.is_file() else run_dir / METRICS_FILE
    if not metrics_path.is_file():
        raise ConfigError(f"no metrics found at {metrics_path}")
    last = MetricsLog.from_csv(metrics_path).last()
    if last is None:
        raise ConfigError(f"{metrics_path} has no completed epochs")
    sidecar_path = run_dir / RUN_CONFIG_FILE
    sidecar = json.loads(sidecar_path.read_text()) if sidecar_path.is_file() else {}
    run = sidecar.get("run", {})
    total = sidecar.get("initial_params")
    live = last["live_params"]
    return {
        "run": str(run_dir),
        "preset": sidecar.get("preset"),
        "mode": sidecar.get("train", {}).get("nodedrop", {}).get("mode", run.get("mode")),
        "lambda": run.get("lambda"),
        "epochs": int(last["epoch"]),
        "test_acc": last["test_acc"],
        "live_nodes": last["live_nodes"],
        "live_params": live,
        "total_params": total,
        "pruned_pct": 100.0 * (1 - live / total) if total else None,
        "factor": total / live if total and live else None,
    }


def cmd_report(args: argparse.Namespace) -> int:
    rows = [_run_row(Path(p)) for p in args.runs]
    frame = pd.DataFrame(rows, columns=REPORT_COLUMNS).sort_values(
        ["mode", "lambda"], kind="stable", na_position="first"
    )
    print(frame.to_string(index=False))
    if args.out:
        frame.to_csv(args.out, index=False)
        print(f"wrote {args.out}")
    return 0


# ------------------------------- Parser ------------------------------------------


def _add_dataset_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    p.add_argument(
        "--dataset", choices=["mnist", "cifar10", "synthetic"], default=default,
        help="Dataset (default: the preset's, or inferred from the checkpoint)",
    )
    p.add_argument("--dataset-dir", default=default, help="Directory with the dataset files")
    p.add_argument(
        "--test-limit", type=int, default=default, help="Use only the first N test samples"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nodedrop", description="NodeDrop training and pruning.")
    parser.add_argument(
        "--log-level",
        default=os.environ.get(LOG_LEVEL_ENV, "info"),
        help=f"Diagnostic log level (default: ${LOG_LEVEL_ENV} or info)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    s = argparse.SUPPRESS
    p = sub.add_parser("train", help="Train a preset with NodeDrop regularization")
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--preset", default=s, help="dense160..dense640 or vgg16_cifar (suffix _bn)")
    _add_dataset_flags(p, suppress=True)
    p.add_argument("--lambda", dest="lambda", type=float, default=s, help="Regularization strength")
    p.add_argument("--c", type=float, default=s, help="Dead-region target C (default 1.0)")
    p.add_argument("--beta", type=float, default=s, help="soft_clamped_relu sharpness")
    p.add_argument("--mode", choices=["vanilla", "bn", "batch_norm"], default=s)
    p.add_argument("--epochs", type=int, default=s)
    p.add_argument("--batch-size", type=int, default=s)
    p.add_argument("--seed", type=int, default=s)
    p.add_argument("--optimizer", choices=["adam", "sgd"], default=s)
    p.add_argument("--lr", type=float, default=s)
    p.add_argument("--momentum", type=float, default=s)
    p.add_argument("--weight-decay", type=float, default=s, help="L2 decay (batch_norm mode only)")
    p.add_argument("--lr-milestones", default=s, help="epoch:multiplier,... e.g. 80:0.1,130:0.1")
    p.add_argument("--scan-every", type=int, default=s, help="Epochs between liveness scans")
    p.add_argument("--out-dir", default=s, help="Run directory (default runs/latest)")
    p.add_argument("--precision", type=int, choices=[32, 64], default=s)
    p.add_argument("--width-scale", type=float, default=s, help="VGG width multiplier")
    p.add_argument("--train-limit", type=int, default=s, help="Use only the first N train samples")
    p.add_argument("--no-freeze", dest="freeze_dead", action="store_false", default=s)
    p.add_argument("--no-augment", dest="augment", action="store_false", default=s)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Test accuracy of a checkpoint")
    p.add_argument("checkpoint")
    _add_dataset_flags(p, suppress=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("scan", help="Liveness report of a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--batch-size", type=int, help="Override m for batch_norm margins")
    p.add_argument("--out", help="Write the report as CSV")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("compact", help="Remove dead nodes and write a smaller checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--out", required=True, help="Output checkpoint path")
    p.add_argument("--batch-size", type=int, help="Override m for batch_norm margins")
    p.add_argument("--allow-degenerate", action="store_true", help="Accept fully dead layers")
    p.set_defaults(func=cmd_compact)

    p = sub.add_parser("report", help="Aggregate runs into a lambda-sweep table")
    p.add_argument("runs", nargs="+", help="Run directories or metrics.csv files")
    p.add_argument("--out", help="Write the table as CSV")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        configure_logging(args.log_level)
        return args.func(args)
    except NodeDropError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except ValidationError as e:
        print(f"error: invalid configuration\n{e}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
