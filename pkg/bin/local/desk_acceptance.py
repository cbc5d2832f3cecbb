"""Desk-scale acceptance experiments
===================================
Runs the longer NodeDrop experiments that do not belong in the unit suite:
 1. dense160 baseline (lambda=0) vs lambda=1e-5: accuracy within 1 point,
    live parameters reduced by at least 25%
 2. lambda sweep {1e-6, 1e-5, 1e-4}: final live parameters non-increasing
 3. size convergence: dense160 and dense320 at lambda=1e-4 end within 30% of
    each other in live nodes, both well below 320
 4. batch-norm eval transfer: compacting certified-dead BN channels of a small
    conv net changes eval accuracy by at most 0.1 points
 5. determinism: two identical seeded runs give byte-identical metrics CSV
    and checkpoint

Run:
  python bin/local/desk_acceptance.py --dataset-dir ~/datasets/mnist --epochs 30

``--dataset synthetic`` gives a quick smoke run of the harness (the accuracy
thresholds are meaningless there).

Outputs:
 - pass/fail table on stdout
 - artifacts/desk_acceptance.csv
"""

from __future__ import annotations

import argparse
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple

import pandas as pd

# Ensure project root for imports
ROOT = Path(__file__).resolve().parents[2]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from data.datasets import Dataset  # noqa: E402
from models import checkpoint  # noqa: E402
from models.network import Network  # noqa: E402
from models.presets import get_preset  # noqa: E402
from src.cli.main import configure_logging, load_datasets  # noqa: E402
from src.nn.activations import ActivationKind  # noqa: E402
from src.nn.layers import (  # noqa: E402
    ActivationSpec,
    BatchNormSpec,
    Conv2dSpec,
    DenseSpec,
    FlattenSpec,
    MaxPool2Spec,
)
from src.nodedrop.compact import compact  # noqa: E402
from src.nodedrop.config import NodeDropConfig, NodeDropMode  # noqa: E402
from src.nodedrop.scan import LivenessReport, scan_network  # noqa: E402
from src.tensor.ops import make_rng  # noqa: E402
from src.training.config import TrainConfig  # noqa: E402
from src.training.engine import MetricsLog, evaluate, train  # noqa: E402


@dataclass
class Run:
    model: Network
    metrics: MetricsLog
    report: LivenessReport
    accuracy: float


def parse_args():
    p = argparse.ArgumentParser(description="NodeDrop desk-scale acceptance experiments")
    p.add_argument("--dataset", choices=["mnist", "synthetic"], default="mnist")
    p.add_argument("--dataset-dir", type=str, default=None)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--train-limit", type=int, default=None)
    p.add_argument("--test-limit", type=int, default=None)
    p.add_argument("--out", type=str, default="artifacts/desk_acceptance.csv")
    p.add_argument("--log-level", type=str, default="warning")
    return p.parse_args()


def run_preset(
    name: str, lam: float, args, data: Tuple[Dataset, Dataset], cache: Dict[Tuple[str, float], Run]
) -> Run:
    key = (name, lam)
    if key in cache:
        return cache[key]
    preset = get_preset(name)
    model = Network.build(preset.specs, preset.input_shape, preset.num_classes, make_rng(args.seed))
    config = TrainConfig(
        optimizer="adam",
        lr=1e-3,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        nodedrop=NodeDropConfig(lambda_=lam, batch_size=args.batch_size),
    )
    model, metrics = train(model, data[0], data[1], config)
    report = scan_network(model, config.nodedrop)
    run = Run(model, metrics, report, evaluate(model, data[1]))
    print(f"  {name} lambda={lam:g}: acc={run.accuracy:.4f} live_params={report.live_params}")
    cache[key] = run
    return run


def small_bn_net() -> List:
    relu = ActivationSpec(activation=ActivationKind.RELU)
    return [
        Conv2dSpec(in_channels=1, out_channels=8), BatchNormSpec(channels=8), relu,
        MaxPool2Spec(),
        Conv2dSpec(in_channels=8, out_channels=16), BatchNormSpec(channels=16), relu,
        MaxPool2Spec(),
        FlattenSpec(),
        DenseSpec(in_features=16 * 7 * 7, out_features=32), BatchNormSpec(channels=32), relu,
        DenseSpec(in_features=32, out_features=10),
    ]


def check_bn_transfer(args, data) -> Tuple[bool, str]:
    model = Network.build(small_bn_net(), (1, 28, 28), 10, make_rng(args.seed))
    nd = NodeDropConfig(lambda_=1e-4, mode=NodeDropMode.BATCH_NORM, batch_size=args.batch_size)
    config = TrainConfig(
        lr=1e-3, epochs=args.epochs, batch_size=args.batch_size, seed=args.seed, nodedrop=nd
    )
    model, _ = train(model, data[0], data[1], config)
    report = scan_network(model, config.nodedrop)
    pruned, _ = compact(model, report, allow_degenerate=True)
    before, after = evaluate(model, data[1]), evaluate(pruned, data[1])
    delta = abs(before - after) * 100
    detail = f"dead={report.dead_nodes}/{report.total_nodes} acc {before:.4f}->{after:.4f}"
    return delta <= 0.1, detail


def check_determinism(args, data) -> Tuple[bool, str]:
    blobs = []
    for _ in range(2):
        preset = get_preset("dense160")
        model = Network.build(preset.specs, preset.input_shape, 10, make_rng(args.seed))
        config = TrainConfig(
            lr=1e-3,
            epochs=args.epochs,
            batch_size=args.batch_size,
            seed=args.seed,
            nodedrop=NodeDropConfig(lambda_=1e-5, batch_size=args.batch_size),
        )
        model, metrics = train(model, data[0], data[1], config)
        with tempfile.TemporaryDirectory() as tmp:
            metrics.to_csv(Path(tmp) / "metrics.csv")
            meta = checkpoint.CheckpointMeta(epoch=args.epochs, seed=args.seed, preset="dense160")
            checkpoint.save(model, meta, Path(tmp) / "final.ckpt")
            blobs.append(
                ((Path(tmp) / "metrics.csv").read_bytes(), (Path(tmp) / "final.ckpt").read_bytes())
            )
    same = blobs[0] == blobs[1]
    return same, "identical" if same else "outputs differ"


def main():
    args = parse_args()
    configure_logging(args.log_level)
    data = load_datasets(
        args.dataset,
        Path(args.dataset_dir) if args.dataset_dir else None,
        (1, 28, 28),
        (args.train_limit, args.test_limit),
    )
    cache: Dict[Tuple[str, float], Run] = {}
    rows = []

    print("[1] baseline vs lambda=1e-5")
    base = run_preset("dense160", 0.0, args, data, cache)
    reg = run_preset("dense160", 1e-5, args, data, cache)
    reduction = 1 - reg.report.live_params / reg.report.total_params
    ok = (base.accuracy - reg.accuracy) <= 0.01 and reduction >= 0.25
    detail = f"acc drop {base.accuracy - reg.accuracy:+.4f}, reduction {reduction:.2%}"
    rows.append(("accuracy_and_reduction", ok, detail))

    print("[2] lambda sweep")
    sweep = [run_preset("dense160", lam, args, data, cache) for lam in (1e-6, 1e-5, 1e-4)]
    live = [r.report.live_params for r in sweep]
    rows.append(("lambda_monotone", all(a >= b for a, b in zip(live, live[1:])), str(live)))

    print("[3] size convergence")
    small = run_preset("dense160", 1e-4, args, data, cache).report.live_nodes
    large = run_preset("dense320", 1e-4, args, data, cache).report.live_nodes
    close = abs(small - large) <= 0.3 * max(small, large, 1)
    rows.append(("size_convergence", close and max(small, large) < 160, f"{small} vs {large}"))

    print("[4] batch-norm eval transfer")
    rows.append(("bn_eval_transfer", *check_bn_transfer(args, data)))

    print("[5] determinism")
    rows.append(("determinism", *check_determinism(args, data)))

    table = pd.DataFrame(rows, columns=["check", "passed", "detail"])
    print(table.to_string(index=False))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(out, index=False)
    print(f"wrote {out}")
    return 0 if table["passed"].all() else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
