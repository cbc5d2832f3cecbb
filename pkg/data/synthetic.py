"""Synthetic image dataset generator
===================================

Renders Gaussian blobs (sklearn ``make_blobs``) as small images with pixel
values in [0, 1], so training, scanning and compaction can be exercised
without downloading MNIST or CIFAR-10. Classes are well separated, so even a
tiny network reaches high accuracy in a few epochs.

Usage Examples:
  # Write MNIST-shaped IDX files (train/t10k) into ./synthetic
  python -m data.synthetic --out-dir synthetic --train 2000 --test 500

  # Gzip the output and use a different seed
  python -m data.synthetic --out-dir synthetic --gzip --seed 7

The written directory can be passed to
``nodedrop train --dataset mnist --dataset-dir synthetic``.
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from sklearn.datasets import make_blobs

from data.datasets import MNIST_FILES, Dataset, write_idx
from src.errors import ConfigError


@dataclass
class SyntheticConfig:
    n_train: int = 2000
    n_test: int = 500
    num_classes: int = 10
    image_shape: Tuple[int, int, int] = (1, 28, 28)
    cluster_std: float = 2.0
    seed: int = 42


def make_synthetic(cfg: SyntheticConfig) -> Tuple[Dataset, Dataset]:
    """(train, test) blob datasets quantized to multiples of 1/255."""
    n_features = int(np.prod(cfg.image_shape))
    features, labels = make_blobs(
        n_samples=cfg.n_train + cfg.n_test,
        n_features=n_features,
        centers=cfg.num_classes,
        cluster_std=cfg.cluster_std,
        random_state=cfg.seed,
    )
    lo, hi = features[: cfg.n_train].min(), features[: cfg.n_train].max()
    scaled = np.clip((features - lo) / (hi - lo), 0.0, 1.0)
    pixels = np.round(scaled * 255).astype(np.uint8)
    images = pixels.reshape((-1,) + tuple(cfg.image_shape)).astype(np.float32) / np.float32(255)
    labels = labels.astype(np.int64)
    train = Dataset(images[: cfg.n_train], labels[: cfg.n_train], cfg.num_classes, "synthetic")
    test = Dataset(images[cfg.n_train :], labels[cfg.n_train :], cfg.num_classes, "synthetic")
    return train, test


def write_synthetic_idx(out_dir: Path, cfg: SyntheticConfig, gz: bool = False) -> List[Path]:
    """Write the synthetic set as MNIST-named IDX files; needs a 1 x H x W image shape."""
    if cfg.image_shape[0] != 1:
        raise ConfigError("IDX output needs single-channel images")
    out_dir.mkdir(parents=True, exist_ok=True)
    written: List[Path] = []
    suffix = ".gz" if gz else ""
    for split, data in zip(("train", "test"), make_synthetic(cfg)):
        img_name, lab_name = MNIST_FILES[split]
        pixels = np.round(data.images[:, 0] * 255).astype(np.uint8)
        for name, payload in ((img_name, pixels), (lab_name, data.labels.astype(np.uint8))):
            path = out_dir / (name + suffix)
            write_idx(path, payload)
            written.append(path)
    return written


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    p = argparse.ArgumentParser(description="Generate a synthetic MNIST-shaped dataset.")
    p.add_argument("--out-dir", type=str, required=True, help="Directory for the IDX files")
    p.add_argument("--train", type=int, default=2000, help="Training samples")
    p.add_argument("--test", type=int, default=500, help="Test samples")
    p.add_argument("--classes", type=int, default=10, help="Number of classes (<= 10)")
    p.add_argument("--std", type=float, default=2.0, help="Blob standard deviation")
    p.add_argument("--seed", type=int, default=42, help="Random seed")
    p.add_argument("--gzip", action="store_true", help="Write .gz files")
    return p.parse_args(argv)


def main(argv: Optional[List[str]] = None) -> None:
    args = parse_args(argv)
    cfg = SyntheticConfig(
        n_train=args.train,
        n_test=args.test,
        num_classes=args.classes,
        cluster_std=args.std,
        seed=args.seed,
    )
    paths = write_synthetic_idx(Path(args.out_dir), cfg, gz=args.gzip)
    print(f"Wrote {len(paths)} files to {args.out_dir}")


if __name__ == "__main__":  # pragma: no cover
    main()
