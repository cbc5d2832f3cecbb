"""Shared fixtures: seeded generators, tiny networks and on-disk dataset files."""

from __future__ import annotations

from typing import List

import numpy as np
import pytest
import structlog

from data.datasets import write_cifar10_batch, write_idx
from models.network import Network
from src.nn.activations import ActivationKind
from src.nn.layers import (
    ActivationSpec,
    BatchNormSpec,
    Conv2dSpec,
    DenseSpec,
    FlattenSpec,
    MaxPool2Spec,
)
from src.tensor.ops import make_rng

SCRELU = ActivationSpec(activation=ActivationKind.SOFT_CLAMPED_RELU, beta=10.0)
RELU = ActivationSpec(activation=ActivationKind.RELU)


def vanilla_specs() -> List:
    """1x8x8 input, two conv units with pooling, one dense unit, 3-way output."""
    return [
        Conv2dSpec(in_channels=1, out_channels=4),
        SCRELU,
        MaxPool2Spec(),
        Conv2dSpec(in_channels=4, out_channels=6),
        SCRELU,
        MaxPool2Spec(),
        FlattenSpec(),
        DenseSpec(in_features=6 * 2 * 2, out_features=8),
        SCRELU,
        DenseSpec(in_features=8, out_features=3),
    ]


def bn_specs() -> List:
    return [
        Conv2dSpec(in_channels=1, out_channels=4),
        BatchNormSpec(channels=4),
        RELU,
        MaxPool2Spec(),
        FlattenSpec(),
        DenseSpec(in_features=4 * 4 * 4, out_features=6),
        BatchNormSpec(channels=6),
        RELU,
        DenseSpec(in_features=6, out_features=3),
    ]


def kill_node(model: Network, layer: int, node: int, c: float = 1.0) -> None:
    """Force a node's margin <= 0: non-positive fan-in and bias -c."""
    state = model.states[layer]
    state.W[node] = -np.abs(state.W[node])
    state.b[node] = -c


@pytest.fixture(autouse=True)
def _reset_structlog():
    """CLI tests configure structlog against pytest's per-test stderr; undo that afterwards."""
    yield
    structlog.reset_defaults()


@pytest.fixture
def rng() -> np.random.Generator:
    return make_rng(1234)


@pytest.fixture
def vanilla_net(rng) -> Network:
    """Small vanilla network whose nodes all start strictly alive (bias 0.05)."""
    model = Network.build(vanilla_specs(), (1, 8, 8), 3, rng)
    for i in model.param_layers():
        model.states[i].b[:] = 0.05
    return model


@pytest.fixture
def bn_net(rng) -> Network:
    return Network.build(bn_specs(), (1, 8, 8), 3, rng)


@pytest.fixture
def mnist_files(tmp_path, rng):
    """Four tiny IDX files named like the MNIST distribution; returns (dir, pixels, labels)."""
    pixels = rng.integers(0, 256, size=(6, 28, 28), dtype=np.uint8)
    labels = np.array([3, 7, 0, 9, 1, 2], dtype=np.uint8)
    write_idx(tmp_path / "train-images-idx3-ubyte", pixels)
    write_idx(tmp_path / "train-labels-idx1-ubyte", labels)
    write_idx(tmp_path / "t10k-images-idx3-ubyte.gz", pixels[:2])
    write_idx(tmp_path / "t10k-labels-idx1-ubyte.gz", labels[:2])
    return tmp_path, pixels, labels


@pytest.fixture
def cifar_file(tmp_path, rng):
    images = rng.integers(0, 256, size=(3, 3, 32, 32), dtype=np.uint8)
    labels = np.array([9, 0, 4], dtype=np.uint8)
    path = tmp_path / "data_batch_1.bin"
    write_cifar10_batch(path, images, labels)
    return path, images, labels
