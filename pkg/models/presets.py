"""Architecture presets.

MNIST ``dense*`` networks: four 3x3 conv layers with a 2x2 max-pool after
every second one, one dense layer, and a 10-way output. Widths per network:

  dense160: 16 16 32 32 64     dense240: 24 24 48 48 96
  dense320: 32 32 64 64 128    dense480: 48 48 96 96 192
  dense640: 64 64 128 128 256

``vgg16_cifar`` is the CIFAR variant of VGG-16 (13 conv layers, five pools,
a single 512-wide dense layer before the output), optionally scaled down in
width. Vanilla presets use soft_clamped_relu; ``_bn`` presets insert batch norm
before a ReLU after every hidden parameterized layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence, Tuple, Union

from src.errors import ConfigError
from src.nn.activations import ActivationKind
from src.nn.layers import (
    ActivationSpec,
    BatchNormSpec,
    Conv2dSpec,
    DenseSpec,
    FlattenSpec,
    MaxPool2Spec,
)
from src.nodedrop.config import NodeDropMode

MNIST_WIDTHS: Dict[str, Tuple[int, int, int, int, int]] = {
    "dense160": (16, 16, 32, 32, 64),
    "dense240": (24, 24, 48, 48, 96),
    "dense320": (32, 32, 64, 64, 128),
    "dense480": (48, 48, 96, 96, 192),
    "dense640": (64, 64, 128, 128, 256),
}

VGG16_LAYOUT: List[Union[int, str]] = [
    64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M", 512, 512, 512, "M",
]
VGG_HEAD = 512


@dataclass(frozen=True)
class Preset:
    """Architecture plus the training hyperparameters the preset was designed with."""

    name: str
    dataset: str
    mode: NodeDropMode
    specs: List[Any]
    input_shape: Tuple[int, int, int]
    num_classes: int
    defaults: Dict[str, Any] = field(default_factory=dict)

    @property
    def prunable_nodes(self) -> int:
        hidden = [s for s in self.specs if isinstance(s, (DenseSpec, Conv2dSpec))][:-1]
        return sum(s.out_features if isinstance(s, DenseSpec) else s.out_channels for s in hidden)


def _unit(layer: Any, width: int, mode: NodeDropMode, beta: float) -> List[Any]:
    if mode is NodeDropMode.BATCH_NORM:
        relu = ActivationSpec(activation=ActivationKind.RELU)
        return [layer, BatchNormSpec(channels=width), relu]
    return [layer, ActivationSpec(activation=ActivationKind.SOFT_CLAMPED_RELU, beta=beta)]


def conv_stack(
    in_channels: int,
    layout: Sequence[Union[int, str]],
    mode: NodeDropMode,
    beta: float,
) -> Tuple[List[Any], int, int]:
    """Returns (specs, out_channels, number of pools)."""
    specs: List[Any] = []
    channels = in_channels
    pools = 0
    for item in layout:
        if item == "M":
            specs.append(MaxPool2Spec())
            pools += 1
            continue
        width = int(item)
        specs += _unit(Conv2dSpec(in_channels=channels, out_channels=width), width, mode, beta)
        channels = width
    return specs, channels, pools


def mnist_preset(
    name: str, mode: NodeDropMode = NodeDropMode.VANILLA, beta: float = 10.0
) -> Preset:
    c1, c2, c3, c4, d = MNIST_WIDTHS[name]
    specs, channels, pools = conv_stack(1, [c1, c2, "M", c3, c4, "M"], mode, beta)
    spatial = 28 // (2**pools)
    flat = channels * spatial * spatial
    specs += [FlattenSpec()]
    specs += _unit(DenseSpec(in_features=flat, out_features=d), d, mode, beta)
    specs += [DenseSpec(in_features=d, out_features=10)]
    suffix = "_bn" if mode is NodeDropMode.BATCH_NORM else ""
    return Preset(
        name=name + suffix,
        dataset="mnist",
        mode=mode,
        specs=specs,
        input_shape=(1, 28, 28),
        num_classes=10,
        defaults={
            "optimizer": "adam",
            "lr": 1e-3,
            "batch_size": 1024,
            "epochs": 480,
            "augment": False,
            "lr_milestones": [],
        },
    )


def vgg16_cifar_preset(
    mode: NodeDropMode = NodeDropMode.VANILLA, beta: float = 10.0, width_scale: float = 0.25
) -> Preset:
    if width_scale <= 0:
        raise ConfigError(f"width_scale must be > 0, got {width_scale}")
    layout = [
        item if item == "M" else max(1, int(round(item * width_scale))) for item in VGG16_LAYOUT
    ]
    specs, channels, pools = conv_stack(3, layout, mode, beta)
    spatial = 32 // (2**pools)
    specs += [FlattenSpec()]
    head = DenseSpec(in_features=channels * spatial * spatial, out_features=VGG_HEAD)
    specs += _unit(head, VGG_HEAD, mode, beta)
    specs += [DenseSpec(in_features=VGG_HEAD, out_features=10)]
    suffix = "_bn" if mode is NodeDropMode.BATCH_NORM else ""
    return Preset(
        name="vgg16_cifar" + suffix,
        dataset="cifar10",
        mode=mode,
        specs=specs,
        input_shape=(3, 32, 32),
        num_classes=10,
        defaults={
            "optimizer": "sgd",
            "lr": 0.1,
            "momentum": 0.9,
            "batch_size": 64,
            "epochs": 200,
            "augment": True,
            "lr_milestones": [(80, 0.1), (130, 0.1)],
        },
    )


PRESET_NAMES = sorted(MNIST_WIDTHS) + ["vgg16_cifar"]


def get_preset(
    name: str,
    mode: NodeDropMode = NodeDropMode.VANILLA,
    beta: float = 10.0,
    width_scale: float = 0.25,
) -> Preset:
    """Look up a preset; a ``_bn`` suffix on the name selects batch_norm mode."""
    base = name.lower()
    mode = NodeDropMode(mode)
    if base.endswith("_bn"):
        base = base[: -len("_bn")]
        mode = NodeDropMode.BATCH_NORM
    if base in MNIST_WIDTHS:
        return mnist_preset(base, mode=mode, beta=beta)
    if base == "vgg16_cifar":
        return vgg16_cifar_preset(mode=mode, beta=beta, width_scale=width_scale)
    raise ConfigError(f"unknown preset '{name}'; choose one of {', '.join(PRESET_NAMES)}")
