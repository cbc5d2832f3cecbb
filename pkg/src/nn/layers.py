"""Layer specifications, learned state, and per-variant forward/backward passes.

Specs are pydantic models discriminated on ``kind`` so a list of them
round-trips through a JSON manifest. Each variant registers a small ops class
implementing the ``LayerOps`` protocol; ``layer_forward``/``layer_backward``
dispatch on the spec type.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Annotated, Any, Dict, List, Literal, Optional, Protocol, Tuple, Type, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter

from src.errors import ContractError, DimensionError
from src.nn.activations import ActivationKind, activation_apply, activation_grad
from src.nn.batchnorm import batchnorm_backward, batchnorm_forward
from src.tensor.ops import conv2d, conv2d_grads, matmul, maxpool2d, maxpool2d_backward

Shape = Tuple[int, ...]  # per-sample shape, batch axis excluded


# -------------------------- Specs ---------------------------------------------


class _Spec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class DenseSpec(_Spec):
    kind: Literal["dense"] = "dense"
    in_features: int = Field(..., ge=1)
    out_features: int = Field(..., ge=1)


class Conv2dSpec(_Spec):
    kind: Literal["conv2d"] = "conv2d"
    in_channels: int = Field(..., ge=1)
    out_channels: int = Field(..., ge=1)


class MaxPool2Spec(_Spec):
    kind: Literal["maxpool2"] = "maxpool2"


class BatchNormSpec(_Spec):
    kind: Literal["batchnorm"] = "batchnorm"
    channels: int = Field(..., ge=1)
    eps: float = Field(1e-5, gt=0)
    momentum: float = Field(0.1, gt=0, le=1)


class FlattenSpec(_Spec):
    kind: Literal["flatten"] = "flatten"


class ActivationSpec(_Spec):
    kind: Literal["activation"] = "activation"
    activation: ActivationKind
    beta: float = Field(10.0, gt=0)


LayerSpec = Annotated[
    Union[DenseSpec, Conv2dSpec, MaxPool2Spec, BatchNormSpec, FlattenSpec, ActivationSpec],
    Field(discriminator="kind"),
]
SPEC_LIST = TypeAdapter(List[LayerSpec])

PARAMETERIZED = (DenseSpec, Conv2dSpec)


# -------------------------- State ---------------------------------------------


@dataclass
class LayerState:
    W: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None
    gamma: Optional[np.ndarray] = None
    beta_shift: Optional[np.ndarray] = None
    running_mean: Optional[np.ndarray] = None
    running_var: Optional[np.ndarray] = None

    PARAM_NAMES = ("W", "b", "gamma", "beta_shift")
    BUFFER_NAMES = ("running_mean", "running_var")

    def params(self) -> Dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in self.PARAM_NAMES if getattr(self, k) is not None}

    def buffers(self) -> Dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in self.BUFFER_NAMES if getattr(self, k) is not None}

    def arrays(self) -> Dict[str, np.ndarray]:
        return {**self.params(), **self.buffers()}

    def copy(self) -> "LayerState":
        return LayerState(**{k: v.copy() for k, v in self.arrays().items()})

    def astype(self, dtype) -> "LayerState":
        return LayerState(**{k: v.astype(dtype) for k, v in self.arrays().items()})


def init_layer_state(spec: Any, rng: np.random.Generator, dtype=np.float32) -> LayerState:
    """He-uniform weights, zero biases; BN starts at gamma=1, beta_shift=0, unit variance."""
    if isinstance(spec, DenseSpec):
        bound = np.sqrt(6.0 / spec.in_features)
        W = rng.uniform(-bound, bound, size=(spec.out_features, spec.in_features))
        return LayerState(W=W.astype(dtype), b=np.zeros(spec.out_features, dtype=dtype))
    if isinstance(spec, Conv2dSpec):
        fan_in = spec.in_channels * 9
        bound = np.sqrt(6.0 / fan_in)
        W = rng.uniform(-bound, bound, size=(spec.out_channels, spec.in_channels, 3, 3))
        return LayerState(W=W.astype(dtype), b=np.zeros(spec.out_channels, dtype=dtype))
    if isinstance(spec, BatchNormSpec):
        c = spec.channels
        return LayerState(
            gamma=np.ones(c, dtype=dtype),
            beta_shift=np.zeros(c, dtype=dtype),
            running_mean=np.zeros(c, dtype=dtype),
            running_var=np.ones(c, dtype=dtype),
        )
    return LayerState()


def state_shapes(spec: Any) -> Dict[str, Shape]:
    """Array name -> shape for the learned state of ``spec`` (empty when parameter-free)."""
    if isinstance(spec, DenseSpec):
        return {"W": (spec.out_features, spec.in_features), "b": (spec.out_features,)}
    if isinstance(spec, Conv2dSpec):
        return {"W": (spec.out_channels, spec.in_channels, 3, 3), "b": (spec.out_channels,)}
    if isinstance(spec, BatchNormSpec):
        c = (spec.channels,)
        return {"gamma": c, "beta_shift": c, "running_mean": c, "running_var": c}
    return {}


def check_state(spec: Any, state: LayerState) -> None:
    """Raise DimensionError if the state arrays do not match the spec."""
    expected = state_shapes(spec)
    have = state.arrays()
    if set(have) != set(expected):
        raise DimensionError(
            f"{spec.kind} state has arrays {sorted(have)}, expected {sorted(expected)}"
        )
    for name, shape in expected.items():
        if tuple(have[name].shape) != shape:
            raise DimensionError(
                f"{spec.kind}.{name} has shape {have[name].shape}, expected {shape}"
            )
    if isinstance(spec, BatchNormSpec) and np.any(state.running_var < 0):
        raise DimensionError("batchnorm running_var must be non-negative")


# -------------------------- Ops protocol and registry -------------------------


class LayerOps(Protocol):
    """Forward/backward for one spec variant.

    ``forward`` returns (y, cache); ``backward`` returns (grad_x, param_grads).
    """

    def output_shape(self, spec: Any, in_shape: Shape) -> Shape:  # noqa: D401
        raise NotImplementedError

    def forward(self, spec: Any, state: LayerState, x: np.ndarray, mode: str):  # noqa: D401
        raise NotImplementedError

    def backward(self, spec: Any, state: LayerState, cache: Any, grad_y: np.ndarray):  # noqa: D401
        raise NotImplementedError


class DenseOps:
    def output_shape(self, spec: DenseSpec, in_shape: Shape) -> Shape:
        if in_shape != (spec.in_features,):
            raise DimensionError(f"dense expects input ({spec.in_features},), got {in_shape}")
        return (spec.out_features,)

    def forward(self, spec, state, x, mode):
        if x.ndim != 2 or x.shape[1] != spec.in_features:
            raise DimensionError(f"dense expects N x {spec.in_features}, got {x.shape}")
        y = matmul(x, state.W.T) + state.b
        return y, x

    def backward(self, spec, state, cache, grad_y):
        x = cache
        grad_W = matmul(grad_y.T, x)
        grad_b = grad_y.sum(axis=0)
        grad_x = matmul(grad_y, state.W)
        return grad_x, {"W": grad_W, "b": grad_b}


class Conv2dOps:
    def output_shape(self, spec: Conv2dSpec, in_shape: Shape) -> Shape:
        if len(in_shape) != 3 or in_shape[0] != spec.in_channels:
            raise DimensionError(f"conv2d expects ({spec.in_channels}, H, W), got {in_shape}")
        return (spec.out_channels,) + tuple(in_shape[1:])

    def forward(self, spec, state, x, mode):
        return conv2d(x, state.W, state.b)

    def backward(self, spec, state, cache, grad_y):
        grad_x, grad_W, grad_b = conv2d_grads(cache, grad_y, state.W)
        return grad_x, {"W": grad_W, "b": grad_b}


class MaxPool2Ops:
    def output_shape(self, spec, in_shape: Shape) -> Shape:
        if len(in_shape) != 3 or in_shape[1] % 2 or in_shape[2] % 2:
            raise DimensionError(f"maxpool2 expects (C, even H, even W), got {in_shape}")
        return (in_shape[0], in_shape[1] // 2, in_shape[2] // 2)

    def forward(self, spec, state, x, mode):
        y, argmax = maxpool2d(x)
        return y, (argmax, x.shape)

    def backward(self, spec, state, cache, grad_y):
        argmax, in_shape = cache
        return maxpool2d_backward(grad_y, argmax, in_shape), {}


class BatchNormOps:
    def output_shape(self, spec: BatchNormSpec, in_shape: Shape) -> Shape:
        if len(in_shape) not in (1, 3) or in_shape[0] != spec.channels:
            raise DimensionError(f"batchnorm expects {spec.channels} channels, got {in_shape}")
        return in_shape

    def forward(self, spec, state, x, mode):
        return batchnorm_forward(state, x, mode, eps=spec.eps, momentum=spec.momentum)

    def backward(self, spec, state, cache, grad_y):
        return batchnorm_backward(state, cache, grad_y)


class FlattenOps:
    def output_shape(self, spec, in_shape: Shape) -> Shape:
        return (int(np.prod(in_shape)),)

    def forward(self, spec, state, x, mode):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, spec, state, cache, grad_y):
        return grad_y.reshape(cache), {}


class ActivationOps:
    def output_shape(self, spec, in_shape: Shape) -> Shape:
        return in_shape

    def forward(self, spec, state, x, mode):
        return activation_apply(spec.activation, spec.beta, x), x

    def backward(self, spec, state, cache, grad_y):
        return grad_y * activation_grad(spec.activation, spec.beta, cache), {}


_REGISTRY: Dict[Type[_Spec], LayerOps] = {
    DenseSpec: DenseOps(),
    Conv2dSpec: Conv2dOps(),
    MaxPool2Spec: MaxPool2Ops(),
    BatchNormSpec: BatchNormOps(),
    FlattenSpec: FlattenOps(),
    ActivationSpec: ActivationOps(),
}


def ops_for(spec: Any) -> LayerOps:
    try:
        return _REGISTRY[type(spec)]
    except KeyError as e:
        raise ContractError(f"no layer ops registered for {type(spec).__name__}") from e


def output_shape(spec: Any, in_shape: Shape) -> Shape:
    return ops_for(spec).output_shape(spec, tuple(in_shape))


def layer_forward(spec: Any, state: LayerState, x: np.ndarray, mode: str = "train"):
    return ops_for(spec).forward(spec, state, x, mode)


def layer_backward(spec: Any, state: LayerState, cache: Any, grad_y: np.ndarray):
    return ops_for(spec).backward(spec, state, cache, grad_y)
