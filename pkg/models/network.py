"""Sequential network container.

A ``Network`` is an ordered list of layer specs with matching learned state,
the per-sample input shape and the number of classes. Construction validates
shape compatibility; ``validate(mode)`` additionally enforces the structural
rules that make vanilla-mode dead-node certificates valid.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from src.errors import DimensionError, StructuralError
from src.nn.layers import (
    PARAMETERIZED,
    SPEC_LIST,
    ActivationSpec,
    BatchNormSpec,
    FlattenSpec,
    LayerState,
    MaxPool2Spec,
    Shape,
    check_state,
    init_layer_state,
    layer_backward,
    layer_forward,
    output_shape,
)
from src.nodedrop.config import NodeDropMode

log = structlog.get_logger()

_PASS_THROUGH = (MaxPool2Spec, FlattenSpec)


@dataclass(frozen=True)
class PrunableUnit:
    """Nodes produced by one parameterized layer that may be certified dead.

    ``norm_layer`` is the BatchNorm directly after ``layer`` (batch_norm mode).
    The output layer is never a unit.
    """

    layer: int
    norm_layer: Optional[int]


@dataclass
class Network:
    specs: List[Any]
    states: List[LayerState]
    input_shape: Tuple[int, ...]
    num_classes: int
    shapes: List[Shape] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if len(self.specs) != len(self.states):
            raise DimensionError(f"{len(self.specs)} specs but {len(self.states)} states")
        shape: Shape = tuple(self.input_shape)
        shapes = [shape]
        for i, (spec, state) in enumerate(zip(self.specs, self.states)):
            try:
                check_state(spec, state)
                shape = output_shape(spec, shape)
            except DimensionError as e:
                raise DimensionError(f"layer {i} ({spec.kind}): {e}") from e
            shapes.append(shape)
        if shape != (self.num_classes,):
            raise DimensionError(f"network output shape {shape} != ({self.num_classes},)")
        self.shapes = shapes

    # ---------------- construction ----------------

    @classmethod
    def build(
        cls,
        specs: Sequence[Any],
        input_shape: Tuple[int, ...],
        num_classes: int,
        rng: np.random.Generator,
        dtype=np.float32,
    ) -> "Network":
        specs = SPEC_LIST.validate_python(list(specs))
        states = [init_layer_state(spec, rng, dtype) for spec in specs]
        return cls(
            specs=specs, states=states, input_shape=tuple(input_shape), num_classes=num_classes
        )

    def copy(self) -> "Network":
        return Network(
            specs=list(self.specs),
            states=[s.copy() for s in self.states],
            input_shape=self.input_shape,
            num_classes=self.num_classes,
        )

    def astype(self, dtype) -> "Network":
        return Network(
            specs=list(self.specs),
            states=[s.astype(dtype) for s in self.states],
            input_shape=self.input_shape,
            num_classes=self.num_classes,
        )

    @property
    def dtype(self) -> np.dtype:
        for state in self.states:
            for arr in state.params().values():
                return arr.dtype
        return np.dtype(np.float32)

    # ---------------- parameters ----------------

    def parameters(self) -> Dict[str, np.ndarray]:
        """Learned parameters keyed ``"<layer>.<name>"`` (views, not copies)."""
        out: Dict[str, np.ndarray] = {}
        for i, state in enumerate(self.states):
            for name, arr in state.params().items():
                out[f"{i}.{name}"] = arr
        return out

    def param_count(self) -> int:
        return int(sum(arr.size for arr in self.parameters().values()))

    def param_layers(self) -> List[int]:
        return [i for i, s in enumerate(self.specs) if isinstance(s, PARAMETERIZED)]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(SPEC_LIST.dump_json(self.specs))
        for i, state in enumerate(self.states):
            for name, arr in sorted(state.arrays().items()):
                h.update(f"{i}.{name}{arr.shape}{arr.dtype.str}".encode("utf-8"))
                h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    # ---------------- forward / backward ----------------

    def forward(self, x: np.ndarray, mode: str = "train") -> Tuple[np.ndarray, List[Any]]:
        caches: List[Any] = []
        for spec, state in zip(self.specs, self.states):
            x, cache = layer_forward(spec, state, x, mode)
            caches.append(cache)
        return x, caches

    def predict(self, x: np.ndarray, batch_size: int = 1000) -> np.ndarray:
        """Eval-mode logits, evaluated in chunks."""
        chunks = []
        for start in range(0, x.shape[0], batch_size):
            logits, _ = self.forward(x[start : start + batch_size], mode="eval")
            chunks.append(logits)
        if not chunks:
            return np.zeros((0, self.num_classes), dtype=self.dtype)
        return np.concatenate(chunks, axis=0)

    def backward(self, caches: List[Any], grad: np.ndarray) -> List[Dict[str, np.ndarray]]:
        grads: List[Dict[str, np.ndarray]] = [dict() for _ in self.specs]
        for i in range(len(self.specs) - 1, -1, -1):
            grad, param_grads = layer_backward(self.specs[i], self.states[i], caches[i], grad)
            grads[i] = param_grads
        return grads

    def first_nonfinite_layer(self, x: np.ndarray, mode: str = "train") -> Optional[int]:
        """Index of the first layer whose output has NaN/Inf (on a copy; state untouched)."""
        scratch = self.copy()
        for i, (spec, state) in enumerate(zip(scratch.specs, scratch.states)):
            x, _ = layer_forward(spec, state, x, mode)
            if not np.all(np.isfinite(x)):
                return i
        return None

    # ---------------- structure ----------------

    def prunable_units(self, mode: NodeDropMode) -> List[PrunableUnit]:
        mode = NodeDropMode(mode)
        units: List[PrunableUnit] = []
        for producer in self.param_layers()[:-1]:
            nxt = producer + 1
            is_norm = nxt < len(self.specs) and isinstance(self.specs[nxt], BatchNormSpec)
            norm = nxt if is_norm else None
            if mode is NodeDropMode.BATCH_NORM and norm is None:
                continue
            units.append(PrunableUnit(layer=producer, norm_layer=norm))
        return units

    def validate(self, mode: NodeDropMode) -> None:
        """Structural checks for ``mode``; raises StructuralError naming the layer.

        Vanilla mode needs every prunable layer's input certified in [0, 1]
        (raw data or a bounded activation, through pooling/flatten only) and an
        activation with a flat zero region after every prunable layer.
        """
        mode = NodeDropMode(mode)
        units = self.prunable_units(mode)
        if mode is NodeDropMode.BATCH_NORM:
            for unit in units:
                if self._next_activation(unit.norm_layer) is None:
                    raise StructuralError(
                        unit.layer, "batch-norm unit is not followed by an activation"
                    )
            return
        prunable = {u.layer for u in units}
        bounded = True  # data is normalized to [0, 1]
        for i, spec in enumerate(self.specs):
            if i in prunable:
                if not bounded:
                    raise StructuralError(
                        i,
                        f"{spec.kind} input is not certified in [0, 1]; "
                        "use soft_clamped_relu or clamped_relu upstream",
                    )
                if self._next_activation(i) is None:
                    raise StructuralError(i, f"{spec.kind} is not followed by an activation")
            if isinstance(spec, ActivationSpec):
                bounded = spec.activation.bounded
            elif not isinstance(spec, _PASS_THROUGH):
                bounded = False

    def _next_activation(self, index: int) -> Optional[int]:
        for j in range(index + 1, len(self.specs)):
            spec = self.specs[j]
            if isinstance(spec, ActivationSpec):
                return j
            if not isinstance(spec, _PASS_THROUGH):
                return None
        return None
