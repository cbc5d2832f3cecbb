"""Keep-index plans shared by liveness accounting and compaction.

Given the dead mask of every prunable layer, ``keep_plan`` walks the network
once and records, for each parameterized or batch-norm layer, which output
nodes survive and which input features still carry a live signal. Pooling and
activations pass channel indices through unchanged; flatten expands a channel
index into its block of H*W flattened features.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Dict, List, Mapping

import numpy as np

from src.errors import DimensionError
from src.nn.layers import BatchNormSpec, Conv2dSpec, DenseSpec, FlattenSpec

if TYPE_CHECKING:
    from models.network import Network


@dataclass(frozen=True)
class IndexMap:
    """Kept indices of one layer, relative to the layer before compaction."""

    layer: int
    kind: str
    kept_in: np.ndarray
    kept_out: np.ndarray
    in_size: int
    out_size: int

    @property
    def is_identity(self) -> bool:
        return len(self.kept_in) == self.in_size and len(self.kept_out) == self.out_size

    @property
    def removed_out(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.out_size), self.kept_out)

    def param_count(self) -> int:
        n_in, n_out = len(self.kept_in), len(self.kept_out)
        if self.kind == "dense":
            return n_out * n_in + n_out
        if self.kind == "conv2d":
            return n_out * n_in * 9 + n_out
        return 2 * n_out  # gamma, beta_shift


def keep_plan(
    model: "Network", dead: Mapping[int, np.ndarray], keep_one_if_empty: bool = False
) -> List[IndexMap]:
    """Index maps for every Dense, Conv2d and BatchNorm layer of ``model``.

    ``dead`` maps a producing layer index to its boolean dead mask. With
    ``keep_one_if_empty`` a layer whose nodes are all dead keeps its first
    node so the network stays shape-valid.
    """
    live = np.ones(model.input_shape[0], dtype=bool)
    maps: List[IndexMap] = []
    for i, spec in enumerate(model.specs):
        if isinstance(spec, (DenseSpec, Conv2dSpec)):
            n_out = spec.out_features if isinstance(spec, DenseSpec) else spec.out_channels
            keep_out = np.ones(n_out, dtype=bool)
            if i in dead:
                mask = np.asarray(dead[i], dtype=bool)
                if mask.shape != (n_out,):
                    raise DimensionError(
                        f"dead mask for layer {i} has shape {mask.shape}, expected ({n_out},)"
                    )
                keep_out = ~mask
                if keep_one_if_empty and not keep_out.any():
                    keep_out[0] = True
            maps.append(
                IndexMap(
                    layer=i,
                    kind=spec.kind,
                    kept_in=np.flatnonzero(live),
                    kept_out=np.flatnonzero(keep_out),
                    in_size=live.size,
                    out_size=n_out,
                )
            )
            live = keep_out
        elif isinstance(spec, BatchNormSpec):
            kept = np.flatnonzero(live)
            maps.append(
                IndexMap(
                    layer=i, kind=spec.kind, kept_in=kept, kept_out=kept,
                    in_size=live.size, out_size=live.size,
                )
            )
        elif isinstance(spec, FlattenSpec):
            shape = model.shapes[i]
            live = np.repeat(live, int(np.prod(shape[1:], dtype=np.int64)))
    return maps


def planned_param_count(maps: List[IndexMap]) -> int:
    return int(sum(m.param_count() for m in maps))


def maps_by_layer(maps: List[IndexMap]) -> Dict[int, IndexMap]:
    return {m.layer: m for m in maps}
