"""Structural compaction: physically remove certified-dead nodes.

Dead nodes contribute exact 0.0 terms to every downstream sum, and the matmul
and convolution kernels accumulate left to right, so dropping those terms
leaves every output bit unchanged.
"""

from __future__ import annotations

from typing import List, Tuple

import numpy as np
import structlog

from models.network import Network
from src.errors import ContractError, DegenerateLayerError
from src.nn.layers import BatchNormSpec, Conv2dSpec, DenseSpec, LayerState
from src.nodedrop.plan import IndexMap, keep_plan, maps_by_layer
from src.nodedrop.scan import LivenessReport

log = structlog.get_logger()


def _take(arr: np.ndarray, rows: np.ndarray, cols: np.ndarray = None) -> np.ndarray:
    out = arr[rows]
    if cols is not None:
        out = out[:, cols]
    return np.ascontiguousarray(out)


def compact(
    model: Network, report: LivenessReport, allow_degenerate: bool = False
) -> Tuple[Network, List[IndexMap]]:
    """Copy of ``model`` without the dead nodes listed in ``report``.

    ``report`` must come from this exact model state (checked by fingerprint).
    A layer with every node dead raises DegenerateLayerError unless
    ``allow_degenerate``, in which case one dead node is kept per such layer
    and the network computes a constant.
    """
    if report.fingerprint != model.fingerprint():
        raise ContractError("liveness report was produced from a different model state")
    empty = report.empty_layers()
    if empty and not allow_degenerate:
        raise DegenerateLayerError(empty)
    if empty:
        log.warning("compact_degenerate_layers", layers=empty)

    maps = keep_plan(model, report.dead_masks(), keep_one_if_empty=True)
    by_layer = maps_by_layer(maps)
    specs = []
    states = []
    for i, (spec, state) in enumerate(zip(model.specs, model.states)):
        index_map = by_layer.get(i)
        if index_map is None:
            specs.append(spec)
            states.append(state.copy())
            continue
        out, inp = index_map.kept_out, index_map.kept_in
        if isinstance(spec, DenseSpec):
            spec = spec.model_copy(update={"in_features": len(inp), "out_features": len(out)})
            state = LayerState(W=_take(state.W, out, inp), b=_take(state.b, out))
        elif isinstance(spec, Conv2dSpec):
            spec = spec.model_copy(update={"in_channels": len(inp), "out_channels": len(out)})
            state = LayerState(W=_take(state.W, out, inp), b=_take(state.b, out))
        elif isinstance(spec, BatchNormSpec):
            spec = spec.model_copy(update={"channels": len(out)})
            state = LayerState(**{k: _take(v, out) for k, v in state.arrays().items()})
        specs.append(spec)
        states.append(state)

    pruned = Network(
        specs=specs, states=states, input_shape=model.input_shape, num_classes=model.num_classes
    )
    log.info(
        "model_compacted",
        removed_nodes=sum(len(m.removed_out) for m in maps if m.kind != "batchnorm"),
        params_before=model.param_count(),
        params_after=pruned.param_count(),
    )
    return pruned, [m for m in maps if m.kind != "batchnorm"]
