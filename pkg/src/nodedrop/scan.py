"""Liveness scans: certify dead nodes and account the parameters they free."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Dict, List, Optional, Union

import numpy as np
import pandas as pd
import structlog

from src.nodedrop.config import NodeDropConfig, NodeDropMode
from src.nodedrop.margins import (
    bn_effective_count,
    bn_node_margins,
    is_dead,
    node_margins,
    weak_node_margins,
)
from src.nodedrop.plan import keep_plan, planned_param_count

if TYPE_CHECKING:
    from models.network import Network

log = structlog.get_logger()

REPORT_COLUMNS = [
    "layer",
    "kind",
    "nodes",
    "live_nodes",
    "dead_nodes",
    "weak_dead_nodes",
    "min_margin",
    "max_margin",
]


@dataclass(frozen=True)
class LayerLiveness:
    """Margins of one prunable layer. ``layer`` is the producing Dense/Conv index."""

    layer: int
    kind: str
    margins: np.ndarray
    weak_margins: Optional[np.ndarray] = None

    @property
    def dead_mask(self) -> np.ndarray:
        return is_dead(self.margins)

    @property
    def nodes(self) -> int:
        return int(self.margins.size)

    @property
    def dead_nodes(self) -> int:
        return int(self.dead_mask.sum())

    @property
    def live_nodes(self) -> int:
        return self.nodes - self.dead_nodes

    @property
    def weak_dead_nodes(self) -> int:
        if self.weak_margins is None:
            return self.dead_nodes
        return int(is_dead(self.weak_margins).sum())


@dataclass(frozen=True)
class LivenessReport:
    mode: NodeDropMode
    layers: List[LayerLiveness]
    live_params: int
    total_params: int
    fingerprint: str

    @property
    def reduction_factor(self) -> Optional[float]:
        if self.live_params == 0:
            return None
        return self.total_params / self.live_params

    @property
    def live_nodes(self) -> int:
        return sum(l.live_nodes for l in self.layers)

    @property
    def dead_nodes(self) -> int:
        return sum(l.dead_nodes for l in self.layers)

    @property
    def total_nodes(self) -> int:
        return sum(l.nodes for l in self.layers)

    def dead_masks(self) -> Dict[int, np.ndarray]:
        return {l.layer: l.dead_mask for l in self.layers}

    def empty_layers(self) -> List[int]:
        return [l.layer for l in self.layers if l.nodes and l.live_nodes == 0]

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {
                "layer": l.layer,
                "kind": l.kind,
                "nodes": l.nodes,
                "live_nodes": l.live_nodes,
                "dead_nodes": l.dead_nodes,
                "weak_dead_nodes": l.weak_dead_nodes,
                "min_margin": float(l.margins.min()) if l.nodes else np.nan,
                "max_margin": float(l.margins.max()) if l.nodes else np.nan,
            }
            for l in self.layers
        ]
        return pd.DataFrame(rows, columns=REPORT_COLUMNS)

    def to_csv(self, path: Union[str, Path]) -> None:
        self.to_frame().to_csv(path, index=False)

    def summary(self) -> str:
        factor = self.reduction_factor
        factor_text = "inf (no live parameters)" if factor is None else f"{factor:.2f}x"
        pruned = 100.0 * (1 - self.live_params / self.total_params) if self.total_params else 0.0
        lines = [
            f"mode: {self.mode.value}",
            self.to_frame().to_string(index=False),
            f"nodes: {self.live_nodes} live / {self.total_nodes} prunable",
            f"parameters: {self.live_params} live / {self.total_params} total "
            f"({pruned:.2f}% pruned, factor {factor_text})",
        ]
        return "\n".join(lines)


def scan_network(model: "Network", config: NodeDropConfig) -> LivenessReport:
    """Margins for every prunable node; the output layer is never scanned.

    Raises StructuralError (via ``Network.validate``) when vanilla-mode
    certificates would not be valid for the architecture.
    """
    mode = NodeDropMode(config.mode)
    model.validate(mode)
    layers: List[LayerLiveness] = []
    for unit in model.prunable_units(mode):
        spec = model.specs[unit.layer]
        if mode is NodeDropMode.BATCH_NORM:
            bn = model.states[unit.norm_layer]
            count = bn_effective_count(model.shapes[unit.norm_layer], config.batch_size)
            margins = bn_node_margins(bn.gamma, bn.beta_shift, count)
            layers.append(LayerLiveness(layer=unit.layer, kind=spec.kind, margins=margins))
        else:
            state = model.states[unit.layer]
            layers.append(
                LayerLiveness(
                    layer=unit.layer,
                    kind=spec.kind,
                    margins=node_margins(state.W, state.b),
                    weak_margins=weak_node_margins(state.W, state.b),
                )
            )
    dead = {l.layer: l.dead_mask for l in layers}
    live_params = planned_param_count(keep_plan(model, dead))
    report = LivenessReport(
        mode=mode,
        layers=layers,
        live_params=live_params,
        total_params=model.param_count(),
        fingerprint=model.fingerprint(),
    )
    log.debug(
        "liveness_scanned",
        mode=mode.value,
        live_nodes=report.live_nodes,
        dead_nodes=report.dead_nodes,
        live_params=report.live_params,
    )
    return report
