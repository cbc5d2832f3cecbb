"""Training loop with NodeDrop regularization and liveness tracking.

Per batch: forward, cross-entropy, backward, add the NodeDrop subgradients
(and L2 weight decay in batch_norm mode), mask the gradients of frozen dead
nodes, optimizer step. Every ``scan_every`` epochs (and after the last one)
the network is scanned; nodes found dead for the first time get their
optimizer state zeroed and are frozen from then on.

Random streams are derived from (seed, epoch) for shuffling and
(seed, epoch, batch) for augmentation, so a run is reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import structlog
from sklearn.metrics import accuracy_score

from data.datasets import Dataset, augment, batch_iter
from models.network import Network
from src.errors import ConfigError, ContractError, TrainingDivergedError
from src.nn.layers import BatchNormSpec
from src.nodedrop.config import NodeDropMode
from src.nodedrop.regularizer import network_regularization
from src.nodedrop.scan import LivenessReport, scan_network
from src.tensor.ops import dtype_for, make_rng
from src.training.config import TrainConfig
from src.training.losses import cross_entropy
from src.training.optimizers import Optimizer, make_optimizer

log = structlog.get_logger()

METRICS_COLUMNS = ["epoch", "train_loss", "reg_loss", "test_acc", "live_nodes", "live_params"]

# stream tags for make_rng
_SHUFFLE = 0
_AUGMENT = 1


def lr_at(epoch: int, base_lr: float, milestones: Sequence[Tuple[int, float]]) -> float:
    """Learning rate for 1-based ``epoch``; a milestone at e applies from epoch e+1 on."""
    lr = base_lr
    for milestone, mult in milestones:
        if epoch > milestone:
            lr *= mult
    return lr


@dataclass
class MetricsLog:
    rows: List[Dict[str, float]] = field(default_factory=list)

    def append(self, **row: float) -> None:
        self.rows.append({k: row[k] for k in METRICS_COLUMNS})

    def __len__(self) -> int:
        return len(self.rows)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=METRICS_COLUMNS)

    def to_csv(self, path: Union[str, Path]) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g")

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "MetricsLog":
        frame = pd.read_csv(path)
        missing = set(METRICS_COLUMNS) - set(frame.columns)
        if missing:
            raise ContractError(f"{path}: missing metrics columns {sorted(missing)}")
        rows = frame[METRICS_COLUMNS].to_dict(orient="records")
        return cls(rows=rows)

    def last(self) -> Optional[Dict[str, float]]:
        return self.rows[-1] if self.rows else None


def evaluate(model: Network, dataset: Dataset, batch_size: int = 1000) -> float:
    """Eval-mode accuracy; argmax ties go to the lowest class index."""
    if len(dataset) == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    images = dataset.images.astype(model.dtype, copy=False)
    preds = model.predict(images, batch_size=batch_size).argmax(axis=1)
    return float(accuracy_score(dataset.labels, preds))


def _node_keys(model: Network, mode: NodeDropMode, layer: int) -> List[str]:
    """Parameter keys whose leading axis is indexed by the nodes of ``layer``."""
    keys = [f"{layer}.W", f"{layer}.b"]
    norm = layer + 1
    if mode is NodeDropMode.BATCH_NORM and isinstance(model.specs[norm], BatchNormSpec):
        keys += [f"{norm}.gamma", f"{norm}.beta_shift"]
    return keys


class _FreezeTracker:
    """Remembers which nodes were frozen and masks their gradients."""

    def __init__(self, model: Network, mode: NodeDropMode, enabled: bool):
        self.model = model
        self.mode = mode
        self.enabled = enabled
        self.frozen: Dict[int, np.ndarray] = {}

    def update(self, report: LivenessReport, optimizer: Optimizer, epoch: int) -> None:
        if not self.enabled:
            return
        for layer in report.layers:
            previous = self.frozen.get(layer.layer, np.zeros(layer.nodes, dtype=bool))
            newly = layer.dead_mask & ~previous
            if not newly.any():
                continue
            rows = np.flatnonzero(newly)
            for key in _node_keys(self.model, self.mode, layer.layer):
                optimizer.zero_rows(key, rows)
            self.frozen[layer.layer] = previous | newly
            log.info("nodes_frozen", epoch=epoch, layer=layer.layer, count=int(rows.size))

    def mask(self, grads: Dict[str, np.ndarray]) -> None:
        for layer, frozen in self.frozen.items():
            rows = np.flatnonzero(frozen)
            for key in _node_keys(self.model, self.mode, layer):
                if key in grads:
                    grads[key][rows] = 0


def _flatten_grads(per_layer: List[Dict[str, np.ndarray]]) -> Dict[str, np.ndarray]:
    return {f"{i}.{name}": g for i, layer in enumerate(per_layer) for name, g in layer.items()}


def train(
    model: Network, train_set: Dataset, test_set: Dataset, config: TrainConfig
) -> Tuple[Network, MetricsLog]:
    """Train a copy of ``model``; the input model is not modified."""
    nd = config.nodedrop
    mode = NodeDropMode(nd.mode)
    dtype = dtype_for(config.precision)
    model = model.astype(dtype)
    model.validate(mode)
    if config.train_limit is not None:
        train_set = train_set.subset(config.train_limit)
    if config.test_limit is not None:
        test_set = test_set.subset(config.test_limit)
    train_set = train_set.astype(dtype)
    if len(train_set) < config.batch_size:
        raise ConfigError(
            f"training set has {len(train_set)} samples, "
            f"fewer than one batch of {config.batch_size}"
        )
    if train_set.sample_shape != tuple(model.input_shape):
        raise ConfigError(
            f"dataset samples are {train_set.sample_shape}, model expects {model.input_shape}"
        )

    optimizer = make_optimizer(config)
    tracker = _FreezeTracker(model, mode, nd.freeze_dead)
    params = model.parameters()
    metrics = MetricsLog()
    log.info(
        "training_started",
        mode=mode.value,
        lambda_=nd.lambda_,
        c=nd.c,
        epochs=config.epochs,
        batch_size=config.batch_size,
        seed=config.seed,
        params=model.param_count(),
    )

    for epoch in range(1, config.epochs + 1):
        lr = lr_at(epoch, config.lr, config.lr_milestones)
        shuffle_rng = make_rng(config.seed, _SHUFFLE, epoch)
        loss_sum, reg_sum, batches = 0.0, 0.0, 0
        for b, (x, y) in enumerate(
            batch_iter(train_set, config.batch_size, shuffle=True, rng=shuffle_rng, mode="train")
        ):
            if config.augment:
                x = augment(x, make_rng(config.seed, _AUGMENT, epoch, b))
            logits, caches = model.forward(x, mode="train")
            loss, grad_logits = cross_entropy(logits, y)
            if not np.isfinite(loss):
                layer = model.first_nonfinite_layer(x, mode="train")
                log.error("training_diverged", epoch=epoch, batch=b, layer=layer)
                raise TrainingDivergedError(epoch, b, layer, detail=f"loss={loss}")
            grads = _flatten_grads(model.backward(caches, grad_logits))
            reg_loss, reg_grads = network_regularization(model, nd)
            for key, g in reg_grads.items():
                grads[key] += g
            if config.weight_decay:
                wd = dtype.type(config.weight_decay)
                for i in model.param_layers():
                    grads[f"{i}.W"] += wd * params[f"{i}.W"]
            tracker.mask(grads)
            optimizer.step(params, grads, lr)
            loss_sum += loss
            reg_sum += reg_loss
            batches += 1

        test_acc = evaluate(model, test_set) if len(test_set) else float("nan")
        # epochs without a scan log NaN liveness
        live_nodes, live_params = np.nan, np.nan
        if epoch % nd.scan_every == 0 or epoch == config.epochs:
            report = scan_network(model, nd)
            tracker.update(report, optimizer, epoch)
            live_nodes, live_params = report.live_nodes, report.live_params
        metrics.append(
            epoch=epoch,
            train_loss=loss_sum / batches,
            reg_loss=reg_sum / batches,
            test_acc=test_acc,
            live_nodes=live_nodes,
            live_params=live_params,
        )
        log.info("epoch_complete", **metrics.last(), lr=lr)
    return model, metrics
