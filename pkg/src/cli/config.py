"""Run configuration: preset defaults < config file < command-line flags.

Config files are flat ``key=value`` lines; ``#`` starts a comment and keys may
be spelled with ``-`` or ``_`` like the long flags (``batch-size=64``).
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from models.presets import Preset, get_preset
from src.errors import ConfigError
from src.nodedrop.config import NodeDropConfig, NodeDropMode
from src.training.config import OptimizerKind, TrainConfig

DATA_DIR_ENV = "NODEDROP_DATA_DIR"

_INVERTED_FLAGS = {"no_freeze": "freeze_dead", "no_augment": "augment"}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def normalize_key(key: str) -> str:
    key = key.strip().lstrip("-").replace("-", "_")
    return "lambda" if key == "lambda_" else key


def parse_config_file(path: Union[str, Path]) -> Dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values: Dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got '{line}'")
        key, value = line.split("=", 1)
        key = normalize_key(key)
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        values[key] = value.strip()
    return values


def _parse_milestones(value: Any) -> Any:
    """``"80:0.1,130:0.1"`` -> [(80, 0.1), (130, 0.1)]; lists pass through."""
    if not isinstance(value, str):
        return value
    out: List[Tuple[int, float]] = []
    for item in filter(None, (v.strip() for v in value.split(","))):
        epoch, _, mult = item.partition(":")
        try:
            out.append((int(epoch), float(mult)))
        except ValueError as e:
            raise ValueError(f"bad milestone '{item}', expected epoch:multiplier") from e
    return out


class RunConfig(BaseModel):
    model_config = ConfigDict(populate_by_name=True, extra="forbid")

    preset: str = "dense160"
    dataset: Optional[Literal["mnist", "cifar10", "synthetic"]] = None
    dataset_dir: Optional[str] = None
    lambda_: float = Field(1e-5, alias="lambda", ge=0)
    c: float = Field(1.0, gt=0)
    beta: float = Field(10.0, gt=0)
    mode: NodeDropMode = NodeDropMode.VANILLA
    epochs: Optional[int] = Field(None, ge=1)
    batch_size: Optional[int] = Field(None, ge=1)
    seed: int = 0
    optimizer: Optional[OptimizerKind] = None
    lr: Optional[float] = Field(None, gt=0)
    momentum: Optional[float] = Field(None, ge=0, lt=1)
    weight_decay: float = Field(0.0, ge=0)
    lr_milestones: Optional[List[Tuple[int, float]]] = None
    scan_every: int = Field(1, ge=1)
    out_dir: str = "runs/latest"
    precision: Literal[32, 64] = 32
    width_scale: float = Field(0.25, gt=0)
    train_limit: Optional[int] = Field(None, ge=1)
    test_limit: Optional[int] = Field(None, ge=1)
    freeze_dead: bool = True
    augment: Optional[bool] = None

    @model_validator(mode="before")
    @classmethod
    def translate_keys(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        data = {normalize_key(k): v for k, v in data.items()}
        for flag, target in _INVERTED_FLAGS.items():
            if flag in data:
                raw = data.pop(flag)
                text = str(raw).strip().lower()
                if text not in _TRUE | _FALSE:
                    raise ValueError(f"{flag} expects a boolean, got {raw!r}")
                data[target] = text in _FALSE
        return data

    @field_validator("mode", mode="before")
    @classmethod
    def short_mode(cls, value: Any) -> Any:
        return NodeDropMode.BATCH_NORM if value in ("bn", "batchnorm") else value

    @field_validator("lr_milestones", mode="before")
    @classmethod
    def milestones(cls, value: Any) -> Any:
        return _parse_milestones(value)

    def resolve_preset(self) -> Preset:
        return get_preset(self.preset, mode=self.mode, beta=self.beta, width_scale=self.width_scale)

    def train_config(self, preset: Preset) -> TrainConfig:
        d = preset.defaults
        batch_size = self.batch_size or d.get("batch_size", 1024)
        try:
            return TrainConfig(
                optimizer=self.optimizer or d.get("optimizer", OptimizerKind.ADAM),
                lr=self.lr or d.get("lr", 1e-3),
                momentum=self.momentum if self.momentum is not None else d.get("momentum", 0.9),
                weight_decay=self.weight_decay,
                lr_milestones=(
                    self.lr_milestones
                    if self.lr_milestones is not None
                    else d.get("lr_milestones", [])
                ),
                epochs=self.epochs or d.get("epochs", 1),
                batch_size=batch_size,
                seed=self.seed,
                nodedrop=NodeDropConfig(
                    lambda_=self.lambda_,
                    c=self.c,
                    mode=preset.mode,
                    batch_size=batch_size,
                    scan_every=self.scan_every,
                    freeze_dead=self.freeze_dead,
                ),
                precision=self.precision,
                augment=self.augment if self.augment is not None else d.get("augment", False),
                train_limit=self.train_limit,
                test_limit=self.test_limit,
            )
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def data_dir(self) -> Optional[Path]:
        value = self.dataset_dir or os.environ.get(DATA_DIR_ENV)
        return Path(value) if value else None


def merge_sources(
    file_values: Optional[Dict[str, Any]], cli_values: Dict[str, Any]
) -> RunConfig:
    """Validate the union of config-file and CLI values; CLI wins."""
    merged: Dict[str, Any] = {}
    for source in (file_values or {}, cli_values):
        for key, value in source.items():
            merged[normalize_key(key)] = value
    return RunConfig.model_validate(merged)
