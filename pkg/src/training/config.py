from __future__ import annotations

from enum import Enum
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.nodedrop.config import NodeDropConfig, NodeDropMode


class OptimizerKind(str, Enum):
    ADAM = "adam"
    SGD = "sgd"


class TrainConfig(BaseModel):
    """Everything that determines a training run, given the model and data.

    ``batch_size`` is the single source of truth for m: the nodedrop config is
    rewritten to match it on validation.
    """

    model_config = ConfigDict(extra="forbid")

    optimizer: OptimizerKind = OptimizerKind.ADAM
    lr: float = Field(1e-3, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    weight_decay: float = Field(0.0, ge=0)
    lr_milestones: List[Tuple[int, float]] = Field(default_factory=list)
    epochs: int = Field(1, ge=1)
    batch_size: int = Field(1024, ge=1)
    seed: int = 0
    nodedrop: NodeDropConfig = Field(default_factory=NodeDropConfig)
    precision: Literal[32, 64] = 32
    augment: bool = False
    train_limit: Optional[int] = Field(None, ge=1)
    test_limit: Optional[int] = Field(None, ge=1)

    @field_validator("lr_milestones")
    @classmethod
    def milestones_sorted(cls, value: List[Tuple[int, float]]) -> List[Tuple[int, float]]:
        epochs = [e for e, _ in value]
        if any(e < 1 for e in epochs) or epochs != sorted(epochs):
            raise ValueError("lr_milestones must be ascending epochs >= 1")
        if any(mult <= 0 for _, mult in value):
            raise ValueError("lr_milestones multipliers must be > 0")
        return value

    @model_validator(mode="after")
    def consistent(self) -> "TrainConfig":
        if self.nodedrop.batch_size != self.batch_size:
            self.nodedrop = self.nodedrop.model_copy(update={"batch_size": self.batch_size})
        if self.nodedrop.mode is NodeDropMode.BATCH_NORM and self.batch_size < 2:
            raise ValueError("batch_norm mode needs batch_size >= 2")
        if self.weight_decay > 0 and self.nodedrop.mode is not NodeDropMode.BATCH_NORM:
            raise ValueError("weight_decay is only supported in batch_norm mode")
        return self
