from __future__ import annotations

from enum import Enum

from pydantic import BaseModel, ConfigDict, Field, model_validator


class NodeDropMode(str, Enum):
    VANILLA = "vanilla"
    BATCH_NORM = "batch_norm"


class NodeDropConfig(BaseModel):
    """Regularization strength, dead-region target and scan cadence.

    ``batch_size`` is the training batch size m; in batch_norm mode the
    certificate is only valid for batches of exactly that size.
    """

    model_config = ConfigDict(populate_by_name=True, extra="forbid")

    lambda_: float = Field(1e-5, alias="lambda", ge=0)
    c: float = Field(1.0, gt=0)
    mode: NodeDropMode = NodeDropMode.VANILLA
    batch_size: int = Field(1024, ge=1)
    scan_every: int = Field(1, ge=1)
    freeze_dead: bool = True

    @model_validator(mode="after")
    def batch_norm_needs_batches(self) -> "NodeDropConfig":
        if self.mode is NodeDropMode.BATCH_NORM and self.batch_size < 2:
            raise ValueError("batch_norm mode needs batch_size m >= 2")
        return self
