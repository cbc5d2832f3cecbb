"""Exception hierarchy shared by every package in the repo.

Each class carries the process exit code the CLI maps it to, so command
handlers only need to catch `NodeDropError` and return `err.exit_code`.
"""

from __future__ import annotations

from typing import Iterable, Optional


class NodeDropError(Exception):
    exit_code = 1


class DimensionError(NodeDropError, ValueError):
    """Array shapes do not line up."""

    exit_code = 2


class ContractError(NodeDropError, ValueError):
    """A documented precondition was violated by the caller."""

    exit_code = 2


class ConfigError(NodeDropError, ValueError):
    exit_code = 2


class StructuralError(NodeDropError):
    """Vanilla-mode certification cannot hold for a layer's input."""

    exit_code = 2

    def __init__(self, layer_index: int, reason: str):
        self.layer_index = layer_index
        self.reason = reason
        super().__init__(f"layer {layer_index}: {reason}")


class FormatError(NodeDropError):
    exit_code = 3

    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class LengthError(FormatError):
    """File ends before the declared payload does."""


class VersionError(FormatError):
    pass


class CorruptionError(FormatError):
    def __init__(self, param_name: str, message: str):
        self.param_name = param_name
        super().__init__(f"parameter '{param_name}': {message}")


class DegenerateLayerError(NodeDropError):
    """Compaction would remove every node of one or more layers."""

    exit_code = 4

    def __init__(self, layers: Iterable[int]):
        self.layers = list(layers)
        super().__init__(
            "all nodes dead in layer(s) "
            + ", ".join(str(i) for i in self.layers)
            + "; the network output is constant"
        )


class TrainingDivergedError(NodeDropError):
    exit_code = 4

    def __init__(self, epoch: int, batch: int, layer: Optional[int], detail: str = ""):
        self.epoch = epoch
        self.batch = batch
        self.layer = layer
        where = f"layer {layer}" if layer is not None else "loss"
        msg = f"non-finite values at epoch {epoch}, batch {batch}, first seen in {where}"
        if detail:
            msg = f"{msg}: {detail}"
        super().__init__(msg)
