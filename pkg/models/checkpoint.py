"""Single-file checkpoint container.

Layout::

    b"NODEDROP"                  8-byte magic
    uint32 (little-endian)       manifest length in bytes
    manifest                     canonical JSON (sorted keys, compact separators)
    blobs                        float32 little-endian, in manifest order

The manifest carries ``format_version``, the layer spec list, the per-sample
input shape, the class count, run metadata and one ``{name, shape}`` entry per
stored array. Arrays are always written as float32, whatever the in-memory
precision. Writes go to a temp file in the target directory and are moved
into place with ``os.replace``.
"""

from __future__ import annotations

import json
import math
import os
import struct
import tempfile
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from models.network import Network
from src.errors import (
    ConfigError,
    CorruptionError,
    DimensionError,
    FormatError,
    LengthError,
    VersionError,
)
from src.nn.layers import SPEC_LIST, LayerState, state_shapes
from src.nodedrop.config import NodeDropConfig

log = structlog.get_logger()

MAGIC = b"NODEDROP"
FORMAT_VERSION = 1
_HEADER = len(MAGIC) + 4
_BLOB_DTYPE = np.dtype("<f4")

PathLike = Union[str, Path]


class CheckpointMeta(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epoch: int = Field(0, ge=0)
    seed: int = 0
    nodedrop: NodeDropConfig = Field(default_factory=NodeDropConfig)
    metrics: Dict[str, Optional[float]] = Field(default_factory=dict)
    preset: Optional[str] = None

    @field_validator("metrics")
    @classmethod
    def finite_or_null(cls, value: Dict[str, Optional[float]]) -> Dict[str, Optional[float]]:
        return {k: (v if v is not None and math.isfinite(v) else None) for k, v in value.items()}


def _canonical(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def _manifest(model: Network, meta: CheckpointMeta) -> Dict[str, Any]:
    tensors = []
    for i, state in enumerate(model.states):
        for name, arr in state.arrays().items():
            tensors.append({"name": f"{i}.{name}", "shape": list(arr.shape)})
    return {
        "format_version": FORMAT_VERSION,
        "layers": SPEC_LIST.dump_python(model.specs, mode="json"),
        "input_shape": list(model.input_shape),
        "num_classes": model.num_classes,
        "meta": meta.model_dump(mode="json", by_alias=True),
        "tensors": tensors,
    }


def to_bytes(model: Network, meta: CheckpointMeta) -> bytes:
    manifest = _canonical(_manifest(model, meta))
    parts = [MAGIC, struct.pack("<I", len(manifest)), manifest]
    for state in model.states:
        for arr in state.arrays().values():
            parts.append(np.ascontiguousarray(arr, dtype=_BLOB_DTYPE).tobytes())
    return b"".join(parts)


def save(model: Network, meta: CheckpointMeta, path: PathLike) -> None:
    path = Path(path)
    data = to_bytes(model, meta)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    log.debug("checkpoint_saved", path=str(path), bytes=len(data))


def _read_manifest(raw: bytes) -> Tuple[Dict[str, Any], int]:
    if len(raw) < _HEADER:
        raise LengthError("checkpoint header truncated", offset=len(raw))
    if raw[: len(MAGIC)] != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)", offset=0)
    (length,) = struct.unpack("<I", raw[len(MAGIC) : _HEADER])
    end = _HEADER + length
    if len(raw) < end:
        raise LengthError("checkpoint manifest truncated", offset=len(raw))
    try:
        manifest = json.loads(raw[_HEADER:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"checkpoint manifest is not valid JSON: {e}", offset=_HEADER) from e
    if not isinstance(manifest, dict):
        raise FormatError("checkpoint manifest must be a JSON object", offset=_HEADER)
    return manifest, end


def from_bytes(raw: bytes) -> Tuple[Network, CheckpointMeta]:
    manifest, offset = _read_manifest(raw)
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionError(
            f"unsupported checkpoint format_version {version!r}; this build reads {FORMAT_VERSION}"
        )
    try:
        specs = SPEC_LIST.validate_python(manifest["layers"])
        meta = CheckpointMeta.model_validate(manifest["meta"])
        input_shape = tuple(int(d) for d in manifest["input_shape"])
        num_classes = int(manifest["num_classes"])
        declared = [
            (str(t["name"]), tuple(int(d) for d in t["shape"])) for t in manifest["tensors"]
        ]
    except (KeyError, TypeError, ValueError, ValidationError) as e:
        raise FormatError(f"invalid checkpoint manifest: {e}", offset=_HEADER) from e

    expected = [
        (f"{i}.{name}", shape)
        for i, spec in enumerate(specs)
        for name, shape in state_shapes(spec).items()
    ]
    if [n for n, _ in declared] != [n for n, _ in expected]:
        raise FormatError("checkpoint tensor list does not match its layers", offset=_HEADER)

    states = [LayerState() for _ in specs]
    for (name, shape), (_, want) in zip(declared, expected):
        if shape != want:
            raise CorruptionError(name, f"declared shape {shape}, layer needs {want}")
        nbytes = _BLOB_DTYPE.itemsize * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(raw):
            raise CorruptionError(
                name, f"blob needs {nbytes} bytes, only {len(raw) - offset} remain"
            )
        arr = np.frombuffer(raw, dtype=_BLOB_DTYPE, count=nbytes // 4, offset=offset)
        layer, attr = name.split(".", 1)
        setattr(states[int(layer)], attr, arr.reshape(shape).astype(np.float32))
        offset += nbytes
    if offset != len(raw):
        raise CorruptionError(
            declared[-1][0] if declared else "<none>",
            f"{len(raw) - offset} unexpected trailing bytes",
        )
    try:
        model = Network(
            specs=specs, states=states, input_shape=input_shape, num_classes=num_classes
        )
    except DimensionError as e:
        raise FormatError(f"checkpoint layers are not shape-valid: {e}", offset=_HEADER) from e
    return model, meta


def load(path: PathLike) -> Tuple[Network, CheckpointMeta]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    model, meta = from_bytes(path.read_bytes())
    log.debug("checkpoint_loaded", path=str(path), params=model.param_count())
    return model, meta
