"""Dataset ingestion, augmentation and deterministic batching.

Supported on-disk formats:
  - MNIST IDX (big-endian): magic 0x00000803 for images with dims [N, 28, 28],
    0x00000801 for labels with dims [N]; payload is unsigned bytes. Files
    ending in ``.gz`` are decompressed transparently.
  - CIFAR-10 binary batches: 3073-byte records, one label byte followed by
    3072 pixel bytes stored channel-planar (R, G, B), 32x32 each.

Pixels are divided by 255 so every input lies in [0, 1].
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Literal, Sequence, Tuple, Union

import numpy as np
import structlog

from src.errors import ConfigError, ContractError, FormatError, LengthError

log = structlog.get_logger()

PathLike = Union[str, Path]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD_BYTES = 3073
CIFAR_SHAPE = (3, 32, 32)
AUGMENT_PAD = 4

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILES = ["test_batch.bin"]


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # N x C x H x W, values in [0, 1]
    labels: np.ndarray  # N, int64
    num_classes: int
    name: str = ""

    def __post_init__(self) -> None:
        if self.images.ndim != 4:
            raise ContractError(f"images must be N x C x H x W, got {self.images.shape}")
        if self.labels.ndim != 1 or self.labels.shape[0] != self.images.shape[0]:
            raise ContractError(
                f"{self.labels.shape[0]} labels for {self.images.shape[0]} images"
            )
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise ContractError("every pixel must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ContractError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return int(self.images.shape[0])

    @property
    def sample_shape(self) -> Tuple[int, ...]:
        return tuple(self.images.shape[1:])

    def subset(self, n: int) -> "Dataset":
        """The first ``n`` samples (all of them when n is larger than the dataset)."""
        if n < 0:
            raise ContractError(f"subset size must be >= 0, got {n}")
        return Dataset(self.images[:n], self.labels[:n], self.num_classes, self.name)

    def astype(self, dtype) -> "Dataset":
        return Dataset(self.images.astype(dtype), self.labels, self.num_classes, self.name)


# ------------------------------- Readers -----------------------------------------


def _read_bytes(path: PathLike) -> bytes:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"dataset file not found: {path}")
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as f:
            return f.read()
    return path.read_bytes()


def _parse_idx(raw: bytes, expected_magic: int, path: PathLike) -> np.ndarray:
    if len(raw) < 4:
        raise LengthError(f"{path}: IDX header truncated", offset=len(raw))
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise FormatError(
            f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}", offset=0
        )
    ndim = magic & 0xFF
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise LengthError(f"{path}: IDX dims truncated", offset=len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) < header_end + count:
        raise LengthError(
            f"{path}: expected {count} payload bytes, found {len(raw) - header_end}",
            offset=len(raw),
        )
    payload = np.frombuffer(raw, dtype=np.uint8, count=count, offset=header_end)
    return payload.reshape(dims)


def load_mnist_idx(images_path: PathLike, labels_path: PathLike) -> Dataset:
    pixels = _parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, images_path)
    labels = _parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, labels_path)
    if labels.shape[0] != pixels.shape[0]:
        raise FormatError(
            f"{labels_path}: {labels.shape[0]} labels for {pixels.shape[0]} images", offset=4
        )
    if labels.size and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise FormatError(f"{labels_path}: label {labels[bad]} out of range", offset=8 + bad)
    images = pixels.astype(np.float32)[:, None, :, :] / np.float32(255.0)
    log.debug("mnist_loaded", path=str(images_path), samples=int(images.shape[0]))
    return Dataset(images, labels.astype(np.int64), num_classes=10, name="mnist")


def load_cifar10(batch_paths: Sequence[PathLike]) -> Dataset:
    images: List[np.ndarray] = []
    labels: List[np.ndarray] = []
    for path in batch_paths:
        raw = _read_bytes(path)
        if len(raw) % CIFAR_RECORD_BYTES:
            raise FormatError(
                f"{path}: length {len(raw)} is not a multiple of {CIFAR_RECORD_BYTES}",
                offset=len(raw) - len(raw) % CIFAR_RECORD_BYTES,
            )
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        if records.size and records[:, 0].max() > 9:
            bad = int(np.argmax(records[:, 0] > 9))
            raise FormatError(
                f"{path}: label {records[bad, 0]} out of range", offset=bad * CIFAR_RECORD_BYTES
            )
        labels.append(records[:, 0].astype(np.int64))
        images.append(records[:, 1:].reshape((-1,) + CIFAR_SHAPE))
    if not images:
        raise ConfigError("load_cifar10 needs at least one batch file")
    pixels = np.concatenate(images).astype(np.float32) / np.float32(255.0)
    log.debug("cifar10_loaded", files=len(images), samples=int(pixels.shape[0]))
    return Dataset(pixels, np.concatenate(labels), num_classes=10, name="cifar10")


def _resolve(directory: Path, name: str) -> Path:
    for candidate in (directory / name, directory / f"{name}.gz"):
        if candidate.exists():
            return candidate
    raise ConfigError(f"{name} not found in {directory}")


def load_mnist_dir(directory: PathLike) -> Tuple[Dataset, Dataset]:
    """(train, test) from the four standard IDX files, plain or gzipped."""
    directory = Path(directory)
    return tuple(  # type: ignore[return-value]
        load_mnist_idx(_resolve(directory, img), _resolve(directory, lab))
        for img, lab in (MNIST_FILES["train"], MNIST_FILES["test"])
    )


def load_cifar10_dir(directory: PathLike) -> Tuple[Dataset, Dataset]:
    """(train, test) from ``data_batch_{1..5}.bin``/``test_batch.bin``.

    Also looks inside the ``cifar-10-batches-bin`` folder of the official archive.
    """
    directory = Path(directory)
    nested = directory / "cifar-10-batches-bin"
    if not (directory / CIFAR_TEST_FILES[0]).exists() and nested.is_dir():
        directory = nested
    train = load_cifar10([_resolve(directory, f) for f in CIFAR_TRAIN_FILES])
    test = load_cifar10([_resolve(directory, f) for f in CIFAR_TEST_FILES])
    return train, test


# ------------------------------- Writers -----------------------------------------


def write_idx(path: PathLike, array: np.ndarray) -> None:
    """Write a uint8 array as IDX (3-D images or 1-D labels)."""
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ContractError(f"IDX payload must be uint8, got {array.dtype}")
    magic = 0x00000800 | array.ndim
    header = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape)
    data = header + np.ascontiguousarray(array).tobytes()
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "wb") as f:
            f.write(data)
    else:
        path.write_bytes(data)


def write_cifar10_batch(path: PathLike, images: np.ndarray, labels: np.ndarray) -> None:
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.dtype != np.uint8 or images.shape[1:] != CIFAR_SHAPE:
        raise ContractError(f"CIFAR images must be uint8 N x 3 x 32 x 32, got {images.shape}")
    records = np.empty((images.shape[0], CIFAR_RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = labels.astype(np.uint8)
    records[:, 1:] = images.reshape(images.shape[0], -1)
    Path(path).write_bytes(records.tobytes())


# ------------------------------- Augmentation ------------------------------------


def shift_and_flip(images: np.ndarray, offsets: np.ndarray, flips: np.ndarray) -> np.ndarray:
    """Zero-pad by 4, crop at ``offsets`` (row, col in 0..8) and mirror where ``flips``.

    Offsets are in padded coordinates, so (4, 4) without a flip is the identity.
    """
    n, _, h, w = images.shape
    p = AUGMENT_PAD
    padded = np.pad(images, ((0, 0), (0, 0), (p, p), (p, p)), mode="constant")
    out = np.empty_like(images)
    for i in range(n):
        r, c = int(offsets[i, 0]), int(offsets[i, 1])
        crop = padded[i, :, r : r + h, c : c + w]
        out[i] = crop[:, :, ::-1] if flips[i] else crop
    return out


def augment(images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Random shift of up to 4 pixels and horizontal mirror with probability 0.5."""
    n = images.shape[0]
    offsets = rng.integers(0, 2 * AUGMENT_PAD + 1, size=(n, 2))
    flips = rng.random(n) < 0.5
    return shift_and_flip(images, offsets, flips)


# ------------------------------- Batching ----------------------------------------


def batch_iter(
    dataset: Dataset,
    batch_size: int,
    shuffle: bool,
    rng: np.random.Generator,
    mode: Literal["train", "eval"] = "train",
) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Yield (images, labels) batches.

    Train mode drops the short final batch so every training batch has exactly
    ``batch_size`` samples; eval mode keeps it.
    """
    if batch_size < 1:
        raise ContractError(f"batch_size must be >= 1, got {batch_size}")
    n = len(dataset)
    order = rng.permutation(n) if shuffle else np.arange(n)
    stop = n - n % batch_size if mode == "train" else n
    for start in range(0, stop, batch_size):
        idx = order[start : start + batch_size]
        yield dataset.images[idx], dataset.labels[idx]
