import gzip
import struct

import numpy as np
import pytest

from data.datasets import (
    Dataset,
    augment,
    batch_iter,
    load_cifar10,
    load_cifar10_dir,
    load_mnist_dir,
    load_mnist_idx,
    shift_and_flip,
    write_idx,
)
from data.synthetic import SyntheticConfig, make_synthetic, write_synthetic_idx
from src.errors import ConfigError, ContractError, FormatError, LengthError
from src.tensor.ops import make_rng


def _tiny(n=10):
    images = np.linspace(0, 1, n * 4, dtype=np.float32).reshape(n, 1, 2, 2)
    return Dataset(images, np.arange(n) % 3, num_classes=3)


# ---------------- IDX ----------------


def test_mnist_dir_reads_plain_and_gzipped_files(mnist_files):
    directory, pixels, labels = mnist_files
    train, test = load_mnist_dir(directory)
    assert train.images.shape == (6, 1, 28, 28)
    assert train.images.dtype == np.float32
    np.testing.assert_array_equal(train.labels, labels)
    np.testing.assert_allclose(train.images[:, 0] * 255, pixels, atol=1e-4)
    assert len(test) == 2
    np.testing.assert_array_equal(test.labels, labels[:2])


def test_idx_pixel_scaling(tmp_path):
    write_idx(tmp_path / "img", np.array([[[0, 255], [51, 102]]], dtype=np.uint8))
    write_idx(tmp_path / "lab", np.array([4], dtype=np.uint8))
    ds = load_mnist_idx(tmp_path / "img", tmp_path / "lab")
    np.testing.assert_allclose(ds.images[0, 0], [[0.0, 1.0], [0.2, 0.4]], rtol=1e-6)


def test_idx_bad_magic_reports_offset_zero(tmp_path):
    raw = struct.pack(">IIII", 0x0803_0000, 1, 2, 2) + bytes(4)
    (tmp_path / "img").write_bytes(raw)
    write_idx(tmp_path / "lab", np.array([1], dtype=np.uint8))
    with pytest.raises(FormatError) as excinfo:
        load_mnist_idx(tmp_path / "img", tmp_path / "lab")
    assert excinfo.value.offset == 0
    assert excinfo.value.exit_code == 3


def test_idx_truncated_payload(tmp_path):
    write_idx(tmp_path / "img", np.zeros((2, 4, 4), dtype=np.uint8))
    write_idx(tmp_path / "lab", np.zeros(2, dtype=np.uint8))
    raw = (tmp_path / "img").read_bytes()
    (tmp_path / "img").write_bytes(raw[:-1])
    with pytest.raises(LengthError):
        load_mnist_idx(tmp_path / "img", tmp_path / "lab")


def test_idx_label_count_mismatch(tmp_path):
    write_idx(tmp_path / "img", np.zeros((2, 4, 4), dtype=np.uint8))
    write_idx(tmp_path / "lab", np.zeros(3, dtype=np.uint8))
    with pytest.raises(FormatError):
        load_mnist_idx(tmp_path / "img", tmp_path / "lab")


def test_idx_label_out_of_range(tmp_path):
    write_idx(tmp_path / "img", np.zeros((2, 4, 4), dtype=np.uint8))
    write_idx(tmp_path / "lab", np.array([1, 12], dtype=np.uint8))
    with pytest.raises(FormatError) as excinfo:
        load_mnist_idx(tmp_path / "img", tmp_path / "lab")
    assert excinfo.value.offset == 9


def test_gzip_written_file_is_really_gzipped(tmp_path):
    write_idx(tmp_path / "lab.gz", np.array([1, 2], dtype=np.uint8))
    with gzip.open(tmp_path / "lab.gz", "rb") as f:
        assert f.read()[:4] == struct.pack(">I", 0x801)


def test_missing_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_mnist_dir(tmp_path)


# ---------------- CIFAR-10 ----------------


def test_cifar_batch_layout(cifar_file):
    path, images, labels = cifar_file
    ds = load_cifar10([path])
    assert ds.images.shape == (3, 3, 32, 32)
    np.testing.assert_array_equal(ds.labels, labels)
    np.testing.assert_allclose(ds.images * 255, images, atol=1e-4)


def test_cifar_partial_record(cifar_file):
    path, _, _ = cifar_file
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(FormatError) as excinfo:
        load_cifar10([path])
    assert excinfo.value.offset == 2 * 3073


def test_cifar_dir_finds_nested_archive_folder(tmp_path, cifar_file):
    path, _, _ = cifar_file
    nested = tmp_path / "archive" / "cifar-10-batches-bin"
    nested.mkdir(parents=True)
    raw = path.read_bytes()
    for i in range(1, 6):
        (nested / f"data_batch_{i}.bin").write_bytes(raw)
    (nested / "test_batch.bin").write_bytes(raw)
    train, test = load_cifar10_dir(tmp_path / "archive")
    assert len(train) == 15
    assert len(test) == 3


# ---------------- Dataset ----------------


def test_dataset_rejects_out_of_range_pixels():
    with pytest.raises(ContractError):
        Dataset(np.full((1, 1, 2, 2), 1.5, dtype=np.float32), np.array([0]), num_classes=2)


def test_dataset_rejects_bad_labels():
    with pytest.raises(ContractError):
        Dataset(np.zeros((1, 1, 2, 2), dtype=np.float32), np.array([2]), num_classes=2)


def test_subset_takes_prefix():
    ds = _tiny()
    sub = ds.subset(4)
    assert len(sub) == 4
    np.testing.assert_array_equal(sub.labels, ds.labels[:4])
    assert len(ds.subset(100)) == 10


# ---------------- Augmentation ----------------


def test_centered_crop_without_flip_is_identity():
    images = make_rng(0).uniform(0, 1, size=(3, 3, 8, 8)).astype(np.float32)
    offsets = np.full((3, 2), 4)
    out = shift_and_flip(images, offsets, np.zeros(3, dtype=bool))
    np.testing.assert_array_equal(out, images)


def test_flip_and_shift():
    images = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4) / 16
    flipped = shift_and_flip(images, np.array([[4, 4]]), np.array([True]))
    np.testing.assert_array_equal(flipped, images[:, :, :, ::-1])

    # crop origin one row down in padded coordinates shifts the content up
    shifted = shift_and_flip(images, np.array([[5, 4]]), np.array([False]))
    np.testing.assert_array_equal(shifted[0, 0, :3], images[0, 0, 1:])
    np.testing.assert_array_equal(shifted[0, 0, 3], np.zeros(4))


def test_augment_is_deterministic_and_in_range():
    images = make_rng(1).uniform(0, 1, size=(6, 3, 8, 8)).astype(np.float32)
    a = augment(images, make_rng(7, 0))
    b = augment(images, make_rng(7, 0))
    np.testing.assert_array_equal(a, b)
    assert a.shape == images.shape
    assert a.min() >= 0.0 and a.max() <= 1.0


# ---------------- Batching ----------------


def test_train_batches_drop_the_short_tail():
    sizes = [len(y) for _, y in batch_iter(_tiny(10), 4, shuffle=True, rng=make_rng(0))]
    assert sizes == [4, 4]


def test_eval_batches_keep_the_tail():
    sizes = [len(y) for _, y in batch_iter(_tiny(10), 4, False, make_rng(0), mode="eval")]
    assert sizes == [4, 4, 2]


def test_unshuffled_order_is_dataset_order():
    ds = _tiny(6)
    labels = np.concatenate([y for _, y in batch_iter(ds, 3, shuffle=False, rng=make_rng(0))])
    np.testing.assert_array_equal(labels, ds.labels)


def test_shuffled_epoch_is_a_permutation():
    ds = _tiny(12)
    images = np.concatenate([x for x, _ in batch_iter(ds, 4, shuffle=True, rng=make_rng(3))])
    assert sorted(images[:, 0, 0, 0].tolist()) == sorted(ds.images[:, 0, 0, 0].tolist())


def test_batch_size_must_be_positive():
    with pytest.raises(ContractError):
        list(batch_iter(_tiny(), 0, shuffle=False, rng=make_rng(0)))


# ---------------- Synthetic ----------------


def test_synthetic_sets_are_quantized_images():
    cfg = SyntheticConfig(n_train=40, n_test=10, num_classes=4, image_shape=(1, 8, 8))
    train, test = make_synthetic(cfg)
    assert train.images.shape == (40, 1, 8, 8)
    assert len(test) == 10
    np.testing.assert_allclose(train.images * 255, np.round(train.images * 255), atol=1e-3)


def test_synthetic_idx_round_trips_through_the_loader(tmp_path):
    cfg = SyntheticConfig(n_train=20, n_test=5, image_shape=(1, 8, 8))
    write_synthetic_idx(tmp_path, cfg, gz=True)
    train, test = load_mnist_dir(tmp_path)
    expected, _ = make_synthetic(cfg)
    np.testing.assert_array_equal(train.labels, expected.labels)
    np.testing.assert_allclose(train.images, expected.images, atol=1e-6)
    assert len(test) == 5
