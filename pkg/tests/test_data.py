import os

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hqgan.data import (CifarFormatError, Dataset, DatasetSpec, batch_iter, cap_samples, denormalize, filter_class,
                        load_cifar10, normalize, read_cifar_batch, resolve, synthetic_shapes_dataset)
from conftest import write_cifar_file


def test_crafted_records_decode_exactly(tmp_path):
    rng = np.random.default_rng(0)
    path = tmp_path / "two.bin"
    labels = np.r_[7, 3, rng.integers(0, 10, 9998)]
    records = write_cifar_file(path, labels, rng)
    ds = read_cifar_batch(path)
    assert ds.labels[0] == 7 and ds.labels[1] == 3
    # channel-planar: bytes 1..1024 are red, row-major
    assert np.array_equal(ds.images[0, 0].ravel(), records[0, 1:1025])
    assert np.array_equal(ds.images[0, 2, 31, 31], records[0, 3072])


def test_truncated_file_names_byte_counts(tmp_path):
    (tmp_path / "bad.bin").write_bytes(b"\0" * 3073 * 2)
    with pytest.raises(CifarFormatError, match="30730000.*6146"):
        read_cifar_batch(tmp_path / "bad.bin")


def test_full_load_counts(fake_cifar):
    train, test = load_cifar10(fake_cifar)
    assert len(train) == 50_000 and len(test) == 10_000
    assert train.images.shape == (50_000, 3, 32, 32) and train.images.dtype == np.uint8


def test_filter_class_counts_and_order(fake_cifar):
    train, test = load_cifar10(fake_cifar)
    birds = filter_class(train, 2)
    assert len(birds) == 5000 and birds.counts == {2: 5000}
    assert len(filter_class(test, [2])) == 1000
    idx = np.flatnonzero(train.labels == 2)
    assert np.array_equal(birds.images[:5], train.images[idx[:5]])
    multi = filter_class(train, [1, 2, 5])
    assert multi.counts == {1: 5000, 2: 5000, 5: 5000}


def test_missing_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_cifar10(tmp_path)


def test_filter_class_empty_warns_and_bad_label_errors():
    ds = Dataset(np.zeros((3, 3, 8, 8), np.uint8), np.array([0, 0, 1]))
    with pytest.warns(RuntimeWarning):
        assert len(filter_class(ds, 4)) == 0
    with pytest.raises(ValueError):
        filter_class(ds, 10)


def test_cap_samples():
    ds = Dataset(np.zeros((10, 3, 8, 8), np.uint8), np.zeros(10, int))
    assert len(cap_samples(ds, 4)) == 4
    with pytest.raises(ValueError):
        cap_samples(ds, 11)


@pytest.mark.skipif(not os.environ.get("HQGAN_DATA_DIR"), reason="real CIFAR-10 not available (set HQGAN_DATA_DIR)")
def test_real_cifar_bird_split():
    train, test = load_cifar10(os.environ["HQGAN_DATA_DIR"])
    assert len(filter_class(train, 2)) == 5000
    assert abs(len(filter_class(test, 2)) - 1000) <= 50


def test_normalize_fixed_points():
    assert normalize(np.array([0, 255], np.uint8)).tolist() == [-1.0, 1.0]
    assert normalize(np.array([127.5])).tolist() == [0.0]


@given(st.lists(st.integers(0, 255), min_size=1, max_size=50))
def test_normalize_roundtrip(values):
    b = np.array(values, np.uint8)
    x = normalize(b)
    assert np.all((x >= -1) & (x <= 1))
    assert np.array_equal(denormalize(x), b)


def test_synthetic_deterministic_and_sized():
    a = synthetic_shapes_dataset(256, 16, ["disc", "square"], seed=3)
    b = synthetic_shapes_dataset(256, 16, ["disc", "square"], seed=3)
    assert len(a) == 512 and a.images.tobytes() == b.images.tobytes()
    assert a.counts == {0: 256, 1: 256}
    c = synthetic_shapes_dataset(256, 16, ["disc", "square"], seed=4)
    assert a.images.tobytes() != c.images.tobytes()


@pytest.mark.parametrize("size", [4, 12, 64])
def test_synthetic_size_validation(size):
    with pytest.raises(ValueError):
        synthetic_shapes_dataset(2, size)


def test_batch_iter_contract():
    images = np.zeros((5000, 3, 1, 1), np.uint8)
    assert sum(1 for _ in batch_iter(images, 8, seed=0)) == 625
    ds = synthetic_shapes_dataset(10, 8, seed=0)
    first = [b.labels.tolist() for b in batch_iter(ds, 4, seed=1, epoch=0)]
    again = [b.labels.tolist() for b in batch_iter(ds, 4, seed=1, epoch=0)]
    assert first == again
    e0 = np.concatenate([b.images for b in batch_iter(ds, 30, seed=1, epoch=0)])
    e1 = np.concatenate([b.images for b in batch_iter(ds, 30, seed=1, epoch=1)])
    assert not np.array_equal(e0, e1)
    for b in batch_iter(ds, 7, seed=2):
        assert b.images.shape[0] == 7 and b.images.min() >= -1 and b.images.max() <= 1
    with pytest.raises(ValueError):
        next(batch_iter(ds, 0, seed=0))


def test_resolve_synthetic_splits_disjoint():
    tr = resolve(DatasetSpec("synthetic", [0], "train", None, 0, 16, 64))
    te = resolve(DatasetSpec("synthetic", [0], "test", None, 0, 16, 64))
    assert len(tr) == len(te) == 64 and set(tr.labels) == {0}
    assert tr.images.tobytes() != te.images.tobytes()
    assert len(resolve(DatasetSpec("synthetic", [1, 2], "train", 10, 0, 8, 20))) == 10
    with pytest.raises(ValueError):
        DatasetSpec("imagenet")
    with pytest.raises(FileNotFoundError):
        resolve(DatasetSpec("cifar10"))


def test_resolve_cifar(fake_cifar):
    ds = resolve(DatasetSpec("cifar10", [2], "train", 2500), fake_cifar)
    assert len(ds) == 2500 and set(ds.labels) == {2}
