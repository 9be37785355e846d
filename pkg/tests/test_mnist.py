import gzip
import struct

import numpy as np
import pytest

from onnxflow import mnist
from onnxflow.errors import DatasetError


def _idx_images(images):
    n, r, c = images.shape
    return struct.pack(">IIII", 0x803, n, r, c) + images.astype(np.uint8).tobytes()


def _idx_labels(labels):
    return struct.pack(">II", 0x801, len(labels)) + np.asarray(labels, np.uint8).tobytes()


def test_parse_small_idx_roundtrip():
    imgs = np.arange(2 * 3 * 4, dtype=np.uint8).reshape(2, 3, 4)
    out = mnist.parse_idx_images(_idx_images(imgs))
    assert out.shape == (2, 3, 4)
    assert np.array_equal(out, imgs)
    assert list(mnist.parse_idx_labels(_idx_labels([7, 1, 0]))) == [7, 1, 0]


def test_bad_magic_rejected():
    data = bytearray(_idx_images(np.zeros((1, 2, 2))))
    data[3] = 0x01
    with pytest.raises(DatasetError, match="magic"):
        mnist.parse_idx_images(bytes(data))
    with pytest.raises(DatasetError, match="magic"):
        mnist.parse_idx_labels(_idx_images(np.zeros((1, 2, 2)))[:8] + b"\0")


def test_truncated_payload_rejected():
    with pytest.raises(DatasetError):
        mnist.parse_idx_images(_idx_images(np.zeros((2, 2, 2)))[:-1])
    with pytest.raises(DatasetError):
        mnist.parse_idx_labels(b"\0\0")


def test_load_split_plain_and_gzip(tmp_path):
    imgs = np.random.default_rng(0).integers(0, 256, size=(5, 28, 28), dtype=np.uint8)
    (tmp_path / "t10k-images-idx3-ubyte").write_bytes(_idx_images(imgs))
    (tmp_path / "t10k-labels-idx1-ubyte.gz").write_bytes(gzip.compress(_idx_labels(range(5))))
    split = mnist.load_split(tmp_path, "test")
    assert len(split) == 5
    x = split.normalized([0, 2])
    assert x.shape == (2, 1, 28, 28) and x.dtype == np.float32
    assert np.allclose(x[1, 0], imgs[2] / 255.0)


def test_missing_and_mismatched_files(tmp_path):
    with pytest.raises(DatasetError, match="missing"):
        mnist.load_split(tmp_path, "train")
    (tmp_path / "t10k-images-idx3-ubyte").write_bytes(_idx_images(np.zeros((3, 2, 2))))
    (tmp_path / "t10k-labels-idx1-ubyte").write_bytes(_idx_labels([1, 2]))
    with pytest.raises(DatasetError, match="3 images but 2 labels"):
        mnist.load_split(tmp_path, "test")


def test_shipped_dataset_counts(mnist_train, mnist_test):
    assert mnist_train.images.shape == (60000, 28, 28)
    assert mnist_test.images.shape == (10000, 28, 28)
    assert set(np.unique(mnist_test.labels)) == set(range(10))
