"""MNIST IDX reader.

IDX layout (big endian): u32 magic, u32 count, then u32 rows and u32 cols
for image files, then one unsigned byte per pixel/label. Files may be stored
plain or gzip-compressed (``<name>.gz``).
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DatasetError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _read_bytes(path: Path) -> bytes:
    if path.exists():
        data = path.read_bytes()
    else:
        gz = path.with_name(path.name + ".gz")
        if not gz.exists():
            raise DatasetError(f"missing IDX file {path} (or {gz.name})")
        data = gz.read_bytes()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


def parse_idx_images(data: bytes) -> np.ndarray:
    if len(data) < 16:
        raise DatasetError("truncated IDX image header")
    magic, count, rows, cols = struct.unpack(">IIII", data[:16])
    if magic != IMAGES_MAGIC:
        raise DatasetError(f"bad image magic 0x{magic:08x}")
    if len(data) != 16 + count * rows * cols:
        raise DatasetError("IDX image payload length does not match header")
    return np.frombuffer(data, dtype=np.uint8, offset=16).reshape(count, rows, cols)


def parse_idx_labels(data: bytes) -> np.ndarray:
    if len(data) < 8:
        raise DatasetError("truncated IDX label header")
    magic, count = struct.unpack(">II", data[:8])
    if magic != LABELS_MAGIC:
        raise DatasetError(f"bad label magic 0x{magic:08x}")
    if len(data) != 8 + count:
        raise DatasetError("IDX label payload length does not match header")
    return np.frombuffer(data, dtype=np.uint8, offset=8)


@dataclass(frozen=True)
class MnistSplit:
    images: np.ndarray  # (N, 28, 28) uint8
    labels: np.ndarray  # (N,) uint8

    def __len__(self) -> int:
        return len(self.labels)

    def normalized(self, index=None) -> np.ndarray:
        """Pixels scaled to [0, 1] as float32, shaped (N, 1, H, W)."""
        imgs = self.images if index is None else self.images[index]
        return (imgs.astype(np.float32) / np.float32(255.0))[:, None, :, :]


def load_split(root: str | Path, split: str = "test") -> MnistSplit:
    if split not in FILES:
        raise DatasetError(f"unknown split {split!r}")
    root = Path(root)
    img_name, lbl_name = FILES[split]
    images = parse_idx_images(_read_bytes(root / img_name))
    labels = parse_idx_labels(_read_bytes(root / lbl_name))
    if len(images) != len(labels):
        raise DatasetError(f"{split}: {len(images)} images but {len(labels)} labels")
    return MnistSplit(images, labels)


def default_root() -> Path:
    """``data/mnist`` of a source checkout."""
    return Path(__file__).resolve().parents[2] / "data" / "mnist"
