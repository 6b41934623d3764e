"""Datasets: CIFAR-10 binary batches, MNIST IDX files and synthetic blobs,
plus channel normalization and the mirror/translate augmentation."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Optional, Tuple

import numpy as np

from .errors import DataError, FormatError

CIFAR_RECORD = 3073
CIFAR_RECORDS_PER_BATCH = 10000
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILE = "test_batch.bin"


@dataclass
class Dataset:
    images: np.ndarray          # (M, C, H, W) float32
    labels: np.ndarray          # (M,) int64
    split: str = "train"
    class_count: int = 10
    channel_mean: Optional[np.ndarray] = None   # set once normalized
    channel_std: Optional[np.ndarray] = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.shape[0] != self.labels.shape[0]:
            raise DataError(f"{self.images.shape[0]} images but {self.labels.shape[0]} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise DataError(f"labels must lie in [0, {self.class_count})")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def normalized(self) -> bool:
        return self.channel_mean is not None

    def subset(self, count: int) -> "Dataset":
        if count <= 0 or count >= len(self):
            return self
        return replace(self, images=self.images[:count], labels=self.labels[:count])


# -- CIFAR-10 -------------------------------------------------------------------
def _read_cifar_batch(path: Path) -> Tuple[np.ndarray, np.ndarray]:
    raw = path.read_bytes()
    expected = CIFAR_RECORD * CIFAR_RECORDS_PER_BATCH
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes ({CIFAR_RECORDS_PER_BATCH} records of "
                          f"{CIFAR_RECORD}), found {len(raw)}")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(CIFAR_RECORDS_PER_BATCH, CIFAR_RECORD)
    return rec[:, 1:].reshape(-1, 3, 32, 32), rec[:, 0].astype(np.int64)


def write_cifar10_batch(path, images_u8: np.ndarray, labels) -> None:
    """Encode uint8 images (M, 3, 32, 32) and labels in the binary batch layout."""
    images_u8 = np.asarray(images_u8, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    rec = np.empty((images_u8.shape[0], CIFAR_RECORD), dtype=np.uint8)
    rec[:, 0] = labels
    rec[:, 1:] = images_u8.reshape(images_u8.shape[0], -1)
    Path(path).write_bytes(rec.tobytes())


def load_cifar10(directory) -> Tuple[Dataset, Dataset]:
    """Read the five training batches and the test batch; pixels in [0, 1]."""
    directory = Path(directory)
    parts = [_read_cifar_batch(directory / name) for name in CIFAR_TRAIN_FILES]
    train_x = np.concatenate([p[0] for p in parts])
    train_y = np.concatenate([p[1] for p in parts])
    test_x, test_y = _read_cifar_batch(directory / CIFAR_TEST_FILE)
    scale = np.float32(1.0 / 255.0)
    return (Dataset(train_x.astype(np.float32) * scale, train_y, "train", 10),
            Dataset(test_x.astype(np.float32) * scale, test_y, "test", 10))


# -- MNIST ----------------------------------------------------------------------
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _open_idx(directory: Path, stem: str) -> bytes:
    for name in (stem, stem + ".gz"):
        path = directory / name
        if path.exists():
            data = path.read_bytes()
            return gzip.decompress(data) if name.endswith(".gz") else data
    raise FileNotFoundError(f"{directory}: neither {stem} nor {stem}.gz exists")


def read_idx_images(data: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(data) < 16:
        raise FormatError(f"{source}: IDX image header truncated")
    magic, count, rows, cols = struct.unpack(">IIII", data[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"{source}: bad IDX image magic 0x{magic:08x}")
    expected = 16 + count * rows * cols
    if len(data) != expected:
        raise FormatError(f"{source}: expected {expected} bytes, found {len(data)}")
    return np.frombuffer(data, dtype=np.uint8, offset=16).reshape(count, 1, rows, cols)


def read_idx_labels(data: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(data) < 8:
        raise FormatError(f"{source}: IDX label header truncated")
    magic, count = struct.unpack(">II", data[:8])
    if magic != IDX_LABELS_MAGIC:
        raise FormatError(f"{source}: bad IDX label magic 0x{magic:08x}")
    if len(data) != 8 + count:
        raise FormatError(f"{source}: expected {8 + count} bytes, found {len(data)}")
    return np.frombuffer(data, dtype=np.uint8, offset=8).astype(np.int64)


def write_idx(path, array: np.ndarray) -> None:
    """Write uint8 images (M, 1, H, W) or labels (M,) as an IDX file."""
    array = np.asarray(array, dtype=np.uint8)
    if array.ndim == 1:
        header = struct.pack(">II", IDX_LABELS_MAGIC, array.shape[0])
    else:
        m, _, h, w = array.shape
        header = struct.pack(">IIII", IDX_IMAGES_MAGIC, m, h, w)
    Path(path).write_bytes(header + array.tobytes())


def load_mnist(directory) -> Tuple[Dataset, Dataset]:
    directory = Path(directory)
    out = []
    for split, prefix in (("train", "train"), ("test", "t10k")):
        images = read_idx_images(_open_idx(directory, f"{prefix}-images-idx3-ubyte"), f"{prefix} images")
        labels = read_idx_labels(_open_idx(directory, f"{prefix}-labels-idx1-ubyte"), f"{prefix} labels")
        if images.shape[0] != labels.shape[0]:
            raise FormatError(f"{directory}: {images.shape[0]} {split} images but {labels.shape[0]} labels")
        out.append(Dataset(images.astype(np.float32) * np.float32(1.0 / 255.0), labels, split, 10))
    return out[0], out[1]


# -- synthetic --------------------------------------------------------------------
def blob_scales(classes: int) -> np.ndarray:
    """Gaussian widths per class, geometrically spaced from 1 to 6 pixels."""
    return np.geomspace(1.0, 6.0, classes)


def synthetic_blobs(n: int, classes: int = 10, seed: int = 0, size: int = 32, noise: float = 0.03) -> Dataset:
    """Images of one coloured Gaussian blob whose width encodes the class.

    Position, colour and noise vary per image; only the scale is
    class-dependent.  Classes are balanced (counts differ by at most one).
    """
    if n < classes:
        raise DataError(f"need n >= classes, got n={n}, classes={classes}")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % classes)
    scales = blob_scales(classes)
    lo, hi = size * 0.3, size * 0.7
    centers = rng.uniform(lo, hi, size=(n, 2))
    colours = rng.uniform(0.3, 1.0, size=(n, 3))
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dist2 = (yy[None] - centers[:, 0, None, None]) ** 2 + (xx[None] - centers[:, 1, None, None]) ** 2
    blob = np.exp(-dist2 / (2 * scales[labels][:, None, None] ** 2))
    images = colours[:, :, None, None] * blob[:, None]
    images += noise * rng.standard_normal(images.shape)
    np.clip(images, 0.0, 1.0, out=images)
    return Dataset(images.astype(np.float32), labels, "train", classes)


# -- preprocessing ------------------------------------------------------------------
def channel_stats(ds: Dataset) -> Tuple[np.ndarray, np.ndarray]:
    x = ds.images.astype(np.float64)
    return x.mean(axis=(0, 2, 3)), x.std(axis=(0, 2, 3))


def normalize(ds: Dataset, mean=None, std=None) -> Dataset:
    """Per-channel ``(x - mean) / std``.

    Without explicit statistics they are computed from ``ds`` itself, which
    must then be a training split; pass the training statistics when
    normalizing a test split.
    """
    if mean is None or std is None:
        if ds.split != "train":
            raise DataError("normalization statistics must come from the training split")
        mean, std = channel_stats(ds)
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if np.any(std <= 0):
        raise DataError(f"channel std must be positive, got {std}")
    x = (ds.images - mean[None, :, None, None].astype(np.float32)) / std[None, :, None, None].astype(np.float32)
    return replace(ds, images=x.astype(np.float32), channel_mean=mean, channel_std=std)


def sample_augmentation(n: int, rng: np.random.Generator, pad: int = 4):
    """Per-image horizontal flip flags and crop offsets in ``[0, 2*pad]``."""
    flips = rng.random(n) < 0.5
    offsets = rng.integers(0, 2 * pad + 1, size=(n, 2))
    return flips, offsets


def augment(batch: np.ndarray, rng: Optional[np.random.Generator] = None, enabled: bool = True,
            pad: int = 4) -> np.ndarray:
    """Mirror with probability 0.5, then zero-pad by ``pad`` and crop back
    to the original size at a uniformly random offset."""
    if not enabled:
        return batch
    rng = np.random.default_rng() if rng is None else rng
    n, _, h, w = batch.shape
    flips, offsets = sample_augmentation(n, rng, pad)
    padded = np.pad(batch, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.empty_like(batch)
    for i in range(n):
        dy, dx = offsets[i]
        img = padded[i, :, dy:dy + h, dx:dx + w]
        out[i] = img[:, :, ::-1] if flips[i] else img
    return out


def iterate_minibatches(ds: Dataset, batch_size: int, order: np.ndarray) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield ds.images[idx], ds.labels[idx]
