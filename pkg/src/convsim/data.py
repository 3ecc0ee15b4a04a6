"""CIFAR-10 binary ingestion, a synthetic stand-in, and minibatching."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CIFAR10_ENV = "CIFAR10_DIR"
TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
TEST_FILES = ("test_batch.bin",)
RECORD_BYTES = 1 + 3 * 32 * 32
IMAGE_SHAPE = (3, 32, 32)


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # count x 3 x 32 x 32, values in [0, 1]
    labels: np.ndarray
    classes: int = 10

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[0] != self.labels.shape[0]:
            raise DataError(f"images {self.images.shape} and labels {self.labels.shape} do not match")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise DataError(f"labels must lie in [0, {self.classes})")
        self.images.flags.writeable = False
        self.labels.flags.writeable = False

    @property
    def count(self) -> int:
        return int(self.labels.shape[0])

    def take(self, index) -> "Dataset":
        return Dataset(self.images[index], self.labels[index], self.classes)

    def subset(self, count: int, seed: int = 0) -> "Dataset":
        """Fixed-seed random subset of ``count`` samples (the whole set if it is smaller)."""
        if count >= self.count:
            return self
        return self.take(np.sort(np.random.default_rng(seed).permutation(self.count)[:count]))


def _records(raw: bytes, name: str) -> np.ndarray:
    n, rest = divmod(len(raw), RECORD_BYTES)
    if rest:
        raise DataError(
            f"{name}: truncated record at byte offset {n * RECORD_BYTES} "
            f"({rest} of {RECORD_BYTES} bytes present)"
        )
    if n == 0:
        raise DataError(f"{name}: no records")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(n, RECORD_BYTES)
    labels = rec[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        i = int(bad[0])
        raise DataError(f"{name}: label byte {labels[i]} > 9 at byte offset {i * RECORD_BYTES}")
    return rec


def _decode(rec: np.ndarray) -> Dataset:
    images = rec[:, 1:].reshape(len(rec), *IMAGE_SHAPE).astype(np.float64)
    images /= 255.0
    return Dataset(images, rec[:, 0].astype(np.int64))


def parse_cifar_batch(raw: bytes, name: str = "<bytes>") -> Dataset:
    """Decode concatenated records: one label byte, then 1024 R, 1024 G, 1024 B bytes."""
    return _decode(_records(raw, name))


def _read_files(root: Path, names) -> Dataset:
    parts = []
    for name in names:
        path = root / name
        if not path.is_file():
            raise FileNotFoundError(
                f"CIFAR-10 file {path} not found; expected {', '.join(TRAIN_FILES + TEST_FILES)} "
                f"in the directory given by --data-dir or ${CIFAR10_ENV}"
            )
        parts.append(_records(path.read_bytes(), str(path)))
    return _decode(np.concatenate(parts))


def cifar10_dir(path=None) -> Path:
    path = path or os.environ.get(CIFAR10_ENV)
    if not path:
        raise FileNotFoundError(
            f"no CIFAR-10 directory given; pass --data-dir or set ${CIFAR10_ENV} to a folder "
            f"containing {', '.join(TRAIN_FILES + TEST_FILES)}"
        )
    return Path(path)


def load_cifar10(dir_path=None) -> tuple[Dataset, Dataset]:
    """Return ``(train, test)`` from the binary batch files."""
    root = cifar10_dir(dir_path)
    return _read_files(root, TRAIN_FILES), _read_files(root, TEST_FILES)


def synthetic_dataset(seed: int, count: int, classes: int = 10) -> Dataset:
    """Class-conditioned Gaussian blobs on a noisy background.

    Each class owns a blob position, width and colour drawn from ``seed``;
    samples jitter the blob and add pixel noise. Labels cycle through the
    classes before shuffling, so class counts differ by at most one.
    """
    if count < classes:
        raise DataError(f"count ({count}) must be >= classes ({classes})")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(8, 24, size=(classes, 2))
    widths = rng.uniform(3, 6, size=classes)
    colours = rng.uniform(0, 1, size=(classes, 3))
    labels = rng.permutation(np.arange(count) % classes)

    yy, xx = np.mgrid[0:32, 0:32].astype(np.float64)
    c = centers[labels] + rng.normal(0, 1.5, size=(count, 2))
    d2 = (yy[None] - c[:, 0, None, None]) ** 2 + (xx[None] - c[:, 1, None, None]) ** 2
    blob = np.exp(-d2 / (2 * widths[labels, None, None] ** 2))
    background = 0.5 + 0.1 * rng.normal(size=(count, 3, 1, 1))
    img = background + blob[:, None] * (colours[labels][:, :, None, None] - background)
    img += rng.normal(0, 0.1, size=img.shape)
    return Dataset(np.clip(img, 0.0, 1.0), labels.astype(np.int64), classes)


def batches(ds: Dataset, batch_size: int, seed: int = 0, shuffle: bool = True, epoch: int = 0):
    """Yield ``(images, labels)``; the order depends only on ``(seed, epoch)``. The last batch may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if shuffle:
        order = np.random.default_rng([seed, epoch]).permutation(ds.count)
    else:
        order = np.arange(ds.count)
    for start in range(0, ds.count, batch_size):
        idx = order[start : start + batch_size]
        yield ds.images[idx], ds.labels[idx]
