"""MNIST IDX and synthetic Gaussian-cluster datasets, plus seeded minibatching."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from feded.errors import ConfigError, IngestionError, UsageError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (M, d) float64
    labels: np.ndarray  # (M,) int64
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise IngestionError(f"features must be a non-empty (M, d) matrix, got {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise IngestionError(f"{self.labels.shape[0]} labels for {self.features.shape[0]} samples")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise IngestionError(f"labels outside [0, {self.num_classes})")
        if not np.all(np.isfinite(self.features)):
            raise IngestionError("features contain non-finite values")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes, self.split)


@dataclass(frozen=True)
class Batch:
    features: np.ndarray
    labels: np.ndarray
    indices: np.ndarray


def _read_header(raw: bytes, path, what: str, magic: int, ndim: int) -> tuple[int, ...]:
    need = 4 * (1 + ndim)
    if len(raw) < need:
        raise IngestionError(f"{what} file {path}: truncated header ({len(raw)} bytes)")
    found = struct.unpack(">I", raw[:4])[0]
    if found != magic:
        raise IngestionError(f"{what} file {path}: bad magic number 0x{found:08x}, expected 0x{magic:08x}")
    return struct.unpack(f">{ndim}I", raw[4:need])


def load_mnist_idx(images_path, labels_path, split: str = "train") -> Dataset:
    """Read an IDX image/label pair; pixels are scaled to [0, 1] and flattened."""
    try:
        img_raw = Path(images_path).read_bytes()
        lbl_raw = Path(labels_path).read_bytes()
    except OSError as e:
        raise IngestionError(f"cannot read IDX file: {e}") from e

    count, rows, cols = _read_header(img_raw, images_path, "images", IDX_IMAGES_MAGIC, 3)
    (n_labels,) = _read_header(lbl_raw, labels_path, "labels", IDX_LABELS_MAGIC, 1)
    if count != n_labels:
        raise IngestionError(f"image count {count} does not match label count {n_labels}")
    pixels = count * rows * cols
    body = img_raw[16:]
    if len(body) < pixels:
        raise IngestionError(f"images file {images_path}: truncated pixel data "
                             f"({len(body)} of {pixels} bytes)")
    if len(lbl_raw) - 8 < count:
        raise IngestionError(f"labels file {labels_path}: truncated label data "
                             f"({len(lbl_raw) - 8} of {count} bytes)")
    images = np.frombuffer(body, dtype=np.uint8, count=pixels).reshape(count, rows * cols)
    labels = np.frombuffer(lbl_raw, dtype=np.uint8, count=count, offset=8).astype(np.int64)
    return Dataset(images.astype(np.float64) / 255.0, labels, 10, split)


def write_idx_images(path, images) -> None:
    images = np.asarray(images, dtype=np.uint8)
    count, rows, cols = images.shape
    Path(path).write_bytes(struct.pack(">4I", IDX_IMAGES_MAGIC, count, rows, cols) + images.tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    Path(path).write_bytes(struct.pack(">2I", IDX_LABELS_MAGIC, labels.size) + labels.tobytes())


def gen_synthetic(num_classes: int = 10, dim: int = 32, per_class: int = 200, spread: float = 1.0,
                  seed: int = 0, separation: float = 0.5, test_fraction: float = 0.2
                  ) -> tuple[Dataset, Dataset]:
    """Gaussian clusters around seeded class means, split 80/20 per class.

    Means are ``separation * N(0, I)``; samples add ``spread * N(0, I)`` noise.
    """
    if num_classes < 2 or dim < 2:
        raise ConfigError("synthetic data needs num_classes >= 2 and dim >= 2")
    if per_class < 2 or not spread >= 0 or not separation > 0:
        raise ConfigError("per_class must be >= 2, spread >= 0 and separation > 0")
    if not 0 < test_fraction < 1:
        raise ConfigError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    means = separation * rng.standard_normal((num_classes, dim))
    n_test = min(max(int(round(per_class * test_fraction)), 1), per_class - 1)
    parts = {"train": ([], []), "test": ([], [])}
    for c in range(num_classes):
        x = means[c] + spread * rng.standard_normal((per_class, dim))
        parts["test"][0].append(x[:n_test])
        parts["train"][0].append(x[n_test:])
        parts["test"][1].append(np.full(n_test, c))
        parts["train"][1].append(np.full(per_class - n_test, c))
    out = []
    for split in ("train", "test"):
        xs, ys = parts[split]
        out.append(Dataset(np.concatenate(xs), np.concatenate(ys).astype(np.int64), num_classes, split))
    return out[0], out[1]


def stratified_subset(dataset: Dataset, fraction: float, seed: int = 0) -> Dataset:
    if not 0 < fraction <= 1:
        raise ConfigError(f"subset fraction must lie in (0, 1], got {fraction}")
    if fraction == 1:
        return dataset
    rng = np.random.default_rng(seed)
    keep = []
    for c in range(dataset.num_classes):
        idx = np.flatnonzero(dataset.labels == c)
        if idx.size:
            keep.append(rng.choice(idx, size=max(1, int(round(fraction * idx.size))), replace=False))
    return dataset.subset(np.sort(np.concatenate(keep)))


def batch_iter(dataset: Dataset, indices, batch_size: int, epoch_seed) -> Iterator[Batch]:
    """Shuffle ``indices`` with ``epoch_seed`` and yield batches; the last one may be short."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        raise UsageError("batch_iter needs at least one index")
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    idx = np.random.default_rng(epoch_seed).permutation(idx)
    for start in range(0, idx.size, batch_size):
        chunk = idx[start:start + batch_size]
        yield Batch(dataset.features[chunk], dataset.labels[chunk], chunk)
