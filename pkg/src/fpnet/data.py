"""CIFAR-10 binary-format loading, augmentation and deterministic batching.

Record layout: 1 label byte followed by 3072 pixel bytes (1024 R, 1024 G,
1024 B, each row-major 32x32). Training files are ``data_batch_1.bin`` ..
``data_batch_5.bin``; the test file is ``test_batch.bin``.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import rng

RECORD_BYTES = 1 + 3 * 32 * 32
TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
TEST_FILES = ("test_batch.bin",)
RECORDS_PER_FILE = 10000
NUM_CLASSES = 10
DATA_DIR_ENV = "FPNET_DATA_DIR"

CIFAR10_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR10_STD = (0.2470, 0.2435, 0.2616)


class DataFormatError(ValueError):
    pass


@dataclass
class Dataset:
    """Images kept as raw bytes (count, 3, 32, 32); use :attr:`images` for [0, 1] reals."""

    raw: np.ndarray
    labels: np.ndarray
    split: str

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def images(self) -> np.ndarray:
        return self.raw.astype(np.float32) / 255.0

    def take(self, idx) -> "Dataset":
        return Dataset(self.raw[idx], self.labels[idx], self.split)


@dataclass(frozen=True)
class AugmentPolicy:
    pad: int = 4
    crop: int = 32
    hflip_prob: float = 0.5
    normalize_mean: tuple = CIFAR10_MEAN
    normalize_std: tuple = CIFAR10_STD
    seed: int = 0


def default_data_dir() -> Path | None:
    value = os.environ.get(DATA_DIR_ENV)
    return Path(value) if value else None


def _resolve_dir(path) -> Path:
    path = Path(path)
    nested = path / "cifar-10-batches-bin"
    if not (path / TEST_FILES[0]).exists() and nested.is_dir():
        return nested
    return path


def read_cifar_file(path) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing CIFAR-10 file: {path}")
    buf = np.fromfile(path, dtype=np.uint8)
    if buf.size == 0 or buf.size % RECORD_BYTES:
        raise DataFormatError(f"{path}: size {buf.size} is not a multiple of the {RECORD_BYTES}-byte record")
    records = buf.reshape(-1, RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    if labels.max() >= NUM_CLASSES:
        raise DataFormatError(f"{path}: label byte {labels.max()} out of range")
    return records[:, 1:].reshape(-1, 3, 32, 32), labels


def load_cifar10(path, split: str = "train", strict: bool = True) -> Dataset:
    """Decode a split from the binary files in ``path``, preserving file order.

    ``strict`` additionally requires the standard 10000 records per file.
    """
    if split not in ("train", "test"):
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    root = _resolve_dir(path)
    images, labels = [], []
    for name in TRAIN_FILES if split == "train" else TEST_FILES:
        x, y = read_cifar_file(root / name)
        if strict and len(y) != RECORDS_PER_FILE:
            raise DataFormatError(f"{root / name}: expected {RECORDS_PER_FILE} records, found {len(y)}")
        images.append(x)
        labels.append(y)
    return Dataset(np.concatenate(images), np.concatenate(labels), split)


def write_cifar_file(path, raw: np.ndarray, labels) -> None:
    """Inverse of :func:`read_cifar_file` (used for synthetic data and round trips)."""
    raw = np.asarray(raw, dtype=np.uint8).reshape(len(labels), -1)
    records = np.empty((len(labels), RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = np.asarray(labels, dtype=np.uint8)
    records[:, 1:] = raw
    records.tofile(path)


def subset_per_class(dataset: Dataset, per_class: int) -> Dataset:
    """First ``per_class`` items of each label, in file order."""
    keep = np.zeros(len(dataset), dtype=bool)
    for c in range(NUM_CLASSES):
        keep[np.flatnonzero(dataset.labels == c)[:per_class]] = True
    return dataset.take(np.flatnonzero(keep))


def batches(n_items: int, batch_size: int, shuffle_seed=None, epoch: int = 0):
    """Index arrays for one epoch; the order depends only on (shuffle_seed, epoch).

    ``shuffle_seed=None`` keeps file order. The last partial batch is kept.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if isinstance(n_items, Dataset):
        n_items = len(n_items)
    if shuffle_seed is None:
        order = np.arange(n_items)
    else:
        order = rng((shuffle_seed, epoch)).permutation(n_items)
    return [order[i:i + batch_size] for i in range(0, n_items, batch_size)]


def hflip(images: np.ndarray, flags) -> np.ndarray:
    out = images.copy()
    flags = np.asarray(flags, dtype=bool)
    out[flags] = images[flags][..., ::-1]
    return out


def pad_crop(images: np.ndarray, offsets, pad: int, crop: int) -> np.ndarray:
    """Zero-pad by ``pad`` then cut a ``crop`` square at per-image (row, col) offsets."""
    n = len(images)
    padded = np.pad(images, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(padded, (crop, crop), axis=(2, 3))
    offsets = np.asarray(offsets)
    return win[np.arange(n), :, offsets[:, 0], offsets[:, 1]]


def normalize(images: np.ndarray, mean, std) -> np.ndarray:
    mean = np.asarray(mean, dtype=np.float32).reshape(1, 3, 1, 1)
    std = np.asarray(std, dtype=np.float32).reshape(1, 3, 1, 1)
    return ((images - mean) / std).astype(np.float32)


def draw_augmentation(policy: AugmentPolicy, n: int, epoch: int, batch_index: int):
    """Crop offsets and flip flags for one batch, a pure function of its arguments."""
    g = rng((policy.seed, epoch, batch_index))
    offsets = g.integers(0, 2 * policy.pad + 1, size=(n, 2))
    flips = g.random(n) < policy.hflip_prob
    return offsets, flips


def augment_batch(raw: np.ndarray, policy: AugmentPolicy, epoch: int, batch_index: int) -> np.ndarray:
    """Training-time transform: pad+crop, random horizontal flip, per-channel normalization."""
    images = raw.astype(np.float32) / 255.0 if raw.dtype == np.uint8 else raw
    offsets, flips = draw_augmentation(policy, len(images), epoch, batch_index)
    images = hflip(pad_crop(images, offsets, policy.pad, policy.crop), flips)
    return normalize(images, policy.normalize_mean, policy.normalize_std)


def prepare_eval(raw: np.ndarray, policy: AugmentPolicy) -> np.ndarray:
    images = raw.astype(np.float32) / 255.0 if raw.dtype == np.uint8 else raw
    return normalize(images, policy.normalize_mean, policy.normalize_std)


def channel_stats(dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and std of the [0, 1] pixels, accumulated in float64."""
    x = dataset.raw.astype(np.float64) / 255.0
    return x.mean(axis=(0, 2, 3)), x.std(axis=(0, 2, 3))


def synthetic_cifar10(root, n_train: int = 50000, n_test: int = 10000, seed: int = 0,
                      noise: float = 48.0) -> Path:
    """Write a learnable stand-in dataset in the CIFAR-10 binary layout.

    Each class is a fixed random colour/texture template plus per-image noise and
    a random shift, so small networks can fit it. Train items go round-robin into
    five files, mirroring the real file set.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    g = rng(seed)
    templates = g.uniform(40, 215, size=(NUM_CLASSES, 3, 8, 8)).repeat(4, axis=2).repeat(4, axis=3)

    def make(n, stream):
        gg = rng((seed, stream))
        labels = np.arange(n) % NUM_CLASSES
        gg.shuffle(labels)
        base = templates[labels]
        shifts = gg.integers(-3, 4, size=(n, 2))
        imgs = np.stack([np.roll(b, tuple(s), axis=(1, 2)) for b, s in zip(base, shifts)])
        imgs = imgs + gg.normal(0, noise, size=imgs.shape)
        return np.clip(imgs, 0, 255).astype(np.uint8), labels

    x, y = make(n_train, 1)
    for i, name in enumerate(TRAIN_FILES):
        write_cifar_file(root / name, x[i::5], y[i::5])
    x, y = make(n_test, 2)
    write_cifar_file(root / TEST_FILES[0], x, y)
    return root
