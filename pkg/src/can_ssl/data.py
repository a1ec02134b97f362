"""Datasets: CIFAR-10 binary records and a seeded procedural image generator."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng as rngmod

CIFAR_RECORD = 3073
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILES = ("test_batch.bin",)


@dataclass
class ImageDataset:
    images: np.ndarray  # (N, H, W, 3) uint8
    labels: np.ndarray  # (N,) int64

    def __len__(self):
        return len(self.images)

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1

    @property
    def image_size(self) -> tuple[int, int]:
        return self.images.shape[1], self.images.shape[2]

    def subset(self, idx) -> "ImageDataset":
        return ImageDataset(self.images[idx], self.labels[idx])


def read_cifar10_bin(path) -> ImageDataset:
    """Parse one CIFAR-10 binary file: 1 label byte + 3072 channel-planar bytes per record."""
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % CIFAR_RECORD:
        raise ValueError(f"{path}: size {raw.size} is not a multiple of {CIFAR_RECORD}")
    rec = raw.reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    images = rec[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return ImageDataset(np.ascontiguousarray(images), labels)


def write_cifar10_bin(path, data: ImageDataset) -> None:
    if data.images.shape[1:] != (32, 32, 3):
        raise ValueError("CIFAR-10 records hold 32x32x3 images")
    planar = data.images.transpose(0, 3, 1, 2).reshape(len(data), -1)
    rec = np.concatenate([data.labels.astype(np.uint8)[:, None], planar.astype(np.uint8)], axis=1)
    rec.tofile(path)


def load_cifar10(data_dir, split: str = "train") -> ImageDataset:
    files = CIFAR_TRAIN_FILES if split == "train" else CIFAR_TEST_FILES
    root = Path(data_dir)
    if (root / "cifar-10-batches-bin").is_dir():
        root = root / "cifar-10-batches-bin"
    parts = []
    for name in files:
        path = root / name
        if not path.is_file():
            raise FileNotFoundError(f"CIFAR-10 file not found: {path}")
        parts.append(read_cifar10_bin(path))
    return ImageDataset(np.concatenate([p.images for p in parts]),
                        np.concatenate([p.labels for p in parts]))


def cifar10_available(data_dir) -> bool:
    if not data_dir:
        return False
    root = Path(data_dir)
    if (root / "cifar-10-batches-bin").is_dir():
        root = root / "cifar-10-batches-bin"
    return all((root / f).is_file() for f in CIFAR_TRAIN_FILES + CIFAR_TEST_FILES)


# --- synthetic shapes -------------------------------------------------------

SHAPES = ("rectangle", "disk", "hstripes", "vstripes", "checker", "diagonal", "ring", "cross")


def _render(kind, size, rng):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) / size
    fg = rng.uniform(0.0, 1.0, 3).astype(np.float32)
    bg = rng.uniform(0.0, 1.0, 3).astype(np.float32)
    # keep foreground and background distinguishable after jitter
    while np.abs(fg - bg).sum() < 0.6:
        bg = rng.uniform(0.0, 1.0, 3).astype(np.float32)
    cy, cx = rng.uniform(0.3, 0.7, 2)
    r = rng.uniform(0.18, 0.32)
    period = rng.uniform(0.18, 0.3)
    phase = rng.uniform(0, 1)
    if kind == "rectangle":
        hh, ww = rng.uniform(0.2, 0.4, 2)
        m = (np.abs(yy - cy) < hh) & (np.abs(xx - cx) < ww)
    elif kind == "disk":
        m = (yy - cy) ** 2 + (xx - cx) ** 2 < r ** 2
    elif kind == "hstripes":
        m = ((yy / period + phase) % 1.0) < 0.5
    elif kind == "vstripes":
        m = ((xx / period + phase) % 1.0) < 0.5
    elif kind == "checker":
        m = (((yy / period + phase) // 1 + (xx / period + phase) // 1) % 2) == 0
    elif kind == "diagonal":
        m = (((xx + yy) / (1.4 * period) + phase) % 1.0) < 0.5
    elif kind == "ring":
        d = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        m = np.abs(d - r) < 0.07
    else:  # cross
        w = rng.uniform(0.06, 0.12)
        m = (np.abs(yy - cy) < w) | (np.abs(xx - cx) < w)
    img = np.where(m[..., None], fg, bg)
    shade = 1.0 + rng.uniform(-0.15, 0.15) * (xx - 0.5)[..., None]
    img = img * shade + rng.normal(0, 0.02, img.shape)
    return np.clip(img, 0.0, 1.0)


def synthetic_dataset(n: int, num_classes: int = 4, image_size: int = 32, seed: int = 0) -> ImageDataset:
    """Seeded images of coloured shapes and stripe patterns; the class is the pattern family."""
    if not 2 <= num_classes <= len(SHAPES):
        raise ValueError(f"num_classes must be in [2, {len(SHAPES)}]")
    labels = np.arange(n) % num_classes
    images = np.empty((n, image_size, image_size, 3), np.uint8)
    for i in range(n):
        g = rngmod.stream(seed, i, 0, 0, rngmod.PROBE)
        images[i] = np.round(_render(SHAPES[labels[i]], image_size, g) * 255).astype(np.uint8)
    perm = rngmod.stream(seed, 0, 0, 0, rngmod.SHUFFLE).permutation(n)
    return ImageDataset(images[perm], labels[perm].astype(np.int64))


def env_cifar_dir() -> str | None:
    return os.environ.get("CAN_CIFAR10_DIR") or None
