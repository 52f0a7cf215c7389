"""Datasets: idx / CIFAR-10 binary readers, synthetic generators, augmentation and batching."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np


class FormatError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError(f"images must be (N, C, H, W), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise ValueError("pixel values must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, idx, split: str | None = None) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.images[idx], self.labels[idx], self.num_classes, split or self.split)

    def split_off(self, fraction: float, seed: int) -> tuple["Dataset", "Dataset"]:
        """Seeded (remaining, held-out) partition with ``fraction`` of examples held out."""
        perm = np.random.default_rng(seed).permutation(len(self))
        k = int(round(fraction * len(self)))
        return self.subset(np.sort(perm[k:]), self.split), self.subset(np.sort(perm[:k]), "val")


# ---------------------------------------------------------------------------
# idx files (MNIST layout, also used for exporting adversarial examples)

_IDX_TYPES = {0x08: np.dtype(">u1"), 0x0D: np.dtype(">f4")}


def _read_idx(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0 or raw[2] not in _IDX_TYPES:
        raise FormatError(f"{path}: bad idx magic {raw[:4].hex()}")
    dtype, ndim = _IDX_TYPES[raw[2]], raw[3]
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated idx header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = header + int(np.prod(dims)) * dtype.itemsize
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for dims {dims}, found {len(raw)}")
    arr = np.frombuffer(raw, dtype=dtype, offset=header).reshape(dims)
    return arr / np.float32(255) if raw[2] == 0x08 else arr.astype(np.float32)


def load_idx(path_images, path_labels, num_classes: int | None = None) -> Dataset:
    """Read an idx image file (3-d ubyte 0x00000803, or float32/4-d variants) and its idx1 label file."""
    images = _read_idx(path_images)
    raw = Path(path_labels).read_bytes()
    if raw[:4] != b"\x00\x00\x08\x01":
        raise FormatError(f"{path_labels}: bad label magic {raw[:4].hex()}")
    (n,) = struct.unpack(">I", raw[4:8])
    if len(raw) != 8 + n:
        raise FormatError(f"{path_labels}: expected {8 + n} bytes, found {len(raw)}")
    labels = np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)
    if images.ndim == 3:
        images = images[:, None]
    if images.ndim != 4:
        raise FormatError(f"{path_images}: unsupported idx rank {images.ndim}")
    if len(images) != len(labels):
        raise FormatError(f"{len(images)} images but {len(labels)} labels")
    if num_classes is None:
        num_classes = max(int(labels.max()) + 1 if n else 2, 2)
    return Dataset(images.astype(np.float32), labels, num_classes)


def write_idx(path_images, path_labels, images: np.ndarray, labels, as_bytes: bool = False) -> None:
    """Write images as idx (ubyte when ``as_bytes``, else exact big-endian float32) plus idx1 labels."""
    images = np.asarray(images)
    if as_bytes:
        payload = np.rint(images * 255).astype(">u1")
        code = 0x08
    else:
        payload = images.astype(">f4")
        code = 0x0D
    if code == 0x08 and payload.ndim == 4 and payload.shape[1] == 1:
        payload = payload[:, 0]
    head = bytes([0, 0, code, payload.ndim]) + struct.pack(f">{payload.ndim}I", *payload.shape)
    Path(path_images).write_bytes(head + payload.tobytes())
    labels = np.asarray(labels, dtype=np.uint8)
    Path(path_labels).write_bytes(b"\x00\x00\x08\x01" + struct.pack(">I", len(labels)) + labels.tobytes())


# ---------------------------------------------------------------------------
# CIFAR-10 binary batches: 1 label byte + 3072 pixel bytes (R, G, B planes of 32x32)

CIFAR_RECORD = 3073


def load_cifar_binary(paths: Sequence, num_classes: int = 10) -> Dataset:
    if isinstance(paths, (str, Path)):
        paths = [paths]
    images, labels = [], []
    for path in paths:
        raw = Path(path).read_bytes()
        if len(raw) % CIFAR_RECORD:
            last = len(raw) - len(raw) % CIFAR_RECORD
            raise FormatError(f"{path}: truncated record starting at byte offset {last}")
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        labels.append(rec[:, 0].astype(np.int64))
        images.append(rec[:, 1:].reshape(-1, 3, 32, 32) / np.float32(255))
    if not images:
        return Dataset(np.zeros((0, 3, 32, 32), np.float32), np.zeros(0, np.int64), num_classes)
    return Dataset(np.concatenate(images).astype(np.float32), np.concatenate(labels), num_classes)


# ---------------------------------------------------------------------------
# synthetic desk-scale data

def _blur(a: np.ndarray, passes: int) -> np.ndarray:
    for _ in range(passes):
        p = np.pad(a, [(0, 0)] * (a.ndim - 2) + [(1, 1), (1, 1)], mode="wrap")
        a = (p[..., 1:-1, 1:-1] * 4 + p[..., :-2, 1:-1] + p[..., 2:, 1:-1] + p[..., 1:-1, :-2] + p[..., 1:-1, 2:]) / 8
    return a


def gen_synthetic(kind: str = "gaussians", n: int = 4000, num_classes: int = 5, seed: int = 0,
                  image_size: int = 8, margin: float = 1.0, noise: float = 0.1, channels: int = 1,
                  mixing: float = 0.35) -> Dataset:
    """Class-conditional patterns rendered into ``channels x image_size x image_size`` images.

    ``gaussians``: each class owns a smooth random template; an example is a
    class-weighted blend of all templates (weight ``margin`` on its own class,
    Gaussian weights of scale ``mixing`` on the others) plus pixel noise.
    ``rings``: a ring whose radius encodes the class, with a jittered centre.
    Larger ``margin`` means more separable classes.
    """
    if n < num_classes:
        raise ValueError(f"need n >= num_classes, got n={n}, C={num_classes}")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % num_classes)
    shape = (channels, image_size, image_size)
    if kind == "gaussians":
        templates = _blur(rng.normal(size=(num_classes, *shape)), 2)
        templates -= templates.mean(axis=(1, 2, 3), keepdims=True)
        templates /= templates.std(axis=(1, 2, 3), keepdims=True)
        weights = rng.normal(0.0, mixing, size=(n, num_classes))
        weights[np.arange(n), labels] += margin
        images = 0.5 + 0.12 * np.tensordot(weights, templates, axes=1)
    elif kind == "rings":
        grid = np.arange(image_size) - (image_size - 1) / 2
        yy, xx = np.meshgrid(grid, grid, indexing="ij")
        r_lo, r_hi = 0.8, image_size / 2 - 0.5
        radii = r_lo + (r_hi - r_lo) * labels / max(num_classes - 1, 1)
        radii = radii + rng.normal(0.0, mixing * (r_hi - r_lo) / num_classes / margin, size=n)
        centre = rng.normal(0.0, 0.5, size=(n, 2))
        dist = np.hypot(yy[None] - centre[:, :1, None], xx[None] - centre[:, 1:, None])
        ring = np.exp(-((dist - radii[:, None, None]) ** 2) / 0.5)
        images = 0.2 + 0.6 * np.repeat(ring[:, None], channels, axis=1)
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}; valid: gaussians, rings")
    images = images + rng.normal(0.0, noise, size=images.shape)
    return Dataset(np.clip(images, 0.0, 1.0).astype(np.float32), labels, num_classes, "synthetic")


# ---------------------------------------------------------------------------
# augmentation and batching

@dataclass(frozen=True)
class AugmentConfig:
    pad: int = 0
    crop: bool = False
    horizontal_flip_prob: float = 0.0

    def __post_init__(self):
        if self.pad < 0:
            raise ValueError(f"pad must be >= 0, got {self.pad}")
        if not 0.0 <= self.horizontal_flip_prob <= 1.0:
            raise ValueError("horizontal_flip_prob must lie in [0, 1]")

    @classmethod
    def standard(cls) -> "AugmentConfig":
        return cls(4, True, 0.5)


def augment(batch: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator | None = None,
            offsets: np.ndarray | None = None, flips: np.ndarray | None = None) -> np.ndarray:
    """Zero-pad + random crop back to size, then random horizontal flip.

    ``offsets`` (N x 2 crop corners in the padded frame) and ``flips`` (N bools)
    force the random choices.
    """
    n, _, h, w = batch.shape
    out = batch
    if cfg.crop and cfg.pad > 0:
        p = cfg.pad
        padded = np.pad(batch, ((0, 0), (0, 0), (p, p), (p, p)))
        if offsets is None:
            offsets = rng.integers(0, 2 * p + 1, size=(n, 2))
        out = np.stack([padded[i, :, a:a + h, b:b + w] for i, (a, b) in enumerate(offsets)])
    if cfg.horizontal_flip_prob > 0 or flips is not None:
        if flips is None:
            flips = rng.random(n) < cfg.horizontal_flip_prob
        out = np.where(np.asarray(flips)[:, None, None, None], out[..., ::-1], out)
    return np.ascontiguousarray(out, dtype=batch.dtype)


def batches(n: int, batch_size: int, rng: np.random.Generator | None = None) -> Iterator[np.ndarray]:
    """Index arrays covering ``range(n)`` once; shuffled by a seeded permutation when ``rng`` is given."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]
