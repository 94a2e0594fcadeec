"""Readers for the MNIST IDX container and the CIFAR-10 binary record format.

Both accept plain or gzip-compressed files.
"""

from __future__ import annotations

import gzip
import struct

import numpy as np

from ..model_runtime.dataset import Dataset

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DatasetFormatError(ValueError):
    pass


def _read(path) -> bytes:
    with open(path, "rb") as fh:
        head = fh.read(2)
        fh.seek(0)
        if head == b"\x1f\x8b":
            with gzip.open(fh) as gz:
                return gz.read()
        return fh.read()


def _idx_header(buf: bytes, magic: int, ndims: int, path) -> tuple[int, ...]:
    header_len = 4 + 4 * ndims
    if len(buf) < header_len:
        raise DatasetFormatError(f"{path}: truncated IDX header")
    (found,) = struct.unpack(">I", buf[:4])
    if found != magic:
        raise DatasetFormatError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    return struct.unpack(f">{ndims}I", buf[4:header_len])


def read_idx_images(path) -> np.ndarray:
    """uint8 array ``(n, rows, cols)``."""
    buf = _read(path)
    n, rows, cols = _idx_header(buf, IDX_IMAGES_MAGIC, 3, path)
    need = n * rows * cols
    if len(buf) - 16 < need:
        raise DatasetFormatError(f"{path}: truncated, {len(buf) - 16} pixel bytes for {n} images of {rows}x{cols}")
    return np.frombuffer(buf, dtype=np.uint8, count=need, offset=16).reshape(n, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    buf = _read(path)
    (n,) = _idx_header(buf, IDX_LABELS_MAGIC, 1, path)
    if len(buf) - 8 < n:
        raise DatasetFormatError(f"{path}: truncated, {len(buf) - 8} label bytes for {n} labels")
    return np.frombuffer(buf, dtype=np.uint8, count=n, offset=8)


def load_mnist_idx(images_path, labels_path, limit: int | None = None) -> Dataset:
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise DatasetFormatError(f"{len(images)} images in {images_path} but {len(labels)} labels in {labels_path}")
    if len(labels) and labels.max() > 9:
        raise DatasetFormatError(f"{labels_path}: label {labels.max()} outside 0..9")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    return Dataset(images[:, None, :, :].astype(np.float64) / 255.0, labels.astype(np.int64), 10)


CIFAR_RECORD = 1 + 3 * 32 * 32


def load_cifar_bin(path, limit: int | None = None) -> Dataset:
    """CIFAR-10 binary split: each record is a label byte then 3072 pixel bytes
    (red plane, green plane, blue plane, row-major)."""
    buf = _read(path)
    if len(buf) % CIFAR_RECORD:
        raise DatasetFormatError(f"{path}: {len(buf)} bytes is not a whole number of {CIFAR_RECORD}-byte records")
    records = np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    if limit is not None:
        records = records[:limit]
    labels = records[:, 0].astype(np.int64)
    if len(labels) and labels.max() > 9:
        raise DatasetFormatError(f"{path}: label {labels.max()} outside 0..9")
    images = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    return Dataset(images, labels, 10)
