"""IDX (MNIST) file reading and writing."""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


def _open(path: Path):
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path, expect_magic: int | None = None) -> np.ndarray:
    """Read an unsigned-byte IDX file into an array of its declared shape."""
    path = Path(path)
    with _open(path) as fh:
        data = fh.read()
    if len(data) < 4:
        raise IdxFormatError(f"{path}: offset 0: file shorter than the 4-byte magic")
    magic = struct.unpack(">I", data[:4])[0]
    if expect_magic is not None and magic != expect_magic:
        raise IdxFormatError(f"{path}: offset 0: magic 0x{magic:08x}, expected 0x{expect_magic:08x}")
    if magic >> 16 != 0 or (magic >> 8) & 0xFF != 0x08:
        raise IdxFormatError(f"{path}: offset 0: unsupported magic 0x{magic:08x} (need unsigned-byte IDX)")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(data) < header:
        raise IdxFormatError(f"{path}: offset 4: truncated dimension header")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    count = int(np.prod(dims)) if dims else 0
    if len(data) - header != count:
        raise IdxFormatError(
            f"{path}: offset {header}: payload has {len(data) - header} bytes, dimensions {dims} need {count}"
        )
    return np.frombuffer(data, dtype=np.uint8, offset=header).reshape(dims)


def read_images(path) -> np.ndarray:
    return read_idx(path, IMAGES_MAGIC)


def read_labels(path) -> np.ndarray:
    return read_idx(path, LABELS_MAGIC)


def write_idx(path, array) -> Path:
    arr = np.ascontiguousarray(array, dtype=np.uint8)
    path = Path(path)
    header = struct.pack(">I", 0x0800 | arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape)
    payload = header + arr.tobytes()
    if path.suffix == ".gz":
        # fixed mtime keeps the compressed bytes reproducible
        with open(path, "wb") as raw, gzip.GzipFile("", "wb", fileobj=raw, mtime=0) as fh:
            fh.write(payload)
    else:
        path.write_bytes(payload)
    return path
