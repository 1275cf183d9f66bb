"""Reader for the big-endian IDX files MNIST and Fashion-MNIST ship in.

Layout: a 4-byte magic ``0x00000803`` (images, unsigned bytes, 3 dims) or
``0x00000801`` (labels, 1 dim), then one 32-bit big-endian size per
dimension, then the raw bytes. Gzipped files are detected by their header.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from cafcor.errors import IdxFormatError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

MNIST_MEAN = 0.1307
MNIST_STD = 0.3081


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise IdxFormatError(f"{path}: corrupt gzip stream ({exc})") from None
    return raw


def parse_idx(raw: bytes, expected_magic: int | None = None, source: str = "<bytes>") -> np.ndarray:
    if len(raw) < 4:
        raise IdxFormatError(f"{source}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic not in (IMAGES_MAGIC, LABELS_MAGIC):
        raise IdxFormatError(f"{source}: bad magic 0x{magic:08x}")
    if expected_magic is not None and magic != expected_magic:
        raise IdxFormatError(f"{source}: expected magic 0x{expected_magic:08x}, got 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(f"{source}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header < count:
        raise IdxFormatError(f"{source}: truncated payload, need {count} bytes, have {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def read_idx(path, expected_magic: int | None = None) -> np.ndarray:
    """Return the raw ``uint8`` array stored in an IDX file."""
    return parse_idx(_read_bytes(path), expected_magic, str(path))


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as an uncompressed (or ``.gz``) IDX file."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = IMAGES_MAGIC if array.ndim == 3 else LABELS_MAGIC
    if array.ndim not in (1, 3):
        raise IdxFormatError("only 1-d label and 3-d image arrays are supported")
    payload = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape) + array.tobytes()
    path = Path(path)
    if path.suffix == ".gz":
        payload = gzip.compress(payload, mtime=0)
    path.write_bytes(payload)


def normalize_mnist(images: np.ndarray) -> np.ndarray:
    """Scale to [0, 1] then standardise with the usual MNIST statistics."""
    return (images.astype(np.float64) / 255.0 - MNIST_MEAN) / MNIST_STD


def hflip(images: np.ndarray) -> np.ndarray:
    return images[..., ::-1]
