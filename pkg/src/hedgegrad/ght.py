"""GHT1 tensor file format.

Layout: magic ``GHTENSR1`` (8 bytes), u32 little-endian ndim, ndim u32
little-endian extents, then product-many 32-bit little-endian IEEE-754
floats in row-major order. Round-trips are bit-exact.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import StorageError, NonFiniteError, ValidationError

MAGIC = b"GHTENSR1"
MAX_RANK = 4


def header_size(ndim: int) -> int:
    return len(MAGIC) + 4 + 4 * ndim


def file_size(shape: tuple[int, ...]) -> int:
    """Total byte length of a GHT1 file holding a tensor of this shape."""
    n = 1
    for e in shape:
        n *= e
    return header_size(len(shape)) + 4 * n


def save(path, arr) -> None:
    arr = np.asarray(arr)
    if arr.ndim == 0 or arr.ndim > MAX_RANK:
        raise ValidationError(f"GHT1 rank must be 1..{MAX_RANK}, got {arr.ndim}")
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"refusing to write non-finite tensor to {path}")
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f4", copy=False).tobytes())
    except OSError as exc:
        raise StorageError(f"cannot write tensor file {path}: {exc}") from exc


def load(path) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise StorageError(f"cannot read tensor file {path}: {exc}") from exc
    if blob[: len(MAGIC)] != MAGIC:
        raise ValidationError(f"{path}: bad magic, not a GHT1 file")
    (ndim,) = struct.unpack_from("<I", blob, len(MAGIC))
    if ndim == 0 or ndim > MAX_RANK:
        raise ValidationError(f"{path}: rank {ndim} outside 1..{MAX_RANK}")
    shape = struct.unpack_from(f"<{ndim}I", blob, len(MAGIC) + 4)
    if any(e == 0 for e in shape):
        raise ValidationError(f"{path}: zero extent in shape {shape}")
    count = int(np.prod(shape))
    start = header_size(ndim)
    if len(blob) != start + 4 * count:
        raise ValidationError(
            f"{path}: payload length {len(blob) - start} != 4*{count} for shape {shape}"
        )
    arr = np.frombuffer(blob, dtype="<f4", count=count, offset=start)
    arr = arr.reshape(shape).astype(np.float32, copy=True)
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{path}: tensor contains NaN or Inf")
    return arr
