"""On-disk artifact formats: CRDT tensors and PGM sample grids."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError, InvalidArgumentError

_TENSOR_MAGIC = b"CRDT"
_TENSOR_VERSION = 1


def write_tensor(path, tensor: np.ndarray):
    """CRDT format: magic, version u32, rank u32, dims u32, LE float64."""
    t = np.asarray(tensor, dtype=np.float64)
    if t.ndim == 0:
        raise FormatError("rank-0 tensors are not representable")
    with open(path, "wb") as f:
        f.write(_TENSOR_MAGIC)
        f.write(struct.pack("<II", _TENSOR_VERSION, t.ndim))
        f.write(struct.pack(f"<{t.ndim}I", *t.shape))
        f.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != _TENSOR_MAGIC:
        raise FormatError(f"bad tensor magic at byte 0: {blob[:4]!r}")
    off = 4
    try:
        version, rank = struct.unpack_from("<II", blob, off)
    except struct.error as exc:
        raise FormatError(f"truncated tensor header at byte {off}") from exc
    off += 8
    if version != _TENSOR_VERSION:
        raise FormatError(f"unsupported tensor version {version} at byte 4")
    if rank == 0:
        raise FormatError("rank-0 tensor at byte 8")
    try:
        dims = struct.unpack_from(f"<{rank}I", blob, off)
    except struct.error as exc:
        raise FormatError(f"truncated dims at byte {off}") from exc
    off += 4 * rank
    count = int(np.prod(dims))
    if off + 8 * count > len(blob):
        raise FormatError(f"truncated payload at byte {off}")
    data = np.frombuffer(blob, dtype="<f8", count=count, offset=off)
    if off + 8 * count != len(blob):
        raise FormatError(f"trailing bytes at offset {off + 8 * count}")
    return data.reshape(dims).copy()


def write_grid(path, images, columns: int):
    """Montage of equally shaped grayscale images as a binary PGM with
    1-pixel separators; values clamped to [0, 1] then scaled to 255.
    Clamping is flagged in a sidecar `.note` file."""
    images = [np.asarray(im, dtype=np.float64) for im in images]
    if not images:
        raise InvalidArgumentError("empty image set")
    if columns < 1:
        raise InvalidArgumentError("columns must be >= 1")
    shape = images[0].shape
    if any(im.shape != shape for im in images):
        raise InvalidArgumentError("all images must share one shape")

    clamped = any(im.min() < 0.0 or im.max() > 1.0 for im in images)
    h, w = shape
    rows = (len(images) + columns - 1) // columns
    gh = rows * h + (rows - 1)
    gw = columns * w + (columns - 1)
    grid = np.zeros((gh, gw))
    for i, im in enumerate(images):
        r, c = divmod(i, columns)
        grid[r * (h + 1):r * (h + 1) + h, c * (w + 1):c * (w + 1) + w] = \
            np.clip(im, 0.0, 1.0)
    pixels = np.round(grid * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{gw} {gh}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())
    if clamped:
        Path(str(path) + ".note").write_text("values clamped to [0, 1]\n")
