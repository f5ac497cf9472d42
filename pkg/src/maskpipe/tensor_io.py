"""Raster containers and bit-exact file I/O.

Three immutable container types cover the pipeline's data:

* :class:`ScoreMap`   -- H x W x C float32 per-pixel class scores,
* :class:`LabelMap`   -- H x W uint8 class indices (0 = background),
* :class:`BinaryMask` -- H x W booleans.

All three round-trip losslessly through the MFT container format
(see :func:`write_tensor` / :func:`read_tensor`); binary masks also
interchange with image tools as binary (P5) PGM files.

MFT layout, little-endian throughout::

    bytes 0..3    magic "MFT1"
    bytes 4..7    u32 dtype code (0 = f32, 1 = u8)
    bytes 8..11   u32 ndim (2 or 3)
    then          ndim x u32 dims, ordered height, width[, channels]
    then          row-major payload, dims-product x dtype-size bytes

No padding, no trailing bytes.  The (dtype, ndim) pair determines the
container kind: f32/3-D is a score map, u8/2-D a label map, and f32/2-D
a binary mask (stored as 0.0/1.0).  u8/3-D is not a defined kind.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    InvalidDimsError,
    TrailingDataError,
    TruncatedFileError,
    UnsupportedFormatError,
)

__all__ = [
    "ScoreMap",
    "LabelMap",
    "BinaryMask",
    "write_tensor",
    "read_tensor",
    "read_mask_pgm",
    "write_mask_pgm",
]

_MAGIC = b"MFT1"
_DTYPE_F32 = 0
_DTYPE_U8 = 1

# Refuse dim products that could not correspond to a real file.
_MAX_ELEMENTS = 1 << 60


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    if out is arr:
        out = arr.copy()
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class ScoreMap:
    """Per-pixel, per-class scores; channel 0 is reserved for background."""

    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 3:
            raise InvalidDimsError(f"score map must be H x W x C, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("score map contains non-finite values")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ScoreMap)
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Per-pixel class indices from a thresholded argmax; 0 is background."""

    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise InvalidDimsError(f"label map must be H x W, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            if not np.issubdtype(arr.dtype, np.integer):
                raise ValueError("label map values must be integers")
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise ValueError("label map values must fit in uint8")
            arr = arr.astype(np.uint8)
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, LabelMap)
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Foreground raster for a single class or instance."""

    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise InvalidDimsError(f"mask must be H x W, got shape {arr.shape}")
        object.__setattr__(self, "data", _freeze(arr.astype(bool)))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def area(self) -> int:
        return int(self.data.sum())

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, BinaryMask)
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
        )


Tensor = ScoreMap | LabelMap | BinaryMask


def _header_for(t: Tensor) -> tuple[int, np.ndarray]:
    if isinstance(t, ScoreMap):
        return _DTYPE_F32, t.data.astype("<f4")
    if isinstance(t, LabelMap):
        return _DTYPE_U8, t.data
    if isinstance(t, BinaryMask):
        return _DTYPE_F32, t.data.astype("<f4")
    raise TypeError(f"not a tensor container: {type(t).__name__}")


def write_tensor(t: Tensor, path: str | Path) -> None:
    """Serialize a container to an MFT file, bit-exactly.

    Raises InvalidDimsError for zero or u32-overflowing dimensions;
    filesystem failures propagate as OSError.
    """
    dtype_code, payload = _header_for(t)
    dims = payload.shape
    if any(d == 0 for d in dims):
        raise InvalidDimsError(f"cannot write tensor with zero dimension: {dims}")
    if any(d > 0xFFFFFFFF for d in dims):
        raise InvalidDimsError(f"dimension does not fit in u32: {dims}")
    header = _MAGIC + struct.pack("<II", dtype_code, len(dims))
    header += struct.pack(f"<{len(dims)}I", *dims)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def read_tensor(path: str | Path) -> Tensor:
    """Parse an MFT file back into its container kind.

    The (dtype, ndim) header pair selects the kind; malformed files
    raise BadMagicError, TruncatedFileError, TrailingDataError,
    InvalidDimsError or UnsupportedFormatError, never a partial tensor.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != _MAGIC:
        raise BadMagicError(f"not an MFT file: {path}")
    if len(blob) < 12:
        raise TruncatedFileError(f"MFT header incomplete: {path}")
    dtype_code, ndim = struct.unpack_from("<II", blob, 4)
    if dtype_code not in (_DTYPE_F32, _DTYPE_U8):
        raise UnsupportedFormatError(f"unknown MFT dtype code {dtype_code}: {path}")
    if ndim not in (2, 3):
        raise InvalidDimsError(f"MFT ndim must be 2 or 3, got {ndim}: {path}")
    dims_end = 12 + 4 * ndim
    if len(blob) < dims_end:
        raise TruncatedFileError(f"MFT dims incomplete: {path}")
    dims = struct.unpack_from(f"<{ndim}I", blob, 12)
    if any(d == 0 for d in dims):
        raise InvalidDimsError(f"zero dimension {dims}: {path}")
    n_elems = 1
    for d in dims:
        n_elems *= d
    if n_elems > _MAX_ELEMENTS:
        raise InvalidDimsError(f"dimension product overflows: {dims}")
    itemsize = 4 if dtype_code == _DTYPE_F32 else 1
    needed = n_elems * itemsize
    payload = blob[dims_end:]
    if len(payload) < needed:
        raise TruncatedFileError(
            f"payload has {len(payload)} bytes, dims {dims} need {needed}: {path}"
        )
    if len(payload) > needed:
        raise TrailingDataError(
            f"{len(payload) - needed} trailing bytes after payload: {path}"
        )
    if dtype_code == _DTYPE_F32:
        arr = np.frombuffer(payload, dtype="<f4").reshape(dims)
        if ndim == 3:
            return ScoreMap(arr)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"mask payload contains non-finite values: {path}")
        return BinaryMask(arr != 0)
    if ndim == 3:
        raise UnsupportedFormatError(f"u8 payload with 3 dims is not a defined kind: {path}")
    return LabelMap(np.frombuffer(payload, dtype=np.uint8).reshape(dims))


# --- PGM mask interchange -------------------------------------------------

def _pgm_tokens(blob: bytes, count: int, start: int) -> tuple[list[bytes], int]:
    """Read `count` whitespace-separated tokens, honoring '#' comments."""
    tokens: list[bytes] = []
    i = start
    while len(tokens) < count:
        while i < len(blob) and blob[i : i + 1].isspace():
            i += 1
        if i < len(blob) and blob[i] == ord("#"):
            while i < len(blob) and blob[i] != ord("\n"):
                i += 1
            continue
        j = i
        while j < len(blob) and not blob[j : j + 1].isspace() and blob[j] != ord("#"):
            j += 1
        if j == i:
            raise TruncatedFileError("PGM header ends before all fields are present")
        tokens.append(blob[i:j])
        i = j
    return tokens, i


def read_mask_pgm(path: str | Path) -> BinaryMask:
    """Load a binary (P5) PGM with maxval 255; pixels > 127 are foreground."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:2] != b"P5":
        raise UnsupportedFormatError(f"only binary P5 PGM is supported: {path}")
    fields, pos = _pgm_tokens(blob, 3, 2)
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise UnsupportedFormatError(f"non-numeric PGM header field: {path}") from exc
    if maxval != 255:
        raise UnsupportedFormatError(f"PGM maxval must be 255, got {maxval}: {path}")
    if width <= 0 or height <= 0:
        raise InvalidDimsError(f"bad PGM dimensions {width}x{height}: {path}")
    pos += 1  # exactly one whitespace byte separates header and raster
    raster = blob[pos:]
    if len(raster) < width * height:
        raise TruncatedFileError(f"PGM raster shorter than {width}x{height}: {path}")
    if len(raster) > width * height:
        raise TrailingDataError(f"PGM has bytes after the raster: {path}")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    return BinaryMask(pixels > 127)


def write_mask_pgm(mask: BinaryMask, path: str | Path) -> None:
    """Write a mask as binary PGM, foreground 255 / background 0."""
    header = f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii")
    payload = np.where(mask.data, 255, 0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())
