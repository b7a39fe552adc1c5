"""File formats: PGM masks, LSV1 raw float arrays, and atomic text output.

PGM masks are binary ``P5`` files with maxval 255 whose gray levels are the
class indices.  LSV1 files are a 16-byte header (magic ``LSV1`` then
little-endian u32 height, width, channels) followed by little-endian
float64 values in row-major ``(height, width, channels)`` order.
"""

import os
import re
import struct
import tempfile
from pathlib import Path

import numpy as np

LSV1_MAGIC = b"LSV1"
_LSV1_HEADER = struct.Struct("<4sIII")


class FormatError(ValueError):
    """A file does not follow the expected binary layout."""


def atomic_write_text(path, text: str) -> Path:
    """Write ``text`` to a temporary file in the target directory, then rename it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _atomic_write_bytes(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


# -- PGM -----------------------------------------------------------------------

_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def write_pgm(path, mask) -> Path:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    if mask.size and (mask.min() < 0 or mask.max() > 255):
        raise ValueError("class indices must lie in [0, 255] for an 8-bit PGM")
    h, w = mask.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    return _atomic_write_bytes(path, header + mask.astype(np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a ``P5`` mask; returns int64 class indices of shape ``(h, w)``."""
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    for _ in range(4):
        match = _PGM_TOKEN.match(data, pos)
        if match is None:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(match.group(1))
        pos = match.end()
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: expected binary PGM (P5), got {tokens[0]!r}")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"{path}: malformed PGM header") from exc
    if maxval != 255:
        raise FormatError(f"{path}: expected maxval 255, got {maxval}")
    pos += 1  # the single whitespace byte that ends the header
    body = data[pos:]
    if len(body) != w * h:
        raise FormatError(f"{path}: expected {w * h} pixel bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).astype(np.int64)


# -- LSV1 ------------------------------------------------------------------------


def write_lsv1(path, array) -> Path:
    """Write a 2-D or 3-D float array (2-D arrays get one channel)."""
    a = np.asarray(array, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3:
        raise ValueError(f"array must be 2-D or 3-D, got shape {a.shape}")
    header = _LSV1_HEADER.pack(LSV1_MAGIC, *a.shape)
    return _atomic_write_bytes(path, header + a.astype("<f8").tobytes())


def read_lsv1(path) -> np.ndarray:
    """Read an LSV1 file as a ``(height, width, channels)`` float64 array."""
    data = Path(path).read_bytes()
    if len(data) < _LSV1_HEADER.size:
        raise FormatError(f"{path}: file shorter than the LSV1 header")
    magic, h, w, c = _LSV1_HEADER.unpack_from(data)
    if magic != LSV1_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    expected = h * w * c * 8
    body = data[_LSV1_HEADER.size :]
    if len(body) != expected:
        raise FormatError(f"{path}: expected {expected} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f8").reshape(h, w, c).astype(np.float64)
