"""Binary PGM (P5) reading and writing, plus optional PNG via Pillow."""
from __future__ import annotations

import os
import re
from pathlib import Path

import numpy as np

from .grid import UNIT_SQUARE, ScalarField2D

__all__ = ["ImageFormatError", "load_image", "save_image", "read_pgm", "write_pgm"]


class ImageFormatError(ValueError):
    pass


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _header_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens = []
    pos = 0
    while len(tokens) < count:
        m = _TOKEN.match(data, pos)
        if m is None:
            raise ImageFormatError("truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(data) or data[pos : pos + 1] not in b" \t\n\r":
        raise ImageFormatError("missing whitespace after PGM header")
    return tokens, pos + 1


def read_pgm(data: bytes) -> tuple[np.ndarray, int]:
    """Decode a binary PGM; returns ``(samples, maxval)`` with integer samples."""
    if data[:2] != b"P5":
        raise ImageFormatError(f"not a binary PGM (magic {data[:2]!r})")
    tokens, start = _header_tokens(data[2:], 3)
    start += 2
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ImageFormatError(f"malformed PGM header {tokens!r}") from exc
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise ImageFormatError(f"invalid PGM dimensions/maxval {width}x{height}/{maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    n = width * height * dtype.itemsize
    raster = data[start : start + n]
    if len(raster) < n:
        raise ImageFormatError(f"PGM raster truncated: {len(raster)} of {n} bytes")
    img = np.frombuffer(raster, dtype=dtype).reshape(height, width).astype(np.int64)
    if img.max(initial=0) > maxval:
        raise ImageFormatError("PGM sample exceeds maxval")
    return img, maxval


def write_pgm(samples: np.ndarray, maxval: int = 255) -> bytes:
    samples = np.asarray(samples)
    if samples.ndim != 2:
        raise ValueError("PGM needs a 2-D array")
    if not 0 < maxval < 65536:
        raise ValueError(f"invalid maxval {maxval}")
    if samples.min(initial=0) < 0 or samples.max(initial=0) > maxval:
        raise ValueError("samples out of range for maxval")
    h, w = samples.shape
    dtype = ">u2" if maxval > 255 else "u1"
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    return header + samples.astype(dtype).tobytes()


def _png_enabled() -> bool:
    return os.environ.get("SSIMLAB_PNG", "1") != "0"


def load_image(path, allow_png: bool | None = None) -> ScalarField2D:
    """Load a single-channel image as a field on the unit square with values in [0, 1].

    Pixel row ``i`` maps to the first grid axis, so ``values[i, j]`` is the
    pixel at row ``i``, column ``j``. PNG needs Pillow and can be turned off
    with ``SSIMLAB_PNG=0``.
    """
    path = Path(path)
    data = path.read_bytes()
    if data[:2] == b"P5":
        img, maxval = read_pgm(data)
    elif data[:8] == b"\x89PNG\r\n\x1a\n":
        if not (_png_enabled() if allow_png is None else allow_png):
            raise ImageFormatError("PNG support is disabled")
        try:
            from PIL import Image
        except ImportError as exc:  # pragma: no cover
            raise ImageFormatError("PNG support needs Pillow (pip install ssimlab[png])") from exc
        with Image.open(path) as im:
            if im.mode not in ("L", "I;16", "I;16B", "I"):
                im = im.convert("L")
            img = np.asarray(im).astype(np.int64)
            maxval = 255 if im.mode == "L" else 65535
    else:
        raise ImageFormatError(f"unsupported image format: {path}")
    field = ScalarField2D.from_array(img / maxval, UNIT_SQUARE, nonneg_checked=True)
    return field


def save_image(field: ScalarField2D | np.ndarray, path, maxval: int = 255) -> None:
    """Write a field with values in [0, 1] as a binary PGM."""
    values = field.values if isinstance(field, ScalarField2D) else np.asarray(field, dtype=np.float64)
    samples = np.rint(np.clip(values, 0.0, 1.0) * maxval).astype(np.int64)
    Path(path).write_bytes(write_pgm(samples, maxval))
