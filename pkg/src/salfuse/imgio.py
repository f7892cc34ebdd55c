"""Raster I/O: 8-bit image loading, PNG rendering, atomic file writes."""

from __future__ import annotations

import io
import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InputError


def load_rgb(path: str | Path) -> np.ndarray:
    """Load an 8-bit image as an (H, W, 3) uint8 RGB array."""
    arr = _open(path, "RGB")
    return arr


def load_gray(path: str | Path) -> np.ndarray:
    """Load a single-channel 8-bit map as (H, W) float64 in [0, 1].

    Byte value v maps to v / 255.
    """
    arr = _open(path, "L")
    return arr.astype(np.float64) / 255.0


def load_mask(path: str | Path) -> np.ndarray:
    """Load a ground-truth mask; any nonzero byte counts as foreground."""
    arr = _open(path, "L")
    return arr > 0


def _open(path: str | Path, mode: str) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"file not found: {path}")
    try:
        with Image.open(path) as img:
            converted = img.convert(mode)
            arr = np.asarray(converted)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot decode image {path}: {exc}") from exc
    if arr.size == 0 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise InputError(f"zero-size image: {path}")
    return arr


def gray_png_bytes(arr: np.ndarray) -> bytes:
    """Render a [0, 1] float raster to 8-bit grayscale PNG bytes."""
    quantized = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(quantized, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def write_bytes_atomic(path: str | Path, data: bytes) -> None:
    """Write via a temp file + rename so readers never see partial output."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def write_text_atomic(path: str | Path, text: str) -> None:
    write_bytes_atomic(path, text.encode("utf-8"))


def save_gray_png(path: str | Path, arr: np.ndarray) -> None:
    write_bytes_atomic(path, gray_png_bytes(arr))
