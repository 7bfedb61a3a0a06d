"""Sample grids as binary PPM (P6) images."""
from __future__ import annotations

import os

import numpy as np

from .errors import UsageError

SEPARATOR = 2


def to_bytes(images) -> np.ndarray:
    """Map [-1, 1] to [0, 255] affinely, rounding half away from zero."""
    x = (np.clip(np.asarray(images, dtype=np.float64), -1.0, 1.0) + 1.0) * 127.5
    rounded = np.sign(x) * np.floor(np.abs(x) + 0.5)
    return np.clip(rounded, 0, 255).astype(np.uint8)


def tile(images, rows: int, cols: int) -> np.ndarray:
    """Arrange ``rows*cols`` CHW images row-major into one HWC uint8 canvas.

    Tiles are separated by 2-pixel black gutters; there is no outer border.
    """
    images = np.asarray(images)
    if rows < 1 or cols < 1:
        raise UsageError(f"grid needs rows, cols >= 1, got {rows}x{cols}")
    if images.ndim != 4 or images.shape[1] != 3 or images.shape[0] != rows * cols:
        raise UsageError(f"need {rows * cols} RGB images (n, 3, H, W), got {images.shape}")
    _, _, h, w = images.shape
    pix = to_bytes(images).transpose(0, 2, 3, 1)
    canvas = np.zeros((rows * h + SEPARATOR * (rows - 1), cols * w + SEPARATOR * (cols - 1), 3), np.uint8)
    for i in range(rows * cols):
        r, c = divmod(i, cols)
        top, left = r * (h + SEPARATOR), c * (w + SEPARATOR)
        canvas[top:top + h, left:left + w] = pix[i]
    return canvas


def ppm_bytes(canvas: np.ndarray) -> bytes:
    h, w, _ = canvas.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(canvas, np.uint8).tobytes()


def write_ppm(path, canvas: np.ndarray) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(ppm_bytes(canvas))
    os.replace(tmp, path)


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P6" or parts[2] != b"255":
        raise UsageError(f"{path} is not a P6 file written by this package")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], np.uint8).reshape(h, w, 3)
