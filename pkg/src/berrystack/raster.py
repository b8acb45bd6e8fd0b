"""8-bit raster file I/O (PNG) for band images and segmentation masks."""

from __future__ import annotations

import os

import numpy as np
from PIL import Image

from .errors import FormatError


def load_gray8(path: str | os.PathLike) -> np.ndarray:
    """Load an image file as a (height, width) uint8 array."""
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("L"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read raster {path}: {exc}") from exc


def save_gray8(path: str | os.PathLike, pixels: np.ndarray) -> None:
    """Save a 2-D uint8 array as a lossless grayscale PNG."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 2 or pixels.dtype != np.uint8:
        raise ValueError(f"expected 2-D uint8 array, got {pixels.dtype} {pixels.shape}")
    Image.fromarray(pixels, mode="L").save(path, format="PNG")


def load_mask(path: str | os.PathLike) -> np.ndarray:
    """Load a mask raster; any nonzero pixel counts as a member."""
    return load_gray8(path) != 0
