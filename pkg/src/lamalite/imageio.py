"""8-bit PNG images and binary PGM masks. Quantization happens only here."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def from_uint8(arr: np.ndarray) -> np.ndarray:
    return np.asarray(arr, dtype=np.float64) / 255.0


def write_png(path, img: np.ndarray) -> None:
    """``img``: 3 x H x W floats in [0, 1], or H x W x 3 / H x W uint8."""
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        arr = to_uint8(arr)
    if arr.ndim == 3 and arr.shape[0] == 3:
        arr = arr.transpose(1, 2, 0)
    Image.fromarray(np.ascontiguousarray(arr)).save(Path(path), format="PNG")


def read_png(path) -> np.ndarray:
    """3 x H x W uint8."""
    with Image.open(Path(path)) as im:
        arr = np.asarray(im.convert("RGB"))
    return arr.transpose(2, 0, 1).copy()


def write_pgm(path, mask: np.ndarray) -> None:
    """Binary mask (1 = known) as 8-bit PGM: 255 known, 0 missing."""
    data = np.where(np.asarray(mask) > 0, 255, 0).astype(np.uint8)
    Image.fromarray(data, mode="L").save(Path(path), format="PPM")


def read_pgm(path) -> np.ndarray:
    """H x W uint8 mask in {0, 1}; gray levels above 127 count as known."""
    with Image.open(Path(path)) as im:
        arr = np.asarray(im.convert("L"))
    return (arr > 127).astype(np.uint8)
