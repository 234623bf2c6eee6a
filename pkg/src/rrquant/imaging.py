"""Grayscale image I/O and resampling used by the super-resolution pipeline.

Images are float64 arrays scaled to [0, 1].
"""

import os
from pathlib import Path

import numpy as np
from PIL import Image

__all__ = [
    "bicubic_upsample",
    "box_downsample",
    "list_images",
    "psnr",
    "read_image",
    "write_pgm",
]

IMAGE_SUFFIXES = {".pgm", ".pnm", ".png", ".tif", ".tiff", ".bmp"}


def read_image(path) -> np.ndarray:
    """Read an 8- or 16-bit grayscale image (PGM P5 or any Pillow format)."""
    with Image.open(path) as im:
        if im.mode in ("I", "I;16", "I;16B", "I;16L"):
            return np.asarray(im, dtype=np.float64) / 65535.0
        if im.mode != "L":
            im = im.convert("L")
        return np.asarray(im, dtype=np.float64) / 255.0


def write_pgm(path, image, bits: int = 8) -> None:
    """Write a [0, 1] image as binary PGM; values are clipped and rounded.

    The file is written to a temporary name and renamed into place.
    """
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    maxval = 255 if bits == 8 else 65535
    q = np.rint(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * maxval)
    arr = q.astype(np.uint8 if bits == 8 else np.uint16)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    Image.fromarray(arr).save(tmp, format="PPM")
    os.replace(tmp, path)


def list_images(directory) -> list:
    """Image files of a directory in sorted name order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def box_downsample(image, factor: int) -> np.ndarray:
    """Average non-overlapping ``factor x factor`` blocks."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    if factor < 1 or h % factor or w % factor:
        raise ValueError(f"image size {h}x{w} is not divisible by factor {factor}")
    return image.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))


def _catmull_rom(x, a=-0.5):
    x = np.abs(x)
    return np.where(
        x < 1, (a + 2) * x**3 - (a + 3) * x**2 + 1,
        np.where(x < 2, a * x**3 - 5 * a * x**2 + 8 * a * x - 4 * a, 0.0))


def _cubic_matrix(n_in: int, n_out: int) -> np.ndarray:
    """``n_out x n_in`` interpolation matrix, pixel-center aligned, edge clamped."""
    scale = n_out / n_in
    pos = (np.arange(n_out) + 0.5) / scale - 0.5
    base = np.floor(pos).astype(int)
    frac = pos - base
    W = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    for k in range(-1, 3):
        idx = np.clip(base + k, 0, n_in - 1)
        np.add.at(W, (rows, idx), _catmull_rom(frac - k))
    return W


def bicubic_upsample(image, factor: int) -> np.ndarray:
    """Catmull-Rom bicubic interpolation by an integer factor."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    Wy = _cubic_matrix(h, h * factor)
    Wx = _cubic_matrix(w, w * factor)
    return Wy @ image @ Wx.T


def psnr(reference, estimate, peak: float = 1.0) -> float:
    mse = float(np.mean((np.asarray(reference) - np.asarray(estimate)) ** 2))
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(peak**2 / mse))
