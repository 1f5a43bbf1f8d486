"""Image container conventions, PNG I/O, noise injection and PSNR.

Images are ``float64`` arrays shaped ``(channels, height, width)`` in display
scale ``[0, 255]``. Values may leave that range during optimization; clamping
only happens in :func:`save_image`.
"""

from __future__ import annotations

import math
import os

import numpy as np
from PIL import Image as PILImage

PSNR_CAP = 100.0


def as_image(data) -> np.ndarray:
    """Coerce ``data`` to a read-only ``(C, H, W)`` float64 array.

    2-D input is treated as a single-channel image.
    """
    arr = np.array(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise ValueError(f"expected (C, H, W) with C in {{1, 3}}, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Read an 8-bit grayscale or RGB PNG into a ``(C, H, W)`` float array."""
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no such image: {path}")
    with PILImage.open(path) as im:
        if im.format != "PNG":
            raise ValueError(f"{path}: expected PNG, got {im.format}")
        mode = im.mode
        if mode in ("L", "RGB"):
            arr = np.asarray(im)
        elif mode == "P":
            arr = np.asarray(im.convert("RGB"))
        elif mode in ("LA", "RGBA"):
            # alpha is dropped; the color data is still 8-bit
            arr = np.asarray(im.convert(mode[:-1]))
        else:
            raise ValueError(f"{path}: unsupported PNG mode {mode!r} (need 8-bit gray or RGB)")
    if arr.dtype != np.uint8:
        raise ValueError(f"{path}: unsupported bit depth ({arr.dtype})")
    arr = arr.astype(np.float64)
    if arr.ndim == 3:
        arr = arr.transpose(2, 0, 1)
    return as_image(arr)


def to_uint8(img: np.ndarray) -> np.ndarray:
    # np.rint rounds half to even; PNG quantization wants half-up
    return np.floor(np.clip(img, 0.0, 255.0) + 0.5).astype(np.uint8)


def save_image(img: np.ndarray, path: str | os.PathLike) -> None:
    img = as_image(img)
    q = to_uint8(img)
    if q.shape[0] == 1:
        out = PILImage.fromarray(q[0], mode="L")
    else:
        out = PILImage.fromarray(q.transpose(1, 2, 0), mode="RGB")
    out.save(path, format="PNG")


def add_gaussian_noise(img: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    """Add i.i.d. N(0, sigma^2) noise drawn from a PCG64 stream seeded by ``seed``."""
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    img = np.asarray(img, dtype=np.float64)
    if sigma == 0:
        return as_image(img)
    rng = np.random.Generator(np.random.PCG64(seed))
    return as_image(img + sigma * rng.standard_normal(img.shape))


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR in dB with MSE averaged over all samples of all channels.

    Returns :data:`PSNR_CAP` (100 dB) when the images are identical.
    """
    err = mse(a, b)
    if err == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(255.0**2 / err))
