"""8-bit image writers: binary PPM (P6) and PNG."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

__all__ = ["to_uint8", "write_ppm", "write_png", "write_image", "read_image"]


def to_uint8(image01) -> np.ndarray:
    """Quantize an (H, W, 3) float image: clamp to [0, 1], round(channel * 255)."""
    arr = np.asarray(image01, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got {arr.shape}")
    return np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path, image01) -> None:
    data = to_uint8(image01)
    h, w, _ = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def write_png(path, image01) -> None:
    Image.fromarray(to_uint8(image01), mode="RGB").save(path, format="PNG")


def write_image(path, image01) -> None:
    """Pick the format from the suffix (.ppm or .png)."""
    suffix = Path(path).suffix.lower()
    if suffix == ".ppm":
        write_ppm(path, image01)
    elif suffix == ".png":
        write_png(path, image01)
    else:
        raise ValueError(f"unsupported image format {suffix!r} (use .ppm or .png)")


def read_image(path) -> np.ndarray:
    """Load an image back to float (H, W, 3) in [0, 1]."""
    suffix = Path(path).suffix.lower()
    if suffix == ".ppm":
        with open(path, "rb") as fh:
            magic = fh.readline().strip()
            if magic != b"P6":
                raise ValueError("not a binary PPM file")
            dims = fh.readline().split()
            w, h = int(dims[0]), int(dims[1])
            maxval = int(fh.readline())
            data = np.frombuffer(fh.read(w * h * 3), dtype=np.uint8)
        return data.reshape(h, w, 3).astype(np.float64) / maxval
    img = np.asarray(Image.open(path).convert("RGB"))
    return img.astype(np.float64) / 255.0
