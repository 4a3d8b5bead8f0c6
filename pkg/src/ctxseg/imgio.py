"""8-bit image reading/writing and deterministic resampling.

PGM (P5) and PPM (P6) are parsed and written directly so dataset artifacts
round-trip bit-exactly; PNG decoding is delegated to Pillow. Resampling is
implemented here on float arrays with half-pixel centre sampling so loads
are reproducible across platforms.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .errors import DataError


def _read_pnm(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    if raw[:2] not in (b"P5", b"P6"):
        raise DataError(f"unsupported PNM magic in {path}")
    # header: magic, width, height, maxval, separated by whitespace/comments
    pos = 2
    fields = []
    while len(fields) < 3:
        m = re.match(rb"(?:\s+|#[^\n]*\n)*(\d+)", raw[pos:])
        if m is None:
            raise DataError(f"truncated PNM header in {path}")
        fields.append(int(m.group(1)))
        pos += m.end()
    width, height, maxval = fields
    if maxval > 255:
        raise DataError(f"{path}: only 8-bit PNM supported, maxval={maxval}")
    pos += 1  # single whitespace byte after maxval
    channels = 1 if raw[:2] == b"P5" else 3
    n = width * height * channels
    pixels = np.frombuffer(raw, dtype=np.uint8, count=n, offset=pos)
    if pixels.size != n:
        raise DataError(f"truncated PNM payload in {path}")
    img = pixels.reshape(height, width, channels)
    return img[:, :, 0] if channels == 1 else img


def read_image(path: str | Path) -> np.ndarray:
    """Load an 8-bit image as uint8, (H, W) for grayscale or (H, W, 3) for RGB."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"image not found: {path}")
    suffix = path.suffix.lower()
    if suffix in (".pgm", ".ppm"):
        return _read_pnm(path)
    if suffix == ".png":
        from PIL import Image

        with Image.open(path) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB" if im.mode in ("RGBA", "P", "CMYK") else "L")
            return np.asarray(im, dtype=np.uint8)
    raise DataError(f"unsupported image format: {path}")


def write_pgm(path: str | Path, arr: np.ndarray) -> None:
    """Write a (H, W) uint8 array as binary PGM."""
    arr = np.asarray(arr)
    if arr.ndim != 2 or arr.dtype != np.uint8:
        raise DataError(f"write_pgm needs a 2-D uint8 array, got {arr.shape} {arr.dtype}")
    h, w = arr.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + arr.tobytes())


def write_ppm(path: str | Path, arr: np.ndarray) -> None:
    """Write a (H, W, 3) uint8 array as binary PPM."""
    arr = np.asarray(arr)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise DataError(f"write_ppm needs a (H, W, 3) uint8 array, got {arr.shape} {arr.dtype}")
    h, w, _ = arr.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + arr.tobytes())


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample of (H, W) or (H, W, C) float data at half-pixel centres.

    When the output size equals the input size the samples land exactly on
    source pixels, so values pass through unchanged.
    """
    img = np.asarray(img, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    h, w, c = img.shape
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    out = top * (1 - wy) + bot * wy
    return out[:, :, 0] if squeeze else out


def resize_nearest_image(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbour resample picking the source pixel under each centre."""
    img = np.asarray(img)
    h, w = img.shape[:2]
    ys = np.minimum(((np.arange(out_h) + 0.5) * (h / out_h)).astype(int), h - 1)
    xs = np.minimum(((np.arange(out_w) + 0.5) * (w / out_w)).astype(int), w - 1)
    return img[ys][:, xs]
