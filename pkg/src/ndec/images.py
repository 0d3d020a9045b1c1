"""Float image buffers and binary PGM/PPM (P5/P6, 8-bit) I/O."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np


class ImageFormatError(ValueError):
    pass


@dataclass
class ImageBuffer:
    """Row-major float image with values in [0, 1], shape (H, W, channels)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ValueError(f"expected (H, W, 1|3) pixels, got {px.shape}")
        if px.shape[0] < 2 or px.shape[1] < 2:
            raise ValueError("images need width and height >= 2")
        if not np.isfinite(px).all() or px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("pixels must be finite and lie in [0, 1]")
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def gray(self) -> np.ndarray:
        """Luma (BT.601) for RGB, the single plane otherwise."""
        if self.channels == 1:
            return self.pixels[:, :, 0]
        return self.pixels @ np.array([0.299, 0.587, 0.114])


def _to_bytes(pixels: np.ndarray) -> bytes:
    return np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8).tobytes()


def write_pnm(path, img: ImageBuffer) -> None:
    """Write P5 (grayscale) or P6 (RGB) depending on the channel count."""
    magic = b"P5" if img.channels == 1 else b"P6"
    header = magic + b"\n%d %d\n255\n" % (img.width, img.height)
    with open(path, "wb") as fh:
        fh.write(header + _to_bytes(img.pixels))


def write_pgm_array(path, values: np.ndarray, vmin=None, vmax=None) -> None:
    """Write a 2-D float array as a grayscale PGM, linearly mapped to [0, 255]."""
    a = np.asarray(values, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    lo = a.min() if vmin is None else vmin
    hi = a.max() if vmax is None else vmax
    scaled = np.zeros_like(a) if hi <= lo else np.clip((a - lo) / (hi - lo), 0, 1)
    # PGM readers accept 1-pixel rows, ImageBuffer does not
    if scaled.shape[0] < 2:
        scaled = np.repeat(scaled, 2, axis=0)
    if scaled.shape[1] < 2:
        scaled = np.repeat(scaled, 2, axis=1)
    write_pnm(path, ImageBuffer(scaled))


def _read_token(data: bytes, pos: int):
    n = len(data)
    while pos < n:
        if data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif data[pos:pos + 1].isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise ImageFormatError("unexpected end of header")
    return data[start:pos], pos


def read_pnm(path) -> ImageBuffer:
    with open(path, "rb") as fh:
        data = fh.read()
    magic, pos = _read_token(data, 0)
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"unsupported magic {magic!r}")
    w, pos = _read_token(data, pos)
    h, pos = _read_token(data, pos)
    maxval, pos = _read_token(data, pos)
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise ImageFormatError("only 8-bit images are supported")
    pos += 1  # single whitespace byte after maxval
    ch = 1 if magic == b"P5" else 3
    payload = data[pos:pos + w * h * ch]
    if len(payload) != w * h * ch:
        raise ImageFormatError("truncated pixel payload")
    px = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, ch).astype(np.float64) / 255.0
    return ImageBuffer(px)


def save_images(directory, images) -> None:
    os.makedirs(directory, exist_ok=True)
    for i, img in enumerate(images):
        ext = "pgm" if img.channels == 1 else "ppm"
        write_pnm(os.path.join(directory, f"{i:06d}.{ext}"), img)


def load_images(directory) -> list:
    names = sorted(n for n in os.listdir(directory) if n.endswith((".pgm", ".ppm")))
    return [read_pnm(os.path.join(directory, n)) for n in names]
