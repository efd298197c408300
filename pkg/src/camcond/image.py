"""Grayscale image container, file I/O and patch tiling.

Pixel values are float64 digital numbers. Files hold 8-bit data in [0, 255];
in-flight images may leave that range and are only clamped when written.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

# ITU-R BT.601 luma weights for color -> gray conversion
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class GrayImage:
    """Single-channel image, row-major float64 array of digital numbers."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError(f"expected non-empty 2-D data, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains non-finite values")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class Patch:
    """Square window into a parent image; ``data`` is a read-only view."""

    x: int
    y: int
    size: int
    data: np.ndarray


def tile_patches(img: GrayImage, size: int, stride: int | None = None) -> list[Patch]:
    """Cut the image into square patches on a regular grid.

    Partial tiles at the right/bottom edge are dropped. ``stride`` defaults
    to ``size`` (non-overlapping tiling).
    """
    if stride is None:
        stride = size
    if size < 1 or stride < 1:
        raise ValueError("size and stride must be positive")
    if size > img.height or size > img.width:
        raise ValueError(f"patch size {size} exceeds image {img.width}x{img.height}")
    patches = []
    for y in range(0, img.height - size + 1, stride):
        for x in range(0, img.width - size + 1, stride):
            patches.append(Patch(x=x, y=y, size=size, data=img.data[y : y + size, x : x + size]))
    return patches


def clamp_quantize(img: GrayImage) -> np.ndarray:
    """Map float DN to uint8: round half to even, then clamp to [0, 255]."""
    return np.clip(np.round(img.data), 0.0, 255.0).astype(np.uint8)


def load_gray(path: str | Path) -> GrayImage:
    """Load a PNG or PGM file as grayscale.

    Color inputs are reduced with the BT.601 luma weights without
    re-quantization, so e.g. pure red (255, 0, 0) loads as 76.245 DN.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image: {path}")
    if path.suffix.lower() == ".pgm":
        return GrayImage(_read_pgm(path))
    with Image.open(path) as im:
        if im.mode == "P":
            im = im.convert("RGB")
        if im.mode in ("RGB", "RGBA"):
            rgb = np.asarray(im, dtype=np.float64)[..., :3]
            r, g, b = LUMA_WEIGHTS
            return GrayImage(r * rgb[..., 0] + g * rgb[..., 1] + b * rgb[..., 2])
        if im.mode in ("L", "LA"):
            if im.mode == "LA":
                im = im.convert("L")
            return GrayImage(np.asarray(im, dtype=np.float64))
        raise ValueError(f"unsupported image mode {im.mode!r} in {path}")


def save_gray(img: GrayImage, path: str | Path) -> None:
    """Quantize to 8 bit and write PNG or PGM, chosen by file suffix.

    The file is written atomically (temp file + rename).
    """
    path = Path(path)
    u8 = clamp_quantize(img)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        header = f"P5\n{u8.shape[1]} {u8.shape[0]}\n255\n".encode("ascii")
        _atomic_write(path, header + u8.tobytes())
    elif suffix == ".png":
        buf = io.BytesIO()
        Image.fromarray(u8, mode="L").save(buf, format="PNG")
        _atomic_write(path, buf.getvalue())
    else:
        raise ValueError(f"unsupported output format {suffix!r} (use .png or .pgm)")


def _atomic_write(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".part")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def _read_pgm(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    if not raw.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    # header tokens: magic, width, height, maxval; '#' starts a comment
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ValueError(f"{path}: malformed PGM header") from exc
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported, got maxval {maxval}")
    data = raw[pos : pos + width * height]
    if len(data) != width * height:
        raise ValueError(f"{path}: PGM payload truncated")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width).astype(np.float64)
