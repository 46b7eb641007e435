"""Binary PPM (P6) / PGM (P5) reading and writing, 8-bit only."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .errors import FormatError

_HEADER = re.compile(rb"(P[56])\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


def quantize(image) -> np.ndarray:
    """byte = floor(clamp(v, 0, 1) * 255 + 0.5)"""
    return np.floor(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def encode_pnm(image) -> bytes:
    """Encode an HxW, HxWx1 or HxWx3 image in [0, 1] as PGM or PPM bytes."""
    a = np.asarray(image)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[:, :, 0]
    if a.ndim == 2:
        magic = b"P5"
    elif a.ndim == 3 and a.shape[2] == 3:
        magic = b"P6"
    else:
        raise FormatError(f"cannot encode image of shape {a.shape} as PPM/PGM")
    h, w = a.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode() + quantize(a).tobytes()


def write_pnm(path, image) -> None:
    Path(path).write_bytes(encode_pnm(image))


def decode_pnm(data: bytes):
    """Returns ``(kind, image)`` with image HxWxC float64 in [0, 1]."""
    m = _HEADER.match(data)
    if not m:
        raise FormatError("not a binary PPM/PGM file")
    kind = m.group(1).decode()
    w, h, maxval = int(m.group(2)), int(m.group(3)), int(m.group(4))
    if maxval != 255:
        raise FormatError(f"only 8-bit images are supported (maxval {maxval})")
    c = 3 if kind == "P6" else 1
    raw = data[m.end():]
    if len(raw) < w * h * c:
        raise FormatError(f"pixel data truncated: expected {w * h * c} bytes, got {len(raw)}")
    px = np.frombuffer(raw, dtype=np.uint8, count=w * h * c).reshape(h, w, c)
    return kind, px.astype(np.float64) / 255.0


def read_pnm(path):
    return decode_pnm(Path(path).read_bytes())


def tile(images, rows: int, cols: int) -> np.ndarray:
    """Row-major montage of equally sized HxWxC images."""
    images = [np.asarray(im) for im in images]
    if len(images) != rows * cols:
        raise ValueError(f"need {rows * cols} images, got {len(images)}")
    h, w, c = images[0].shape
    out = np.empty((rows * h, cols * w, c))
    for k, im in enumerate(images):
        r, q = divmod(k, cols)
        out[r * h:(r + 1) * h, q * w:(q + 1) * w] = im
    return out
