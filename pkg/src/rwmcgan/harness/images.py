"""Binary PGM (P5) read/write for 8-bit grayscale images."""

import re
from pathlib import Path

import numpy as np

from ..errors import FormatError

_HEADER = re.compile(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s")


def to_bytes(image, lo=-1.0, hi=1.0):
    """Map values in [lo, hi] linearly onto 0..255 with rounding."""
    scaled = (np.asarray(image, dtype=np.float64) - lo) * (255.0 / (hi - lo))
    return np.clip(np.rint(scaled), 0, 255).astype(np.uint8)


def write_pgm(path, pixels):
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w = pixels.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


def read_pgm(path):
    buf = Path(path).read_bytes()
    m = _HEADER.match(buf)
    if m is None:
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    pixels = np.frombuffer(buf[m.end():], dtype=np.uint8)
    if pixels.size != w * h:
        raise FormatError(f"{path}: expected {w * h} pixels, found {pixels.size}")
    return pixels.reshape(h, w)
