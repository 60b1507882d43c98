"""Minimal binary PPM (P6) / PGM (P5) reader and writer."""
import re
from pathlib import Path

import numpy as np

_HEADER = re.compile(rb"^(P[56])\s+(?:#[^\n]*\s+)*(\d+)\s+(?:#[^\n]*\s+)*(\d+)\s+(?:#[^\n]*\s+)*(\d+)\s")


class PnmError(ValueError):
    pass


def read_pnm(path):
    """Read a P5 or P6 file into a uint8/uint16 array ((H, W) or (H, W, 3))."""
    data = Path(path).read_bytes()
    m = _HEADER.match(data)
    if m is None:
        raise PnmError(f"{path}: not a binary PGM/PPM file")
    magic, w, h, maxval = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))
    if not 0 < maxval < 65536:
        raise PnmError(f"{path}: bad maxval {maxval}")
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    count = w * h * channels
    if len(data) - m.end() < count * dtype.itemsize:
        raise PnmError(f"{path}: truncated pixel data")
    body = np.frombuffer(data, dtype=dtype, count=count, offset=m.end())
    shape = (h, w, 3) if channels == 3 else (h, w)
    out = body.reshape(shape)
    return out.astype(np.uint16) if maxval > 255 else out.copy()


def write_ppm(path, rgb):
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + rgb.tobytes())


def write_pgm(path, gray):
    gray = np.asarray(gray)
    h, w = gray.shape
    if gray.dtype == np.uint16 or gray.max(initial=0) > 255:
        body = np.ascontiguousarray(gray, dtype=">u2").tobytes()
        header = b"P5\n%d %d\n65535\n" % (w, h)
    else:
        body = np.ascontiguousarray(gray, dtype=np.uint8).tobytes()
        header = b"P5\n%d %d\n255\n" % (w, h)
    Path(path).write_bytes(header + body)
