"""Binary PPM (P6) and PGM (P5) read/write, 8-bit, maxval 255.

Frames and masks are exchanged as float arrays in [0, 1]; files store the
rounded 8-bit quantization, so arrays that are already multiples of 1/255
round-trip exactly.
"""

from __future__ import annotations

import numpy as np


def _quantize(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def _read_header(f, magic: bytes):
    got = f.read(2)
    if got != magic:
        raise ValueError(f"{f.name}: expected {magic.decode()}, found {got!r}")
    fields = []
    while len(fields) < 3:
        line = f.readline()
        if not line:
            raise ValueError(f"{f.name}: truncated header")
        body = line.split(b"#", 1)[0]
        fields.extend(int(tok) for tok in body.split())
    width, height, maxval = fields[:3]
    if maxval != 255:
        raise ValueError(f"{f.name}: only maxval 255 supported, got {maxval}")
    return width, height


def write_pgm(path, img: np.ndarray) -> None:
    """Write a (H, W) array in [0, 1] as binary PGM."""
    data = _quantize(img)
    if data.ndim != 2:
        raise ValueError(f"PGM needs a 2-D array, got shape {data.shape}")
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM into a float32 (H, W) array in [0, 1]."""
    with open(path, "rb") as f:
        w, h = _read_header(f, b"P5")
        data = np.frombuffer(f.read(w * h), dtype=np.uint8)
    if data.size != w * h:
        raise ValueError(f"{path}: truncated pixel data")
    return (data.reshape(h, w).astype(np.float32) / 255.0)


def write_ppm(path, img: np.ndarray) -> None:
    """Write a (H, W, 3) array in [0, 1] as binary PPM."""
    data = _quantize(img)
    if data.ndim != 3 or data.shape[2] != 3:
        raise ValueError(f"PPM needs a (H, W, 3) array, got shape {data.shape}")
    h, w, _ = data.shape
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM into a float32 (H, W, 3) array in [0, 1]."""
    with open(path, "rb") as f:
        w, h = _read_header(f, b"P6")
        data = np.frombuffer(f.read(w * h * 3), dtype=np.uint8)
    if data.size != w * h * 3:
        raise ValueError(f"{path}: truncated pixel data")
    return (data.reshape(h, w, 3).astype(np.float32) / 255.0)
