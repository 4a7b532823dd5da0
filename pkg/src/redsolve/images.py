"""Grayscale image files (binary PGM) and built-in synthetic phantoms.

PGM values are rescaled to [0, 1] on read and written as 16-bit samples.
Multi-byte PGM samples follow the format's most-significant-byte-first
convention so files open in standard viewers.
"""

from __future__ import annotations

import re

import numpy as np


def read_pgm(path: str) -> np.ndarray:
    """Read a binary (P5) PGM, 8- or 16-bit, rescaled to [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    # header: magic, width, height, maxval as whitespace-separated tokens,
    # with '#' comments allowed between them
    pos = 2
    tokens = []
    while len(tokens) < 3:
        m = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\d+)").match(data, pos)
        if m is None:
            raise ValueError(f"{path}: malformed PGM header")
        tokens.append(int(m.group(1)))
        pos = m.end()
    width, height, maxval = tokens
    if maxval < 1 or maxval > 65535:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height
    raw = data[pos : pos + count * dtype.itemsize]
    if len(raw) != count * dtype.itemsize:
        raise ValueError(f"{path}: truncated pixel data")
    img = np.frombuffer(raw, dtype=dtype).reshape(height, width)
    return img.astype(np.float64) / maxval


def write_pgm(path: str, img: np.ndarray) -> None:
    """Write a [0, 1] image as 16-bit binary PGM (values clipped)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("image must be 2D")
    clipped = np.clip(img, 0.0, 1.0)
    samples = np.round(clipped * 65535.0).astype(">u2")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(samples.tobytes())


# Ellipses of a Shepp-Logan style head phantom: (value, a, b, x0, y0, angle_deg)
# on the [-1, 1]^2 square, values accumulate where ellipses overlap.
_SHEPP_ELLIPSES = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
]


def shepp_phantom(size: int) -> np.ndarray:
    """Piecewise-constant head phantom on a size x size grid, values in [0, 1]."""
    if size < 2:
        raise ValueError("phantom size must be at least 2")
    coords = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    yy = -coords[:, None]  # row 0 is the top of the head
    xx = coords[None, :]
    img = np.zeros((size, size))
    for value, a, b, x0, y0, angle in _SHEPP_ELLIPSES:
        theta = np.deg2rad(angle)
        c, s = np.cos(theta), np.sin(theta)
        xr = (xx - x0) * c + (yy - y0) * s
        yr = -(xx - x0) * s + (yy - y0) * c
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += value
    return np.clip(img, 0.0, 1.0)


def checkerboard_phantom(size: int, tile: int | None = None) -> np.ndarray:
    """Two-level checkerboard (0.25 / 0.75) with `tile`-pixel squares."""
    if size < 2:
        raise ValueError("phantom size must be at least 2")
    if tile is None:
        tile = max(size // 8, 1)
    idx = np.arange(size) // tile
    board = (idx[:, None] + idx[None, :]) % 2
    return 0.25 + 0.5 * board.astype(np.float64)


def make_phantom(name: str) -> np.ndarray:
    """Resolve names like 'shepp32' or 'checker64' to a phantom image."""
    m = re.fullmatch(r"(shepp|checker)(\d+)", name)
    if m is None:
        raise ValueError(
            f"unknown phantom {name!r}; expected shepp<N> or checker<N>, e.g. shepp32"
        )
    kind, size = m.group(1), int(m.group(2))
    if kind == "shepp":
        return shepp_phantom(size)
    return checkerboard_phantom(size)
