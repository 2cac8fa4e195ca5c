"""Binary Netpbm I/O: PPM (P6, maxval 255) images and PGM (P5) masks."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def write_ppm(path, image: np.ndarray) -> None:
    """Write a (3, H, W) float image in [0, 1] as binary P6, 8-bit."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"write_ppm: expected (3, H, W), got {image.shape}")
    _, h, w = image.shape
    data = quantize8(image).transpose(1, 2, 0).tobytes()
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data)


def read_ppm(path) -> np.ndarray:
    """Read binary P6 back to (3, H, W) float32 in [0, 1]."""
    magic, w, h, maxval, raster = _read_netpbm(path)
    if magic != b"P6":
        raise ValueError(f"{path}: not a binary PPM (magic {magic!r})")
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    arr = np.frombuffer(raster, dtype=np.uint8, count=h * w * 3).reshape(h, w, 3)
    return (arr.transpose(2, 0, 1).astype(np.float32)) / np.float32(255.0)


def write_pgm(path, gray: np.ndarray) -> None:
    """Write an (H, W) array as binary P5.

    Boolean/binary masks are stored as {0, 255}; float arrays in [0, 1]
    (e.g. probability maps) are quantized to 8 bits.
    """
    if gray.ndim != 2:
        raise ValueError(f"write_pgm: expected (H, W), got {gray.shape}")
    h, w = gray.shape
    if gray.dtype == bool:
        data = np.where(gray, np.uint8(255), np.uint8(0))
    elif np.issubdtype(gray.dtype, np.integer):
        data = gray.astype(np.uint8)
    else:
        data = quantize8(gray)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read binary P5 to (H, W) uint8."""
    magic, w, h, maxval, raster = _read_netpbm(path)
    if magic != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {magic!r})")
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    return np.frombuffer(raster, dtype=np.uint8, count=h * w).reshape(h, w).copy()


def read_mask(path) -> np.ndarray:
    """Read a P5 mask to boolean (any value >= 128 counts as set)."""
    return read_pgm(path) >= 128


def quantize8(x: np.ndarray) -> np.ndarray:
    """Round a [0, 1] float array to uint8."""
    return np.clip(np.rint(np.asarray(x, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def _read_netpbm(path):
    raw = Path(path).read_bytes()
    fields: list[bytes] = []
    pos = 0
    # header = magic + 3 whitespace-separated integers, '#' comments allowed
    while len(fields) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated Netpbm header")
        fields.append(raw[start:pos])
    pos += 1  # single whitespace byte after maxval
    magic = fields[0]
    w, h, maxval = (int(f) for f in fields[1:4])
    return magic, w, h, maxval, raw[pos:]
