"""PFM and PPM readers/writers for pixel grids.

PFM files are written little-endian (scale field -1.0), bottom row first as
the format requires. PPM files are binary P6, 8 bits per channel.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


def write_pfm(path, grid) -> None:
    grid = np.asarray(grid, dtype=np.float32)
    if grid.ndim == 3 and grid.shape[2] == 1:
        grid = grid[..., 0]
    if grid.ndim == 2:
        tag = b"Pf"
    elif grid.ndim == 3 and grid.shape[2] == 3:
        tag = b"PF"
    else:
        raise ValueError(f"PFM holds 1 or 3 channels, got shape {grid.shape}")
    if not np.all(np.isfinite(grid)):
        raise ValueError("refusing to write non-finite values")
    h, w = grid.shape[:2]
    body = np.ascontiguousarray(grid[::-1]).astype("<f4").tobytes()
    Path(path).write_bytes(tag + b"\n" + f"{w} {h}\n-1.0\n".encode() + body)


def _header_tokens(data: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end : end + 1].isspace():
            end += 1
        tokens.append(data[pos:end].decode("ascii"))
        pos = end
    return tokens, pos + 1


def read_pfm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (tag, w, h, scale), offset = _header_tokens(data, 4)
    if tag not in ("PF", "Pf"):
        raise ValueError(f"{path}: not a PFM file")
    w, h, scale = int(w), int(h), float(scale)
    channels = 3 if tag == "PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(data, dtype=dtype, count=w * h * channels, offset=offset)
    arr = arr.reshape((h, w, channels) if channels == 3 else (h, w))[::-1]
    return arr.astype(np.float64)


def write_ppm(path, image) -> None:
    img = np.asarray(image, dtype=float)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    if img.shape[2] != 3:
        raise ValueError("PPM needs 3 channels")
    q = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = q.shape[:2]
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + q.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (tag, w, h, maxval), offset = _header_tokens(data, 4)
    if tag != "P6" or int(maxval) != 255:
        raise ValueError(f"{path}: only 8-bit binary P6 is supported")
    w, h = int(w), int(h)
    arr = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=offset)
    return arr.reshape(h, w, 3).astype(np.float64) / 255.0
